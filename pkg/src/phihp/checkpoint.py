"""Named-array checkpoints: a single .npz plus a JSON metadata blob.

float64 arrays round-trip bitwise through .npy encoding, so a reloaded
checkpoint reproduces the saved model exactly.
"""

import json

import numpy as np

FORMAT_VERSION = 1
_META_KEY = "__meta__"


def save(path, arrays, meta=None):
    """Write ``arrays`` (name -> ndarray) and a JSON-able ``meta`` dict."""
    payload = dict(arrays)
    if _META_KEY in payload:
        raise ValueError(f"array name {_META_KEY!r} is reserved")
    blob = json.dumps({"version": FORMAT_VERSION, "meta": meta or {}},
                      sort_keys=True)
    payload[_META_KEY] = np.frombuffer(blob.encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load(path):
    """Read back (arrays, meta); raises on unknown format versions."""
    with np.load(path) as data:
        payload = {k: data[k] for k in data.files}
    blob = json.loads(payload.pop(_META_KEY).tobytes().decode())
    if blob["version"] != FORMAT_VERSION:
        raise ValueError(f"checkpoint format {blob['version']} not supported")
    return payload, blob["meta"]
