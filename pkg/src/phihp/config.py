"""Flat key=value configuration: flatten, parse, apply, and hash.

A run configuration is a small tree of dataclasses.  Files and CLI
overrides address leaves with dotted names (``plan.horizon=5``); unknown
keys are hard errors so a typo cannot silently run the defaults.  The hash
of the resolved flat form is embedded in every output file for provenance.
"""

import dataclasses
import hashlib


def _is_leaf(value):
    return not dataclasses.is_dataclass(value)


def flatten(cfg, prefix=""):
    """Dataclass tree -> {dotted_key: value} with deterministic key order."""
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        key = f"{prefix}{f.name}"
        if _is_leaf(value):
            out[key] = value
        else:
            out.update(flatten(value, prefix=key + "."))
    return out


def _parse_scalar(text, like):
    if isinstance(like, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if like is None or isinstance(like, str):
        return text
    raise TypeError(f"cannot parse override for value of type {type(like)!r}")


def apply_overrides(cfg, overrides):
    """Return a copy of the dataclass tree with dotted-key overrides applied.

    Every key must name an existing leaf; values are parsed to the leaf's
    current type (strings pass through).
    """
    cfg = dataclasses.replace(cfg)
    known = flatten(cfg)
    for key, raw in overrides.items():
        if key not in known:
            raise KeyError(f"unknown config key {key!r}")
        parts = key.split(".")
        node = cfg
        for part in parts[:-1]:
            child = dataclasses.replace(getattr(node, part))
            setattr(node, part, child)
            node = child
        value = raw if not isinstance(raw, str) else _parse_scalar(raw, known[key])
        setattr(node, parts[-1], value)
    return cfg


def parse_file(path):
    """Read ``key = value`` lines; '#' starts a comment; blank lines ignored."""
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def render(items):
    """Serialize a flat mapping back to the file format, sorted by key."""
    return "".join(f"{k} = {items[k]}\n" for k in sorted(items))


def config_hash(items):
    """Order-independent sha256 over the resolved flat configuration."""
    digest = hashlib.sha256()
    for k in sorted(items):
        digest.update(f"{k}={items[k]!r}\n".encode())
    return digest.hexdigest()
