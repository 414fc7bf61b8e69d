"""``python3 -m phihp`` — same entry point as the ``phihp`` console script."""

from .cli import main

if __name__ == "__main__":
    raise SystemExit(main())
