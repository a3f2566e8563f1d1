"""Allow running the command-line interface via ``python -m coagfrag``."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
