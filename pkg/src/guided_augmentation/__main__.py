"""Entry point for running the package as a module (python -m guided_augmentation)."""

import sys

from guided_augmentation.cli import main

if __name__ == "__main__":
    sys.exit(main())
