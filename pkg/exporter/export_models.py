#!/usr/bin/env python3
"""Entry script; see model_export.cli for options."""

import sys

from model_export.cli import main

if __name__ == "__main__":
    sys.exit(main())
