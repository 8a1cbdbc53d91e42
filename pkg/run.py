#!/usr/bin/env python3
"""Entry point for prune-lab.

Usage:
    python run.py train --config configs/default.json
    python run.py sweep --config configs/default.json --scope components --jobs 4
"""

import sys

from app.main import main


if __name__ == "__main__":
    sys.exit(main())
