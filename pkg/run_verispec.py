"""
Run the verispec command-line interface from a source checkout.

Usage:
    python run_verispec.py syntax tests/fixtures/counter.v
    python run_verispec.py corpus --input data/corpus --output artifacts/dataset.jsonl
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from verispec.cli import main

if __name__ == "__main__":
    sys.exit(main())
