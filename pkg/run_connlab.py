#!/usr/bin/env python3
"""
Entry point for the connlab command line.

Usage:
    python run_connlab.py gen-data --nodes 25 --subjects 500 --seed 7 --out data/ref
    python run_connlab.py cv --data data/ref --layers 1,2,3 --neurons 20,50 --permutations 10
    python run_connlab.py --help
"""

import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
