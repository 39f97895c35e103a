#!/usr/bin/env python3
"""
Main entry point for the scenario runner
"""

import sys
import os

# Make the package importable when run from a checkout
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from coherent_mb.cli import main

if __name__ == '__main__':
    sys.exit(main())
