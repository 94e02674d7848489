#!/usr/bin/env python3
"""
emabench - EMA and SWA weight averaging experiments

Usage:
    python emabench.py train --config base --seed 0
    python emabench.py report runs/base
    python emabench.py --help
"""

import sys
from src.main import main

if __name__ == "__main__":
    sys.exit(main())
