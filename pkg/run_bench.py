#!/usr/bin/env python3
"""
Launcher script for Trip Privacy Bench.
"""

import sys

from trip_privacy_bench.main import main

if __name__ == "__main__":
    sys.exit(main())
