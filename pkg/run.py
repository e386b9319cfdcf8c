#!/usr/bin/env python3
"""
Launcher for the scatterlab CLI from a source checkout.

    ./run.py eta --config configs/eta_right_angle.json
"""
import sys

from scatterlab.cli import main

if __name__ == "__main__":
    sys.exit(main())
