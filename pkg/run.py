#!/usr/bin/env python3
"""
DVDF Bench
Run this file with a subcommand, e.g. ``python run.py bench --n-instances 200``.
"""

import sys

from app import create_app
from app.cli import main

app = create_app()

if __name__ == '__main__':
    sys.exit(main(parser=app))
