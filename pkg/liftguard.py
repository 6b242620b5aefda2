#!/usr/bin/env python3
"""
Launcher for the LiftGuard command-line interface.
Usage: python liftguard.py <command> [options]; see --help.
"""

import sys
from pathlib import Path

# Add the project root to the path
sys.path.insert(0, str(Path(__file__).parent))

from core.cli import main

if __name__ == '__main__':
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted")
        sys.exit(1)
