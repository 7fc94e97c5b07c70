#!/usr/bin/env python
"""
focalsplat.py - run the focalsplat command line without installing.

See focalsplat.py --help, and focalsplat.py <command> --help.
"""

import os, sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), '..'))

from FocalSplat.Commands import main

if __name__ == "__main__": sys.exit(main())
