#!/usr/bin/env python
"""
Entry point script to run the CATE benchmarking command line.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'src'))

from main import main

if __name__ == "__main__":
    # Call the main function with command line arguments
    sys.exit(main())
