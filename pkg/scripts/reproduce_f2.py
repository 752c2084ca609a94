"""Desk-scale f2 comparison at scale 0.1: 5000 samples, 200 epochs, batch 2500.

Pass ``--scale 1`` for the full 50000-sample, 2000-epoch run (many CPU hours).
"""

import sys

from polyformer.cli import main

if __name__ == "__main__":
    sys.exit(main(["reproduce", "f2", "--scale", "0.1", "--out-dir", "runs/f2", *sys.argv[1:]]))
