"""Full-size f1 comparison: 10000 samples, 600 epochs, batch 5000.

Extra arguments are passed through to ``polyformer reproduce f1``.
"""

import sys

from polyformer.cli import main

if __name__ == "__main__":
    sys.exit(main(["reproduce", "f1", "--out-dir", "runs/f1", *sys.argv[1:]]))
