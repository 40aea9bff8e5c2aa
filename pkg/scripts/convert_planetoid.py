#!/usr/bin/env python3
"""Convert classic citation files (cora.content + cora.cites) to a bundle.

Thin wrapper over `growgcn prepare planetoid` so the conversion is runnable
without installing the console script.

    python scripts/convert_planetoid.py --content cora.content \
        --cites cora.cites --out data/cora
"""

import sys

from growgcn.cli import main

if __name__ == "__main__":
    sys.exit(main(["prepare", "planetoid", *sys.argv[1:]]))
