"""Allow running as python -m feature_graph_lab."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
