import sys

from rcg_uda.cli import main

if __name__ == "__main__":
    sys.exit(main())
