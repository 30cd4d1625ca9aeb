import sys

from solitonforge.main import main

if __name__ == "__main__":
    sys.exit(main())
