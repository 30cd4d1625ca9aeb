import sys

from solitonforge.main import main

sys.exit(main())
