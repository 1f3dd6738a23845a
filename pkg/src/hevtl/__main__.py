import sys

from hevtl.cli import main

sys.exit(main())
