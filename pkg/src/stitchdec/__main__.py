import sys

from stitchdec.cli import main

sys.exit(main())
