import sys

from rbopo.cli import main

sys.exit(main())
