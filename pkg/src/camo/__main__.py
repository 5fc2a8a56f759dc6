import sys

from camo.cli import main

sys.exit(main())
