import sys

from qfacts.cli import main

sys.exit(main())
