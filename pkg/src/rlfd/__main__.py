import sys

from rlfd.cli import main

sys.exit(main())
