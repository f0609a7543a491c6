import sys

from dvevio.cli import main

sys.exit(main())
