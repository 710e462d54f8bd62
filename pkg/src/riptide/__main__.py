import sys

from riptide.cli import main

sys.exit(main())
