import sys

from divlab.cli import main

sys.exit(main())
