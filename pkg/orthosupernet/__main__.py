import sys

from orthosupernet.cli import main


sys.exit(main())
