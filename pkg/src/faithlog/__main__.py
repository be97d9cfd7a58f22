import sys

from faithlog.cli import main

sys.exit(main())
