import sys

from semiadv.cli import main

sys.exit(main())
