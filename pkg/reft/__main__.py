import sys

from reft.cli import main

sys.exit(main())
