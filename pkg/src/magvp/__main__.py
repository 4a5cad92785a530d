import sys

from magvp.cli import main

sys.exit(main())
