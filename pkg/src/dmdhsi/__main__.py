import sys

from dmdhsi.cli import main

sys.exit(main())
