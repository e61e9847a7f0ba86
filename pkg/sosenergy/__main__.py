import sys

from sosenergy.cli import main

sys.exit(main())
