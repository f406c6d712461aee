import sys

from decoupler.cli import main

sys.exit(main())
