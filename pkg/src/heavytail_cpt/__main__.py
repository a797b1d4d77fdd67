import sys

from heavytail_cpt.cli import main

sys.exit(main())
