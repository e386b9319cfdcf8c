import sys

from scatterlab.cli import main

sys.exit(main())
