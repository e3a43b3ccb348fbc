import sys

from jarzmle.cli import main

sys.exit(main())
