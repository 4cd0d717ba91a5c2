import sys

from dyndiff.cli import main

sys.exit(main())
