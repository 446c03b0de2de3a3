import sys

from atomic_timing.cli import main

sys.exit(main())
