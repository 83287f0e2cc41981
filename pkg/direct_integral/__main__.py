"""Run the command line with ``python -m direct_integral``."""
import sys

from .cli import main

sys.exit(main())
