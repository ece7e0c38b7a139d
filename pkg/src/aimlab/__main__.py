"""``python -m aimlab`` dispatches to the experiment harness."""

import sys

from .cli import main

sys.exit(main())
