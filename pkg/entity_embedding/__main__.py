"""Allow ``python -m entity_embedding``."""

import sys

from .cli import main

sys.exit(main())
