"""Run the backdoor lab from a source checkout: ``python istr_app.py run --config ... --out ...``."""

import sys

from istr.pipeline.cli import main

if __name__ == "__main__":
    sys.exit(main())
