"""Application entry point.

Runs the ``rex`` command line from a source checkout without installing the
package, e.g. ``python main.py train --config docs/example_config.json``.
"""

from __future__ import annotations

import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent

if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from rex.interfaces.cli import main  # noqa: E402  (import after path setup)


if __name__ == "__main__":
    sys.exit(main())
