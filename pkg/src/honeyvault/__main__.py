import sys

from honeyvault.cli import main

sys.exit(main())
