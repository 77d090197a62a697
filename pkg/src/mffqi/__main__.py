import sys

from mffqi.harness.cli import main

sys.exit(main())
