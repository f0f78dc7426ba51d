import sys

from graspview.harness.cli import main

sys.exit(main())
