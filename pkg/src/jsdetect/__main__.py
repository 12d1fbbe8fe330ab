import sys

from jsdetect.cli import main

sys.exit(main())
