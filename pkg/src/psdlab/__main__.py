import sys

from psdlab.main import main

sys.exit(main())
