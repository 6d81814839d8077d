import sys

from privsplit.harness.cli import main

sys.exit(main())
