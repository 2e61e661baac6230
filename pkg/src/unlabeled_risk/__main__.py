import sys

from unlabeled_risk.main import main

sys.exit(main())
