import sys

from chromaquery.cqcli import main

sys.exit(main())
