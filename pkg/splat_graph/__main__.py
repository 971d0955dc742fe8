import sys

from splat_graph.cli.main import main

sys.exit(main())
