from tpcinr.cli import main

raise SystemExit(main())
