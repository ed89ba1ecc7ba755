from ghvit.main import main

raise SystemExit(main())
