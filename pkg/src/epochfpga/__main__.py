from epochfpga.cli import main
import sys
sys.exit(main())
