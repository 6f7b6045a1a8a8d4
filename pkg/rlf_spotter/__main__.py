"""Run the command-line interface with python -m rlf_spotter."""
import sys

from .cli import main

sys.exit(main())
