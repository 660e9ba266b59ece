#!/usr/bin/env python3
"""PQN experiments from the command line.

Usage: venv/bin/python scripts/pqn_cli.py {generate,train,evaluate,perturb,report} [flags]
"""

import os
import sys

PROJECT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, PROJECT)

from core.cli import cli_run  # noqa: E402

if __name__ == "__main__":
    sys.exit(cli_run(sys.argv[1:]))
