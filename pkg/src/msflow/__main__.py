"""``python -m msflow simrun ...`` or ``python -m msflow simsweep ...``."""
import sys

from .cli import simrun, simsweep

COMMANDS = {"simrun": simrun, "simsweep": simsweep}

if __name__ == "__main__":
    if len(sys.argv) < 2 or sys.argv[1] not in COMMANDS:
        print(f"usage: python -m msflow {{{','.join(COMMANDS)}}} ...", file=sys.stderr)
        sys.exit(2)
    sys.exit(COMMANDS[sys.argv[1]](sys.argv[2:]))
