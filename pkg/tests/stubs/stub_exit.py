"""Backend that handshakes, reads one request, then exits without replying."""

import json
import sys


def main():
    print(json.dumps({"parallel_safe": False, "protocol": "1"}), flush=True)
    sys.stdin.readline()
    sys.exit(3)


if __name__ == "__main__":
    main()
