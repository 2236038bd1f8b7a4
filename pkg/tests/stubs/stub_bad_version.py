"""Backend announcing an unsupported protocol version."""

import json
import sys


def main():
    print(json.dumps({"parallel_safe": False, "protocol": "2"}), flush=True)
    sys.stdin.read()


if __name__ == "__main__":
    main()
