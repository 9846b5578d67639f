"""Protocol server that reads requests and never answers."""
import sys

for _ in sys.stdin:
    pass
