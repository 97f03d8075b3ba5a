"""Entry point for running the aspr package as a module."""
import sys

from .app import run


if __name__ == "__main__":
    sys.exit(run())
