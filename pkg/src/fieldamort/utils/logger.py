"""Logger utility."""

import sys


class Logger:
    # Progress lines are dropped when quiet; errors always go to stderr.
    quiet = False

    @staticmethod
    def info(msg: str):
        if not Logger.quiet:
            print(f"[INFO] {msg}")

    @staticmethod
    def success(msg: str):
        if not Logger.quiet:
            print(f"[OK] {msg}")

    @staticmethod
    def error(msg: str):
        print(f"[ERROR] {msg}", file=sys.stderr)

    @staticmethod
    def step(num, msg: str):
        if not Logger.quiet:
            print(f"[Step {num}] {msg}")

    @staticmethod
    def warning(msg: str):
        if not Logger.quiet:
            print(f"[WARNING] {msg}")
