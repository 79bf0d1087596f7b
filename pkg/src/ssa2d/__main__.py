"""Command-line entry point for SSA2D."""

from __future__ import annotations

from .cli import run_from_cli


def main() -> None:
    raise SystemExit(run_from_cli())


if __name__ == "__main__":
    main()
