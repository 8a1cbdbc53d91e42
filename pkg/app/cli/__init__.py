"""Command handlers behind the ``prune-lab`` sub-commands."""

from app.cli.commands import cmd_train, cmd_diagnose, cmd_sweep, cmd_compress, cmd_report

__all__ = ["cmd_train", "cmd_diagnose", "cmd_sweep", "cmd_compress", "cmd_report"]
