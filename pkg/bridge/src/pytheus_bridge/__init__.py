"""Subprocess shim between the campaign engine and the PyTheus package.

Launched as ``pytheus-bridge <config-path> <workdir>``; prints exactly one
line of JSON on stdout (``status`` / ``message`` / ``artifacts``) and exits
0 on success, nonzero otherwise.  Everything else -- tool chatter, full
tracebacks -- goes to stderr and to ``bridge.log`` in the workdir.
"""

from .bridge import main, run_bridge

__all__ = ["main", "run_bridge"]
__version__ = "0.1.0"
