"""mandel: a multi-agent research-idea pipeline with a design-tool debug loop.

Subsystems: agent-turn grammar (protocol), design-tool config handling
(configschema), chat backends with record/replay (llmbackend), literature
access (literature), tool invocation (toolrunner), append-only persistence
(store), the orchestration state machine (agents), campaign statistics
(analytics), and the operator CLI (cli).
"""

__version__ = "0.1.0"
