"""Tool registry and agent loop for document-to-deck generation."""

from .loop import (  # noqa: F401
    AgentTurn,
    IterationLimitError,
    Transcript,
    load_transcript,
    resume_agent,
    run_agent,
    system_instructions_text,
)
from .tools import (  # noqa: F401
    TOOL_NAMES,
    AgentContext,
    CheckpointNotApproved,
    CreatorOutputUnparseable,
    TableParseError,
    TableSummary,
    ToolDisabled,
    ToolError,
    ToolRegistry,
    ToolSpec,
    ToolTimeout,
    build_registry,
    read_table,
    read_text_file,
)
