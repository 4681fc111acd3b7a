"""The thought/action/observation loop driving deck generation.

One run owns one working directory. The provider answers each round with
tool calls, file artifacts, or a final answer; everything lands in a
JSON-lines transcript that is byte-identical across reruns with the scripted
mock (relative paths only, no timestamps).

The checkpoint contract: once the agent writes a model-spec file the run
halts for human approval unless auto-approve is set; the input_creator tool
additionally refuses to run without an existing, approved spec.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field
from importlib import resources

from ..deck_model import DeckError
from ..intermediate_spec import CompileError, SchemaError
from ..knowledge_store import KnowledgeStoreError
from ..providers import ProviderFailure, ProviderReply
from ..topology import TopologyError
from .tools import APPROVAL_MARKER, AgentContext, ToolError, build_registry

# Failures a tool may legitimately surface to the agent as an observation.
_OBSERVABLE_ERRORS = (ToolError, KnowledgeStoreError, DeckError, TopologyError,
                      SchemaError, CompileError)

__all__ = [
    "AgentTurn",
    "Transcript",
    "IterationLimitError",
    "run_agent",
    "resume_agent",
    "load_transcript",
    "system_instructions_text",
    "TRANSCRIPT_NAME",
]

TRANSCRIPT_NAME = "transcript.jsonl"

STATUS_COMPLETED = "completed"
STATUS_AWAITING = "awaiting-approval"
STATUS_LIMIT = "iteration-limit"


class IterationLimitError(Exception):
    def __init__(self, transcript: "Transcript"):
        super().__init__(f"no final answer after {transcript.rounds} rounds")
        self.transcript = transcript


@dataclass(frozen=True)
class AgentTurn:
    thought: str = ""
    action: tuple[str, dict] | None = None
    observation: str | None = None
    files: tuple[str, ...] = ()

    def to_doc(self) -> dict:
        return {"type": "turn", "thought": self.thought,
                "action": ({"tool": self.action[0], "args": self.action[1]}
                           if self.action else None),
                "observation": self.observation, "files": list(self.files)}


@dataclass(frozen=True)
class Transcript:
    system_instructions: str
    prompt: str = ""
    turns: tuple[AgentTurn, ...] = ()
    final_answer: str | None = None
    artifacts: tuple[str, ...] = ()
    status: str = STATUS_COMPLETED
    rounds: int = 0

    def persist(self, workdir) -> pathlib.Path:
        path = pathlib.Path(workdir) / TRANSCRIPT_NAME
        lines = [json.dumps({"type": "header", "prompt": self.prompt,
                             "system_instructions": self.system_instructions})]
        lines += [json.dumps(t.to_doc()) for t in self.turns]
        lines.append(json.dumps({"type": "final", "status": self.status,
                                 "final_answer": self.final_answer,
                                 "artifacts": list(self.artifacts),
                                 "rounds": self.rounds}))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")
        return path


def load_transcript(workdir) -> Transcript:
    path = pathlib.Path(workdir) / TRANSCRIPT_NAME
    system = ""
    prompt = ""
    turns: list[AgentTurn] = []
    final: dict = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        if doc["type"] == "header":
            system = doc["system_instructions"]
            prompt = doc.get("prompt", "")
        elif doc["type"] == "turn":
            action = None
            if doc.get("action"):
                action = (doc["action"]["tool"], doc["action"]["args"])
            turns.append(AgentTurn(thought=doc.get("thought", ""),
                                   action=action,
                                   observation=doc.get("observation"),
                                   files=tuple(doc.get("files", ()))))
        elif doc["type"] == "final":
            final = doc
    return Transcript(system_instructions=system, prompt=prompt,
                      turns=tuple(turns),
                      final_answer=final.get("final_answer"),
                      artifacts=tuple(final.get("artifacts", ())),
                      status=final.get("status", STATUS_COMPLETED),
                      rounds=int(final.get("rounds", 0)))


def system_instructions_text() -> str:
    return resources.files("deckforge.agent").joinpath(
        "assets/system_instructions.md").read_text(encoding="utf-8")


@dataclass
class _RunState:
    prompt: str = ""
    turns: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    rounds: int = 0


def _write_artifacts(ctx: AgentContext, reply: ProviderReply,
                     state: _RunState) -> list[str]:
    written = []
    for artifact in reply.files:
        target = ctx.resolve(artifact.path)
        if target.suffix == ".i" and not ctx.has_spec_file():
            # checkpoint contract: no deck file before a model spec exists
            raise ToolError(
                f"refusing to write deck {artifact.path!r}: no model spec "
                "has been written yet")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(artifact.content, encoding="utf-8", newline="")
        rel = target.relative_to(ctx.workdir.resolve()).as_posix()
        written.append(rel)
        if rel not in state.artifacts:
            state.artifacts.append(rel)
    return written


def _execute_calls(ctx: AgentContext, registry, reply: ProviderReply,
                   state: _RunState) -> None:
    # Same-turn calls run sequentially in request order; the shared thought
    # is recorded on the first resulting turn.
    for i, call in enumerate(reply.tool_calls):
        try:
            spec = registry.get(call.name)
            observation = spec.handler(**call.arguments)
        except _OBSERVABLE_ERRORS as exc:
            observation = f"ERROR({type(exc).__name__}): {exc}"
        except TypeError as exc:
            observation = f"ERROR(BadArguments): {exc}"
        state.turns.append(AgentTurn(
            thought=reply.thought if i == 0 else "",
            action=(call.name, dict(call.arguments)),
            observation=observation))
        state.messages.append({"role": "assistant", "content": reply.thought,
                               "tool_call": {"name": call.name,
                                             "arguments": call.arguments}})
        state.messages.append({"role": "tool", "name": call.name,
                               "content": observation})


def _finish(ctx: AgentContext, state: _RunState, status: str,
            final_answer: str | None, system: str) -> Transcript:
    transcript = Transcript(system_instructions=system, prompt=state.prompt,
                            turns=tuple(state.turns), final_answer=final_answer,
                            artifacts=tuple(state.artifacts), status=status,
                            rounds=state.rounds)
    transcript.persist(ctx.workdir)
    if status == STATUS_COMPLETED:
        missing = [a for a in transcript.artifacts
                   if not (ctx.workdir / a).exists()]
        if missing:
            raise ToolError(f"artifacts vanished before completion: {missing}")
    return transcript


def _loop(ctx: AgentContext, prompt: str, state: _RunState,
          max_iterations: int) -> Transcript:
    system = system_instructions_text()
    registry = build_registry(ctx)
    if not state.messages:
        state.messages.append({"role": "user", "content": prompt})

    while state.rounds < max_iterations and len(state.turns) < max_iterations:
        try:
            reply = ctx.provider.complete(system, state.messages,
                                          registry.wire_specs())
        except ProviderFailure:
            _finish(ctx, state, STATUS_LIMIT, None, system)
            raise
        state.rounds += 1

        if reply.files:
            written = _write_artifacts(ctx, reply, state)
            state.turns.append(AgentTurn(thought=reply.thought,
                                         files=tuple(written)))
            state.messages.append({
                "role": "assistant",
                "content": reply.thought + "\n[wrote: " + ", ".join(written) + "]"})
            wrote_spec = any(p.endswith(".spec.yaml") for p in written)
            if wrote_spec and not ctx.approved():
                return _finish(ctx, state, STATUS_AWAITING, None, system)

        if reply.tool_calls:
            _execute_calls(ctx, registry, reply, state)
            for artifact in ctx.artifacts:
                if artifact not in state.artifacts:
                    state.artifacts.append(artifact)

        if reply.final_text is not None:
            state.messages.append({"role": "assistant",
                                   "content": reply.final_text})
            return _finish(ctx, state, STATUS_COMPLETED, reply.final_text, system)

    raise IterationLimitError(_finish(ctx, state, STATUS_LIMIT, None, system))


def run_agent(prompt: str, workdir, provider, *,
              max_iterations: int = 20, auto_approve: bool = False,
              static_store_dir=None, registry=None, embedder=None,
              code_exec_enabled: bool = False) -> Transcript:
    """Run the loop from scratch in ``workdir`` until a final answer.

    Returns the persisted transcript. Halts with status awaiting-approval
    after the agent writes a model-spec file unless ``auto_approve``;
    continue with :func:`resume_agent` once the human has reviewed the spec.
    Raises IterationLimitError (transcript persisted) when the provider never
    finishes within ``max_iterations`` rounds.
    """
    workdir = pathlib.Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    kwargs = {"workdir": workdir, "provider": provider,
              "auto_approve": auto_approve,
              "static_store_dir": static_store_dir,
              "code_exec_enabled": code_exec_enabled}
    if registry is not None:
        kwargs["registry"] = registry
    if embedder is not None:
        kwargs["embedder"] = embedder
    ctx = AgentContext(**kwargs)
    state = _RunState(prompt=prompt)
    state.messages.append({"role": "user", "content": prompt})
    return _loop(ctx, prompt, state, max_iterations)


def resume_agent(workdir, provider, *, prompt: str | None = None,
                 max_iterations: int = 20, static_store_dir=None,
                 registry=None, embedder=None,
                 code_exec_enabled: bool = False) -> Transcript:
    """Continue a run halted at the spec checkpoint.

    Creates the approval marker (the human has had their edit pass), reloads
    the persisted transcript, and resumes the loop. The provider must pick up
    where it stopped; for the scripted mock, construct it with
    ``skip=transcript.rounds``.
    """
    workdir = pathlib.Path(workdir)
    previous = load_transcript(workdir)
    if previous.status != STATUS_AWAITING:
        raise ValueError(f"run in {workdir} is {previous.status}, "
                         "not awaiting approval")
    (workdir / APPROVAL_MARKER).write_text("approved\n", encoding="utf-8")
    if prompt is None:
        prompt = previous.prompt

    kwargs = {"workdir": workdir, "provider": provider,
              "static_store_dir": static_store_dir,
              "code_exec_enabled": code_exec_enabled}
    if registry is not None:
        kwargs["registry"] = registry
    if embedder is not None:
        kwargs["embedder"] = embedder
    ctx = AgentContext(**kwargs)

    state = _RunState(prompt=prompt)
    state.rounds = previous.rounds
    state.turns = list(previous.turns)
    state.artifacts = list(previous.artifacts)
    state.messages.append({"role": "user", "content": prompt})
    for turn in previous.turns:
        if turn.files:
            state.messages.append({
                "role": "assistant",
                "content": turn.thought + "\n[wrote: " + ", ".join(turn.files) + "]"})
        if turn.action:
            state.messages.append({"role": "assistant", "content": turn.thought,
                                   "tool_call": {"name": turn.action[0],
                                                 "arguments": turn.action[1]}})
            state.messages.append({"role": "tool", "name": turn.action[0],
                                   "content": turn.observation or ""})
    return _loop(ctx, prompt, state, max_iterations)
