"""Pluggable chat providers: a deterministic scripted mock and an HTTP client.

A provider answers two kinds of requests: ``complete`` drives the agent loop
(returning tool calls, file artifacts, or a final answer) and
``complete_text`` serves plain prompt-to-text completions for retrieval
answering and deck creation. The mock replays a recorded decision list, which
makes every pipeline test offline and bit-reproducible.
"""

from __future__ import annotations

import json
import os
import pathlib
from dataclasses import dataclass
from typing import Protocol

__all__ = [
    "ProviderFailure",
    "ToolCall",
    "FileArtifact",
    "ProviderReply",
    "ChatProvider",
    "MockChatProvider",
    "HttpChatProvider",
]


class ProviderFailure(Exception):
    """A provider could not produce a usable reply."""


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict


@dataclass(frozen=True)
class FileArtifact:
    path: str  # relative to the agent working directory
    content: str


@dataclass(frozen=True)
class ProviderReply:
    thought: str = ""
    tool_calls: tuple[ToolCall, ...] = ()
    files: tuple[FileArtifact, ...] = ()
    final_text: str | None = None


class ChatProvider(Protocol):
    def complete(self, system: str, messages: list[dict],
                 tools: list[dict]) -> ProviderReply: ...

    def complete_text(self, prompt: str,
                      context: list[str] | None = None) -> str: ...


class MockChatProvider:
    """Replays a recorded decision list, one decision per request.

    Decisions (JSON objects, in request order):

    * ``{"thought": ..., "tool": name, "args": {...}}`` - one tool call;
      ``"tools": [{"name", "args"}, ...]`` issues several in one turn.
    * ``{"thought": ..., "files": [{"path": ..., "content": ...}]}`` - write
      file artifacts into the working directory. ``content_file`` loads the
      payload from a file next to the script.
    * ``{"thought": ..., "final": text}`` - finish the run.
    * ``{"text": ...}`` or ``{"text_file": ...}`` - answer the next
      ``complete_text`` request (retrieval answering, deck creation).

    Without a script, ``complete_text`` echoes the first context excerpt and
    ``complete`` finishes immediately; that is the degenerate mock used by
    retrieval tests.
    """

    def __init__(self, decisions: list[dict] | None = None, *,
                 base_dir: str | pathlib.Path = ".", skip: int = 0):
        self._decisions = list(decisions) if decisions is not None else None
        self._base_dir = pathlib.Path(base_dir)
        self._pos = 0
        self.consumed = 0
        # skip counts turn decisions (tool/files/final), matching the loop's
        # round counter; interleaved text decisions ride along.
        skipped = 0
        while skipped < skip:
            decision = self._next()
            if not ("text" in decision or "text_file" in decision):
                skipped += 1

    @classmethod
    def from_script(cls, path, *, skip: int = 0) -> "MockChatProvider":
        p = pathlib.Path(path)
        try:
            decisions = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ProviderFailure(f"cannot load decision script {p}: {exc}") from exc
        if not isinstance(decisions, list):
            raise ProviderFailure(f"decision script {p} must be a JSON list")
        return cls(decisions, base_dir=p.parent, skip=skip)

    def _next(self) -> dict:
        if self._decisions is None:
            return {"final": "done"}
        if self._pos >= len(self._decisions):
            raise ProviderFailure("decision script exhausted")
        decision = self._decisions[self._pos]
        self._pos += 1
        self.consumed += 1
        return decision

    def _payload(self, decision: dict, inline_key: str, file_key: str) -> str:
        if inline_key in decision:
            return str(decision[inline_key])
        rel = decision[file_key]
        try:
            return (self._base_dir / rel).read_text(encoding="utf-8")
        except OSError as exc:
            raise ProviderFailure(f"script payload {rel!r} unreadable: {exc}") from exc

    def complete(self, system, messages, tools) -> ProviderReply:
        decision = self._next()
        thought = str(decision.get("thought", ""))
        if "final" in decision:
            return ProviderReply(thought=thought, final_text=str(decision["final"]))
        if "files" in decision:
            artifacts = tuple(
                FileArtifact(path=str(f["path"]),
                             content=self._payload(f, "content", "content_file"))
                for f in decision["files"])
            return ProviderReply(thought=thought, files=artifacts)
        if "tool" in decision:
            calls = (ToolCall(name=str(decision["tool"]),
                              arguments=dict(decision.get("args", {}))),)
            return ProviderReply(thought=thought, tool_calls=calls)
        if "tools" in decision:
            calls = tuple(ToolCall(name=str(t["name"]),
                                   arguments=dict(t.get("args", {})))
                          for t in decision["tools"])
            return ProviderReply(thought=thought, tool_calls=calls)
        raise ProviderFailure(
            f"decision #{self._pos} is not a turn decision: {sorted(decision)}")

    def complete_text(self, prompt, context=None) -> str:
        if self._decisions is None:
            return context[0] if context else ""
        decision = self._next()
        if "text" in decision or "text_file" in decision:
            return self._payload(decision, "text", "text_file")
        raise ProviderFailure(
            f"decision #{self._pos} is not a text decision: {sorted(decision)}")


class HttpChatProvider:
    """Chat-completion HTTP client (OpenAI-style wire format).

    The request body is ``{"model", "messages", "tools"}``; the reply is read
    from ``choices[0].message``, taking ``tool_calls`` when present and
    ``content`` otherwise. Credentials come from the environment variable
    named by ``api_key_env``; the key itself is never stored in configuration.
    """

    def __init__(self, endpoint: str, model: str, *,
                 api_key_env: str | None = None, timeout: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if not key:
                raise ProviderFailure(
                    f"credential variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, body: dict) -> dict:
        import requests

        try:
            resp = requests.post(self.endpoint, json=body,
                                 headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise ProviderFailure(f"provider request failed: {exc}") from exc
        if resp.status_code != 200:
            raise ProviderFailure(
                f"provider returned HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderFailure(f"provider reply is not JSON: {exc}") from exc

    def _message(self, doc: dict) -> dict:
        try:
            return doc["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderFailure(f"malformed provider reply: {doc!r}") from exc

    def complete(self, system, messages, tools) -> ProviderReply:
        body = {
            "model": self.model,
            "messages": [{"role": "system", "content": system}] + list(messages),
        }
        if tools:
            body["tools"] = [{"type": "function", "function": t} for t in tools]
        message = self._message(self._post(body))
        raw_calls = message.get("tool_calls") or ()
        if raw_calls:
            calls = []
            for rc in raw_calls:
                fn = rc.get("function", {})
                try:
                    args = json.loads(fn.get("arguments") or "{}")
                except json.JSONDecodeError as exc:
                    raise ProviderFailure(
                        f"unparseable tool arguments: {fn.get('arguments')!r}") from exc
                calls.append(ToolCall(name=str(fn.get("name", "")), arguments=args))
            return ProviderReply(tool_calls=tuple(calls))
        return ProviderReply(final_text=message.get("content") or "")

    def complete_text(self, prompt, context=None) -> str:
        body = {"model": self.model,
                "messages": [{"role": "user", "content": prompt}]}
        message = self._message(self._post(body))
        return message.get("content") or ""
