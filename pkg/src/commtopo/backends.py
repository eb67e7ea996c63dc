"""Chat backends: deterministic mocks for tests/benchmarks and an
OpenAI-compatible HTTP client with retries.

A backend maps (system prompt, user prompt) to (output text,
prompt_tokens, completion_tokens); token counts may be None, in which
case the orchestrator falls back to whitespace counting.
"""
from __future__ import annotations

import json
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

from .errors import BackendError
from .pool import AgentPool

Completion = tuple[str, int | None, int | None]


class ChatBackend(Protocol):
    def complete(self, system: str, user: str) -> Completion: ...


@dataclass
class BackendSet:
    """Backends for pool agents plus the distinguished decision agent."""

    default: ChatBackend
    decision: ChatBackend
    overrides: Mapping[int, ChatBackend] = field(default_factory=dict)

    def for_agent(self, agent_id: int) -> ChatBackend:
        return self.overrides.get(agent_id, self.default)


class EchoBackend:
    """Pure function of its prompts; output carries a stable digest."""

    def complete(self, system: str, user: str) -> Completion:
        digest = zlib.crc32((system + "\x00" + user).encode()) % 10000
        text = (
            "In my opinion, I think the prompt points one way. "
            f"And my answer to the <Task> is {digest}."
        )
        return text, None, None


class StaticBackend:
    """Always returns the same text."""

    def __init__(self, text: str, prompt_tokens: int | None = None, completion_tokens: int | None = None):
        self.text = text
        self.prompt_tokens = prompt_tokens
        self.completion_tokens = completion_tokens

    def complete(self, system: str, user: str) -> Completion:
        return self.text, self.prompt_tokens, self.completion_tokens


class ScriptedBackend:
    """Returns pre-recorded outputs in call order."""

    def __init__(self, outputs: Sequence[str]):
        self.outputs = list(outputs)
        self.calls = 0

    def complete(self, system: str, user: str) -> Completion:
        if self.calls >= len(self.outputs):
            raise BackendError("script exhausted")
        out = self.outputs[self.calls]
        self.calls += 1
        return out, None, None


def _transcript_entries(user: str) -> list[dict]:
    start = user.find("[")
    if start < 0:
        return []
    try:
        return json.loads(user[start:])
    except json.JSONDecodeError:
        return []


class MajorityVoteDecision:
    """Returns the most common entry output (first seen wins ties)."""

    def complete(self, system: str, user: str) -> Completion:
        entries = _transcript_entries(user)
        if not entries:
            return "", None, None
        counts = Counter(e["output"] for e in entries)
        best = max(counts, key=lambda o: (counts[o], -[e["output"] for e in entries].index(o)))
        return best, None, None


class PlantedDecisionBackend:
    """Decision mock for planted suites.

    Locates the task by its text inside the system prompt, then answers
    correctly iff every planted-team role appears in the transcript.
    """

    def __init__(self, tasks, pool: AgentPool):
        self.tasks = list(tasks)
        self.role_to_id = {a.role: a.id for a in pool.agents}

    def complete(self, system: str, user: str) -> Completion:
        task = next((t for t in self.tasks if t.task_text in system), None)
        if task is None or task.planted_team is None:
            return "unknown task", None, None
        present = {
            self.role_to_id[e["role"]]
            for e in _transcript_entries(user)
            if e.get("role") in self.role_to_id
        }
        if set(task.planted_team) <= present:
            return task.expected_answer, None, None
        return "no consensus", None, None


class HttpChatBackend:
    """OpenAI-compatible chat-completions client with retry and backoff."""

    def __init__(
        self,
        endpoint: str,
        api_key: str,
        model: str,
        temperature: float = 1.0,
        retries: int = 3,
        backoff: float = 1.0,
        session=None,
        sleep=time.sleep,
    ):
        import requests

        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self._session = session or requests.Session()
        self._sleep = sleep

    def payload(self, system: str, user: str) -> dict:
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.temperature,
        }

    def complete(self, system: str, user: str) -> Completion:
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._session.post(
                    self.endpoint,
                    json=self.payload(system, user),
                    headers={"Authorization": f"Bearer {self.api_key}"},
                    timeout=120,
                )
                resp.raise_for_status()
                obj = resp.json()
                text = obj["choices"][0]["message"]["content"]
                usage = obj.get("usage", {})
                return (
                    text,
                    usage.get("prompt_tokens"),
                    usage.get("completion_tokens"),
                )
            except Exception as exc:
                last_error = exc
                if attempt < self.retries - 1:
                    self._sleep(self.backoff * 2**attempt)
        raise BackendError(f"chat backend failed after {self.retries} attempts: {last_error}")
