"""Chat-endpoint transports for the agent controller.

A transport is any callable ``prompt -> reply text``. The HTTP transport
speaks the minimal chat-completions dialect (ollama-style request body) and
tolerates the common reply envelopes; the script transport replays canned
replies for deterministic runs and tests.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from pathlib import Path

__all__ = ["TransportError", "HttpChatTransport", "ScriptTransport"]


class TransportError(RuntimeError):
    """Endpoint unreachable, timed out, or replied with garbage."""


def _extract_content(reply: dict) -> str:
    if isinstance(reply.get("message"), dict) and "content" in reply["message"]:
        return str(reply["message"]["content"])
    choices = reply.get("choices")
    if isinstance(choices, list) and choices:
        msg = choices[0].get("message", {})
        if "content" in msg:
            return str(msg["content"])
    if "response" in reply:
        return str(reply["response"])
    raise TransportError(f"no content field in reply: {sorted(reply)!r}")


class HttpChatTransport:
    """POSTs ``{"model", "messages", "stream": false}`` and returns the
    assistant text. All failures surface as TransportError."""

    def __init__(self, url: str, model: str = "default", timeout_s: float = 30.0):
        self.url = url
        self.model = model
        self.timeout_s = timeout_s

    def __call__(self, prompt: str) -> str:
        body = json.dumps(
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "stream": False,
            }
        ).encode()
        req = urllib.request.Request(
            self.url,
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise TransportError(str(exc)) from exc
        if not isinstance(payload, dict):
            raise TransportError("reply is not a JSON object")
        return _extract_content(payload)


class ScriptTransport:
    """Replays a fixed reply sequence; deterministic by construction.

    With ``cycle`` the sequence wraps; otherwise exhaustion raises, which the
    agent controller records as an invalid decision.
    """

    def __init__(self, replies: list[str], cycle: bool = False):
        if not replies:
            raise ValueError("script needs at least one reply")
        self.replies = list(replies)
        self.cycle = cycle
        self.position = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptTransport":
        """Load ``{"replies": [...], "cycle": bool}`` or a bare JSON list."""
        data = json.loads(Path(path).read_text())
        if isinstance(data, list):
            return cls(replies=[str(r) for r in data])
        return cls(
            replies=[str(r) for r in data["replies"]],
            cycle=bool(data.get("cycle", False)),
        )

    def __call__(self, prompt: str) -> str:
        if self.position >= len(self.replies):
            if not self.cycle:
                raise TransportError("script exhausted")
            self.position = 0
        reply = self.replies[self.position]
        self.position += 1
        return reply
