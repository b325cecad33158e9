"""Scripted mock chat endpoint for tests and offline demos.

A tiny threaded HTTP server that validates the chat request shape and
replies with the next line of a fixed script, wrapped in an ollama-style
envelope. Replies are served strictly in order under a lock.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

__all__ = ["ScriptedChatServer"]


class ScriptedChatServer:
    """Context-managed mock endpoint on an ephemeral localhost port."""

    def __init__(self, replies: list[str], cycle: bool = True, port: int = 0):
        if not replies:
            raise ValueError("need at least one scripted reply")
        self.replies = list(replies)
        self.cycle = cycle
        self.port = port  # 0 = ephemeral
        self.prompts: list[str] = []  # prompts received, for assertions
        self._pos = 0
        self._lock = threading.Lock()
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def _next_reply(self) -> str | None:
        with self._lock:
            if self._pos >= len(self.replies):
                if not self.cycle:
                    return None
                self._pos = 0
            reply = self.replies[self._pos]
            self._pos += 1
            return reply

    @property
    def url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/api/chat"

    def start(self) -> "ScriptedChatServer":
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args) -> None:  # keep test output quiet
                pass

            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", 0))
                try:
                    body = json.loads(self.rfile.read(length).decode())
                    assert isinstance(body["messages"], list) and body["messages"]
                    assert "model" in body
                except (ValueError, KeyError, AssertionError):
                    self.send_response(400)
                    self.end_headers()
                    return
                with outer._lock:
                    outer.prompts.append(str(body["messages"][-1].get("content", "")))
                reply = outer._next_reply()
                if reply is None:
                    self.send_response(503)
                    self.end_headers()
                    return
                payload = json.dumps(
                    {"message": {"role": "assistant", "content": reply}}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self._server = ThreadingHTTPServer(("127.0.0.1", self.port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "ScriptedChatServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def main() -> None:
    import argparse
    import time
    from pathlib import Path

    ap = argparse.ArgumentParser(
        prog="prefetchsim.mockllm",
        description="serve a reply script as a local chat endpoint",
    )
    ap.add_argument("--replies", required=True, help="text file, one reply per line")
    ap.add_argument("--port", type=int, default=0, help="0 picks a free port")
    ap.add_argument(
        "--no-cycle", action="store_true",
        help="serve the script once, then answer 503",
    )
    args = ap.parse_args()
    lines = [ln for ln in Path(args.replies).read_text().splitlines() if ln.strip()]
    with ScriptedChatServer(lines, cycle=not args.no_cycle, port=args.port) as srv:
        print(f"serving {len(lines)} scripted replies at {srv.url}", flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            pass


if __name__ == "__main__":
    main()
