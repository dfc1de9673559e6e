"""A local chat-completions HTTP server for gateway tests.

Answers POST /chat/completions with a canned completion whose text is derived
from the prompt (so tests can assert round-trips), and supports failure
injection for rate-limit and server-error paths.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class MockLlmServer:
    def __init__(self, reply: str | None = None):
        self.reply = reply
        self.requests: list[dict] = []
        self._fail_remaining = 0
        self._fail_status = 500
        self._lock = threading.Lock()

        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length).decode("utf-8"))
                with server._lock:
                    server.requests.append(
                        {"body": body, "auth": self.headers.get("Authorization")}
                    )
                    if server._fail_remaining > 0:
                        server._fail_remaining -= 1
                        payload = json.dumps({"error": "injected"}).encode()
                        self.send_response(server._fail_status)
                        self.send_header("Content-Type", "application/json")
                        self.send_header("Content-Length", str(len(payload)))
                        self.end_headers()
                        self.wfile.write(payload)
                        return
                prompt = body["messages"][0]["content"]
                text = server.reply if server.reply is not None else f"echo: {prompt[:40]}"
                payload = json.dumps(
                    {
                        "choices": [{"message": {"role": "assistant", "content": text}}],
                        "usage": {
                            "prompt_tokens": len(prompt.split()),
                            "completion_tokens": len(text.split()),
                        },
                    }
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=lambda: self._httpd.serve_forever(poll_interval=0.02), daemon=True
        )

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}"

    def fail_next(self, n: int, status: int) -> None:
        with self._lock:
            self._fail_remaining = n
            self._fail_status = status

    def start(self) -> "MockLlmServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
