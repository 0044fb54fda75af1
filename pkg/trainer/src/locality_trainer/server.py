"""Wire-protocol server: newline-delimited JSON requests against a checkpoint.

``value_dist`` renormalizes the probabilities of the value tokens ``1`` and
``0`` at the next position of a prompt ending in ``<name>=``. ``next_var``
turns next-token probabilities into whole-identifier probabilities: names
that tokenize to several tokens are scored by chained conditioning, and the
result is normalized over the candidate names not already in the context.
Malformed requests get an error reply; nothing the client sends can bring
the server down.
"""

from __future__ import annotations

import json
import re
import socketserver
import threading

import torch

from .bpe import BpeTokenizer, TokenizerError
from .gpt import Gpt
from .training import load_checkpoint

NAME_RE = re.compile(r"X\d+")


class ProtocolError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(detail or code)
        self.code = code
        self.detail = detail


def _require_name(value, label: str) -> str:
    if not isinstance(value, str) or not NAME_RE.fullmatch(value):
        raise ProtocolError("bad-variable", f"{label} must be a variable name, got {value!r}")
    return value


def _require_context(value) -> list[tuple[str, int]]:
    if not isinstance(value, list):
        raise ProtocolError("bad-context", "context must be a list of [name, bit] pairs")
    out = []
    seen = set()
    for entry in value:
        if not isinstance(entry, (list, tuple)) or len(entry) != 2:
            raise ProtocolError("bad-context", f"bad context entry: {entry!r}")
        name = _require_name(entry[0], "context variable")
        if entry[1] not in (0, 1):
            raise ProtocolError("bad-context", f"context value must be a bit: {entry!r}")
        if name in seen:
            raise ProtocolError("bad-context", f"context repeats {name}")
        seen.add(name)
        out.append((name, int(entry[1])))
    return out


class ServedModel:
    """Checkpointed model plus tokenizer, answering protocol operations."""

    def __init__(self, model: Gpt, tokenizer: BpeTokenizer):
        self.model = model.eval()
        self.tokenizer = tokenizer
        for bit in ("0", "1"):
            if bit not in tokenizer.token_to_id:
                raise TokenizerError(f"value token {bit!r} missing from the vocabulary")

    @staticmethod
    def from_checkpoint(path: str) -> "ServedModel":
        model, tokenizer, _ = load_checkpoint(path)
        return ServedModel(model, tokenizer)

    def _prompt_ids(self, target: str, context: list[tuple[str, int]], tail: str) -> list[int]:
        text = f"###\ntarget: {target}\n"
        text += "".join(f"{name}={bit}\n" for name, bit in context)
        text += tail
        try:
            return self.tokenizer.encode(text)
        except TokenizerError as exc:
            raise ProtocolError("unknown-variable", str(exc)) from exc

    def _next_probs(self, ids: list[int]) -> torch.Tensor:
        logits = self.model.next_token_logits(torch.tensor([ids], dtype=torch.long))
        return torch.softmax(logits[0], dim=-1)

    def value_dist(self, target: str, context: list[tuple[str, int]], query: str) -> float:
        ids = self._prompt_ids(target, context, f"{query}=")
        probs = self._next_probs(ids)
        p0 = float(probs[self.tokenizer.token_to_id["0"]])
        p1 = float(probs[self.tokenizer.token_to_id["1"]])
        if p0 + p1 <= 0.0:
            raise ProtocolError("degenerate-values", "no mass on the value tokens")
        return p1 / (p0 + p1)

    def next_var(self, target: str, context: list[tuple[str, int]]) -> dict[str, float]:
        in_context = {name for name, _ in context}
        candidates = [
            name for name in set(self.tokenizer.variable_names()) | {target}
            if name not in in_context
        ]
        if not candidates:
            raise ProtocolError("no-candidates", "every variable already appears")
        prompt = self._prompt_ids(target, context, "")
        first_probs = self._next_probs(prompt)
        scores: dict[str, float] = {}
        for name in candidates:
            try:
                token_ids = self.tokenizer.name_token_ids(name)
            except TokenizerError as exc:
                raise ProtocolError("unknown-variable", str(exc)) from exc
            score = float(first_probs[token_ids[0]])
            prefix = list(prompt) + [token_ids[0]]
            for token_id in token_ids[1:]:
                if score <= 0.0:
                    break
                score *= float(self._next_probs(prefix)[token_id])
                prefix.append(token_id)
            scores[name] = score
        total = sum(scores.values())
        if total <= 0.0:
            raise ProtocolError("degenerate-values", "no mass on any candidate identifier")
        return {name: score / total for name, score in sorted(scores.items())}

    def handle_request(self, line: bytes) -> dict:
        try:
            request = json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError, ValueError):
            return {"error": "malformed-request", "detail": "not valid JSON"}
        if not isinstance(request, dict):
            return {"error": "malformed-request", "detail": "request must be an object"}
        try:
            op = request.get("op")
            if op == "value_dist":
                target = _require_name(request.get("target"), "target")
                context = _require_context(request.get("context", []))
                if target in {name for name, _ in context}:
                    raise ProtocolError("bad-context", "target already appears in the context")
                query = _require_name(request.get("query"), "query")
                if query in {name for name, _ in context}:
                    raise ProtocolError("bad-query", "query already appears in the context")
                return {"p1": self.value_dist(target, context, query)}
            if op == "next_var":
                target = _require_name(request.get("target"), "target")
                context = _require_context(request.get("context", []))
                if target in {name for name, _ in context}:
                    raise ProtocolError("bad-context", "target already appears in the context")
                return {"var_probs": self.next_var(target, context)}
            return {"error": "bad-op", "detail": f"unknown op: {op!r}"}
        except ProtocolError as exc:
            return {"error": exc.code, "detail": exc.detail}
        except Exception as exc:  # noqa: BLE001 -- the server must never die
            return {"error": "internal", "detail": f"{type(exc).__name__}: {exc}"}


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        for line in self.rfile:
            line = line.strip()
            if not line:
                continue
            reply = self.server.served.handle_request(line)
            try:
                self.wfile.write(json.dumps(reply).encode() + b"\n")
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                return


class ModelServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    block_on_close = False
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], served: ServedModel):
        super().__init__(address, _Handler)
        self.served = served

    def serve_in_thread(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def serve(checkpoint: str, host: str, port: int) -> None:
    """Blocking entry point: load the checkpoint and answer requests."""
    server = ModelServer((host, port), ServedModel.from_checkpoint(checkpoint))
    with server:
        server.serve_forever()
