"""Deterministic stand-in backends for offline recording and tests.

:func:`stub_transport` answers the chat and embedding wire formats that
:mod:`clozescore.providers` speaks. Evaluated "models" return a tagged story
drawn from a word bank, "judges" return a score derived from a hash of the
prompt, and the embedder returns a seeded pseudo-random vector per text.
"""

from __future__ import annotations

import hashlib
import json
import re

import httpx
import numpy as np

from .testset import TestSet

WORDS = (
    "salt", "lantern", "copper", "tide", "ledger", "violet", "glass", "ember", "harbor", "thread",
    "cinder", "marble", "echo", "rust", "feather", "anchor", "quiet", "velvet", "signal", "ash",
)


def _seed(*parts: str) -> int:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def stub_fillings(ts: TestSet, model: str, skip: frozenset[int] = frozenset()) -> dict[int, str]:
    rng = np.random.default_rng(_seed("fill", model, ts.id))
    out = {}
    for k in ts.blank_ids:
        if k in skip:
            continue
        n = int(rng.integers(2, 5))
        out[k] = " ".join(WORDS[i] for i in rng.integers(0, len(WORDS), n))
    return out


def stub_embedding(text: str, dim: int = 32) -> list[float]:
    rng = np.random.default_rng(_seed("embed", text))
    # shared offset keeps cohorts clustered, like a real embedding space
    v = rng.normal(size=dim) + 2.0
    return [float(x) for x in v]


_DOMAIN = re.compile(r"SCORE: <one of ([^>]+)>")


def stub_verdict(prompt: str, model: str) -> str:
    m = _DOMAIN.search(prompt)
    domain = [x.strip() for x in m.group(1).split(",")] if m else ["0", "1", "2", "3", "4", "5"]
    rng = np.random.default_rng(_seed("judge", model, prompt))
    # skew towards the upper half of the scale
    idx = min(len(domain) - 1, int(rng.triangular(0, len(domain) * 0.75, len(domain))))
    knockout = "Knockout rule" in prompt and rng.random() < 0.15
    return f"The passage addresses the constraint.\nSCORE: {domain[idx]}\nKNOCKOUT: {'yes' if knockout else 'no'}"


def stub_transport(ts: TestSet | None = None, dim: int = 32,
                   incomplete: dict[str, frozenset[int]] | None = None) -> httpx.MockTransport:
    """``incomplete`` maps a model name to blank ids it leaves out."""
    incomplete = incomplete or {}

    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content or b"{}")
        path = request.url.path
        if path.endswith("/embeddings"):
            return httpx.Response(200, json={"data": [{"embedding": stub_embedding(body["input"], dim)}]})
        if path.endswith(":predict"):
            text = body["instances"][0]["content"]
            return httpx.Response(200, json={"predictions": [{"embeddings": {"values": stub_embedding(text, dim)}}]})
        if path.endswith("/chat/completions"):
            model, prompt = body["model"], body["messages"][-1]["content"]
            if model.startswith("judge") or ts is None:
                text = stub_verdict(prompt, model)
            else:
                text = render_partial(ts, stub_fillings(ts, model, incomplete.get(model, frozenset())))
            return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})
        if path.endswith("/messages"):
            text = stub_verdict(body["messages"][-1]["content"], body["model"])
            return httpx.Response(200, json={"content": [{"type": "text", "text": text}]})
        if path.endswith(":generateContent"):
            model = path.rsplit("/", 1)[-1].split(":")[0]
            text = stub_verdict(body["contents"][-1]["parts"][0]["text"], model)
            return httpx.Response(200, json={"candidates": [{"content": {"parts": [{"text": text}]}}]})
        return httpx.Response(404, json={"error": f"no stub for {path}"})

    return httpx.MockTransport(handler)


def render_partial(ts: TestSet, fillings: dict[int, str]) -> str:
    """Like :func:`render_tagged` but skipped blanks simply vanish."""
    w = ts.marker_width()
    return "".join(
        (f"⟦{s.blank_id:0{w}d}: {fillings[s.blank_id]}⟧" if s.blank_id in fillings else "") if s.is_blank else s.text
        for s in ts.segments
    )
