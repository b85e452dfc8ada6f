"""Chat and embedding backends behind a record/replay cache.

Every request is canonicalized and digested into a :class:`CacheKey`. In
``record`` mode responses are stored one file per key; in ``replay`` mode
they are served from that directory and the network is never touched, so a
recorded run can be reproduced offline byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

import httpx
import numpy as np

logger = logging.getLogger(__name__)

MODES = ("live", "replay", "record")

# stripped before digesting so replays survive request-id churn
VOLATILE_FIELDS = frozenset({"request_id", "requestId", "timestamp", "created", "user", "idempotency_key"})

BACKOFF_BASE = 0.5
BACKOFF_CAP = 8.0


class ProviderError(RuntimeError):
    """Transport failure, bad response or unusable configuration."""


class CacheMiss(ProviderError):
    def __init__(self, key: "CacheKey"):
        super().__init__(f"replay cache miss for {key.filename}")
        self.key = key


class CredentialError(ProviderError):
    pass


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    kind: str  # "chat" | "embedding"
    endpoint: str
    model: str
    auth: str = ""
    timeout: float = 60.0
    max_retries: int = 2
    api: str = "openai"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("chat", "embedding"):
            raise ValueError(f"provider {self.name}: kind must be chat or embedding, got {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError(f"provider {self.name}: timeout must be positive")
        if self.max_retries < 0:
            raise ValueError(f"provider {self.name}: max_retries must be >= 0")
        if self.api not in ADAPTERS[self.kind]:
            raise ValueError(f"provider {self.name}: no {self.kind} adapter for api {self.api!r}")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ProviderConfig":
        return cls(
            name=d["name"],
            kind=d["kind"],
            endpoint=d["endpoint"],
            model=d["model"],
            auth=d.get("auth", ""),
            timeout=float(d.get("timeout", 60.0)),
            max_retries=int(d.get("max_retries", 2)),
            api=d.get("api", "openai"),
            params=dict(d.get("params", {})),
        )


def load_providers(path: str | Path) -> dict[str, ProviderConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    items = doc["providers"] if isinstance(doc, dict) else doc
    out: dict[str, ProviderConfig] = {}
    for item in items:
        cfg = ProviderConfig.from_dict(item)
        if cfg.name in out:
            raise ValueError(f"duplicate provider name {cfg.name!r}")
        out[cfg.name] = cfg
    return out


# ---------------------------------------------------------------------------
# cache keys


def canonicalize(body: Any) -> Any:
    if isinstance(body, Mapping):
        return {str(k): canonicalize(v) for k, v in sorted(body.items(), key=lambda kv: str(kv[0]))
                if k not in VOLATILE_FIELDS}
    if isinstance(body, (list, tuple)):
        return [canonicalize(v) for v in body]
    return body


def canonical_json(body: Any) -> str:
    return json.dumps(canonicalize(body), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass(frozen=True)
class CacheKey:
    provider: str
    kind: str
    digest: str

    @classmethod
    def for_request(cls, provider: str, kind: str, body: Any) -> "CacheKey":
        digest = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
        return cls(provider, kind, digest)

    @property
    def filename(self) -> str:
        safe = re.sub(r"[^A-Za-z0-9._-]+", "_", self.provider)
        return f"{safe}__{self.kind}__{self.digest}.json"


class ResponseCache:
    """Directory of one JSON file per cache key; writes are temp-file + rename."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, key: CacheKey) -> Path:
        return self.root / key.filename

    def get(self, key: CacheKey) -> dict[str, Any] | None:
        p = self.path(key)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def put(self, key: CacheKey, cfg: ProviderConfig, request: Any, response: Any) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        entry = {
            "provider": cfg.name,
            "model": cfg.model,
            "kind": key.kind,
            "api": cfg.api,
            "params": dict(cfg.params),
            "recorded_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "request": canonicalize(request),
            "response": response,
        }
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=".tmp-", suffix=".json")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(entry, fh, ensure_ascii=False, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.path(key))

    def __len__(self) -> int:
        return len(list(self.root.glob("*.json"))) if self.root.exists() else 0


# ---------------------------------------------------------------------------
# wire adapters: (build request) -> (url, headers, body); (parse response) -> value


@dataclass(frozen=True)
class Adapter:
    build: Callable[[ProviderConfig, str, str], tuple[str, dict[str, str], dict[str, Any]]]
    parse: Callable[[Any], Any]


def _openai_chat(cfg, prompt, token):
    body = {"model": cfg.model, "messages": [{"role": "user", "content": prompt}], **cfg.params}
    return cfg.endpoint.rstrip("/") + "/chat/completions", {"Authorization": f"Bearer {token}"}, body


def _anthropic_chat(cfg, prompt, token):
    body = {"model": cfg.model, "max_tokens": 4096, "messages": [{"role": "user", "content": prompt}],
            **cfg.params}
    headers = {"x-api-key": token, "anthropic-version": "2023-06-01"}
    return cfg.endpoint.rstrip("/") + "/messages", headers, body


def _gemini_chat(cfg, prompt, token):
    body = {"contents": [{"role": "user", "parts": [{"text": prompt}]}], **cfg.params}
    url = f"{cfg.endpoint.rstrip('/')}/models/{cfg.model}:generateContent"
    return url, {"x-goog-api-key": token}, body


def _openai_embed(cfg, text, token):
    body = {"model": cfg.model, "input": text, **cfg.params}
    return cfg.endpoint.rstrip("/") + "/embeddings", {"Authorization": f"Bearer {token}"}, body


def _vertex_embed(cfg, text, token):
    body = {"instances": [{"content": text}], **cfg.params}
    url = f"{cfg.endpoint.rstrip('/')}/models/{cfg.model}:predict"
    return url, {"Authorization": f"Bearer {token}"}, body


ADAPTERS: dict[str, dict[str, Adapter]] = {
    "chat": {
        "openai": Adapter(_openai_chat, lambda r: r["choices"][0]["message"]["content"]),
        "anthropic": Adapter(_anthropic_chat,
                             lambda r: "".join(b.get("text", "") for b in r["content"])),
        "gemini": Adapter(_gemini_chat,
                          lambda r: "".join(p.get("text", "") for p in r["candidates"][0]["content"]["parts"])),
    },
    "embedding": {
        "openai": Adapter(_openai_embed, lambda r: r["data"][0]["embedding"]),
        "vertex": Adapter(_vertex_embed, lambda r: r["predictions"][0]["embeddings"]["values"]),
    },
}


# ---------------------------------------------------------------------------
# client


def backoff_delay(attempt: int) -> float:
    return min(BACKOFF_BASE * 2 ** attempt, BACKOFF_CAP)


class ProviderClient:
    """Issues provider calls under one mode and one cache directory.

    ``transport`` is handed to :class:`httpx.Client`; tests inject a
    :class:`httpx.MockTransport`. The HTTP client is built lazily, so replay
    never creates one.
    """

    def __init__(self, mode: str = "replay", cache: ResponseCache | str | Path | None = None,
                 transport: httpx.BaseTransport | None = None,
                 env: Mapping[str, str] | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode in ("replay", "record") and cache is None:
            raise ValueError(f"{mode} mode needs a cache directory")
        self.mode = mode
        self.cache = cache if isinstance(cache, ResponseCache) or cache is None else ResponseCache(cache)
        self.transport = transport
        self.env = os.environ if env is None else env
        self.sleep = sleep
        self._http: httpx.Client | None = None
        self._lock = threading.Lock()
        self.network_calls = 0

    def check_credentials(self, cfg: ProviderConfig) -> str:
        if self.mode == "replay":
            return ""
        if not cfg.auth:
            return ""
        token = self.env.get(cfg.auth)
        if not token:
            raise CredentialError(f"provider {cfg.name}: credential variable {cfg.auth} is not set")
        return token

    def _client(self) -> httpx.Client:
        with self._lock:
            if self._http is None:
                self._http = httpx.Client(transport=self.transport)
            return self._http

    def close(self) -> None:
        if self._http is not None:
            self._http.close()
            self._http = None

    def _post(self, cfg: ProviderConfig, url: str, headers: dict[str, str], body: Any) -> Any:
        last: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self.sleep(backoff_delay(attempt - 1))
            with self._lock:
                self.network_calls += 1
            try:
                resp = self._client().post(url, headers=headers, json=body, timeout=cfg.timeout)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = ProviderError(f"HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"provider {cfg.name}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProviderError(f"provider {cfg.name}: response is not JSON") from exc
        raise ProviderError(f"provider {cfg.name}: failed after {cfg.max_retries + 1} attempt(s): {last}")

    def request(self, cfg: ProviderConfig, kind: str, payload: str) -> Any:
        if cfg.kind != kind:
            raise ProviderError(f"provider {cfg.name} is a {cfg.kind} provider, not {kind}")
        adapter = ADAPTERS[kind][cfg.api]
        # the key is computed from the credential-free request
        url, _, body = adapter.build(cfg, payload, "")
        key = CacheKey.for_request(cfg.name, kind, {"url": url, "body": body})

        if self.mode in ("replay", "record"):
            entry = self.cache.get(key)
            if entry is not None:
                return adapter.parse(entry["response"])
            if self.mode == "replay":
                raise CacheMiss(key)

        token = self.check_credentials(cfg)
        url, headers, body = adapter.build(cfg, payload, token)
        response = self._post(cfg, url, headers, body)
        try:
            value = adapter.parse(response)
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"provider {cfg.name}: unexpected response shape") from exc
        if self.mode == "record":
            self.cache.put(key, cfg, {"url": url, "body": body}, response)
        return value

    def chat_complete(self, cfg: ProviderConfig, prompt: str) -> str:
        return str(self.request(cfg, "chat", prompt))

    def embed(self, cfg: ProviderConfig, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.asarray(self.request(cfg, "embedding", text), dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise ProviderError(f"provider {cfg.name}: embedding is not a non-empty vector")
        if not np.any(vec):
            raise ProviderError(f"provider {cfg.name}: backend returned a zero vector")
        return vec


def chat_complete(cfg: ProviderConfig, prompt: str, mode: str, cache: str | Path | ResponseCache | None = None,
                  **kwargs: Any) -> str:
    return ProviderClient(mode, cache, **kwargs).chat_complete(cfg, prompt)


def embed(cfg: ProviderConfig, text: str, mode: str, cache: str | Path | ResponseCache | None = None,
          **kwargs: Any) -> np.ndarray:
    return ProviderClient(mode, cache, **kwargs).embed(cfg, text)
