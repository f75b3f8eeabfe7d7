"""Query backends: a live chat-completions client plus deterministic stand-ins.

Every backend exposes ``query(request) -> QueryResponse``. The replay
backend serves answers from an append-only NDJSON cache keyed by a digest
of (model id, prompt, image bytes), which makes whole runs reproducible
offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import requests

from .core import ImageBuffer, InvalidInputError, RegionMap

logger = logging.getLogger(__name__)

API_KEY_ENV = "GPT4VAD_API_KEY"


class BackendError(RuntimeError):
    pass


class ConfigurationError(BackendError):
    pass


class TransportError(BackendError):
    def __init__(self, message: str, status: int | None = None) -> None:
        super().__init__(message)
        self.status = status


class CacheMiss(BackendError):
    def __init__(self, digest: str) -> None:
        super().__init__(f"no cached response for digest {digest}")
        self.digest = digest


class CacheLoadError(BackendError):
    def __init__(self, path: Path, offset: int, reason: str) -> None:
        super().__init__(f"{path}: corrupt record at byte offset {offset}: {reason}")
        self.path = path
        self.offset = offset


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def request_digest(model_id: str, prompt_text: str, image_bytes: bytes) -> str:
    h = hashlib.sha256()
    # length-prefixed fields so no two field splits hash alike
    for part in (model_id.encode("utf-8"), prompt_text.encode("utf-8"), image_bytes):
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return h.hexdigest()


@dataclass(frozen=True)
class QueryRequest:
    """One prompt + fused image.

    ``region_map`` and ``gt_mask`` are side information for the oracle and
    constant backends; they are not sent anywhere and not part of the digest.
    """

    image_png: bytes
    prompt_text: str
    model_id: str
    temperature: float = 0.0
    region_map: RegionMap | None = field(default=None, compare=False, repr=False)
    gt_mask: np.ndarray | None = field(default=None, compare=False, repr=False)

    @classmethod
    def build(cls, fused_image: ImageBuffer, prompt_text: str, model_id: str, **kw) -> "QueryRequest":
        return cls(fused_image.to_png_bytes(), prompt_text, model_id, **kw)

    @property
    def digest(self) -> str:
        return request_digest(self.model_id, self.prompt_text, self.image_png)

    @property
    def prompt_sha(self) -> str:
        return _sha256(self.prompt_text.encode("utf-8"))


@dataclass(frozen=True)
class QueryResponse:
    raw_text: str
    model_id: str
    latency_ms: float = 0.0
    from_cache: bool = False


class Backend(Protocol):
    model_id: str

    def query(self, req: QueryRequest) -> QueryResponse: ...


class ResponseCache:
    """Content-addressed response store backed by one NDJSON file.

    Records are appended and never rewritten; the first record stored for a
    digest wins. Reads are lock-free against the in-memory index.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._index: dict[str, dict] = {}
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        offset = 0
        with open(self.path, "rb") as f:
            for line in f:
                stripped = line.strip()
                if stripped:
                    try:
                        rec = json.loads(stripped.decode("utf-8"))
                        digest = rec["digest"]
                        rec["raw_text"], rec["model_id"]
                    except (ValueError, KeyError, TypeError) as exc:
                        raise CacheLoadError(self.path, offset, str(exc)) from None
                    self._index.setdefault(digest, rec)
                offset += len(line)

    def __contains__(self, digest: str) -> bool:
        return digest in self._index

    def __len__(self) -> int:
        return len(self._index)

    def get(self, digest: str) -> QueryResponse | None:
        rec = self._index.get(digest)
        if rec is None:
            return None
        return QueryResponse(rec["raw_text"], rec["model_id"], 0.0, True)

    def put(self, digest: str, response: QueryResponse, prompt_sha: str = "") -> bool:
        """Append a record; returns False (and writes nothing) if the digest is known."""
        with self._lock:
            if digest in self._index:
                return False
            rec = {
                "digest": digest,
                "model_id": response.model_id,
                "prompt_sha": prompt_sha,
                "raw_text": response.raw_text,
                "timestamp": time.time(),
            }
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            self._index[digest] = rec
            return True


class ReplayBackend:
    def __init__(self, cache: ResponseCache | str | Path, model_id: str) -> None:
        self.cache = cache if isinstance(cache, ResponseCache) else ResponseCache(cache)
        self.model_id = model_id

    def query(self, req: QueryRequest) -> QueryResponse:
        hit = self.cache.get(req.digest)
        if hit is None:
            raise CacheMiss(req.digest)
        return hit


class RecordingBackend:
    """Wraps a backend and stores each fresh answer in a cache."""

    def __init__(self, inner: Backend, cache: ResponseCache) -> None:
        self.inner = inner
        self.cache = cache
        self.model_id = inner.model_id

    def query(self, req: QueryRequest) -> QueryResponse:
        resp = self.inner.query(req)
        if not resp.from_cache:
            self.cache.put(req.digest, resp, req.prompt_sha)
        return resp


class ConstantBackend:
    """Answers ``region i: c`` for every region id of the request's map."""

    def __init__(self, score: float = 0.5, model_id: str = "constant") -> None:
        self.score = score
        self.model_id = model_id

    def query(self, req: QueryRequest) -> QueryResponse:
        if req.region_map is None:
            raise InvalidInputError("constant backend needs the request's region map")
        text = "; ".join(f"region {i}: {self.score}" for i in req.region_map.ids)
        return QueryResponse(text or "none", self.model_id)


def oracle_query(rm: RegionMap, gt_mask: np.ndarray, model_id: str = "oracle") -> QueryResponse:
    """Score each region by the fraction of its pixels inside the GT mask."""
    gt = np.asarray(gt_mask) > 0
    if gt.shape != rm.shape:
        raise InvalidInputError(f"GT mask shape {gt.shape} does not match region map {rm.shape}")
    k = len(rm.regions)
    inside = np.bincount(rm.labels[gt], minlength=k + 1)
    area = np.bincount(rm.labels.ravel(), minlength=k + 1)
    parts = [f"region {i}: {inside[i] / area[i]:.3f}" for i in range(1, k + 1) if inside[i] > 0]
    return QueryResponse("; ".join(parts) or "none", model_id)


class OracleBackend:
    def __init__(self, model_id: str = "oracle") -> None:
        self.model_id = model_id

    def query(self, req: QueryRequest) -> QueryResponse:
        if req.region_map is None:
            raise InvalidInputError("oracle backend needs the request's region map")
        rm = req.region_map
        gt = req.gt_mask if req.gt_mask is not None else np.zeros(rm.shape, dtype=bool)
        return oracle_query(rm, gt, self.model_id)


class RateLimiter:
    """Spaces calls at least ``60 / rpm`` seconds apart across threads."""

    def __init__(self, rpm: float | None, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep) -> None:
        self.interval = 60.0 / rpm if rpm else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            wait = self._next - now
            self._next = max(now, self._next) + self.interval
        if wait > 0:
            self._sleep(wait)


RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


class LiveBackend:
    """OpenAI-style chat-completions client sending one inline PNG image."""

    def __init__(
        self,
        model_id: str,
        base_url: str = "https://api.openai.com",
        path: str = "/v1/chat/completions",
        api_key: str | None = None,
        requests_per_minute: float | None = 10.0,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        timeout: float = 120.0,
        max_tokens: int = 512,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise ConfigurationError(f"no API key: set {API_KEY_ENV}")
        self.model_id = model_id
        self.url = base_url.rstrip("/") + "/" + path.lstrip("/")
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.timeout = timeout
        self.max_tokens = max_tokens
        self.session = session or requests.Session()
        self._sleep = sleep
        self.limiter = RateLimiter(requests_per_minute, sleep=sleep)

    def payload(self, req: QueryRequest) -> dict:
        b64 = base64.b64encode(req.image_png).decode("ascii")
        return {
            "model": req.model_id,
            "temperature": req.temperature,
            "max_tokens": self.max_tokens,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": req.prompt_text},
                        {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}},
                    ],
                }
            ],
        }

    def query(self, req: QueryRequest) -> QueryResponse:
        body = self.payload(req)
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        status: int | None = None
        last_error = ""
        for attempt in range(self.max_attempts):
            if attempt:
                self._sleep(self.backoff_base * self.backoff_factor ** (attempt - 1))
            self.limiter.acquire()
            start = time.perf_counter()
            try:
                r = self.session.post(self.url, json=body, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                status, last_error = None, str(exc)
                logger.warning("attempt %d failed: %s", attempt + 1, exc)
                continue
            status = r.status_code
            if status in RETRY_STATUSES:
                last_error = r.text[:200]
                logger.warning("attempt %d got HTTP %d", attempt + 1, status)
                continue
            if status != 200:
                raise TransportError(f"HTTP {status}: {r.text[:200]}", status)
            latency = (time.perf_counter() - start) * 1000.0
            try:
                text = r.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"malformed response body: {exc}", status) from None
            if isinstance(text, list):
                text = "".join(p.get("text", "") for p in text if isinstance(p, dict))
            return QueryResponse(text or "", self.model_id, latency, False)
        raise TransportError(
            f"giving up after {self.max_attempts} attempts (last status {status}): {last_error}", status
        )
