"""Rate-limited, cached client for a remote next-token log-probability service.

Wire format
-----------
Requests are ``POST {endpoint}{path}`` with a JSON body::

    {"model": <model id>, "prompt": <concatenated prefix tokens>,
     "max_tokens": 0, "temperature": 0, "logprobs": <top_logprobs>, "echo": false}

The credential is read from the environment variable named by
``api_key_env`` and sent in the ``auth_header`` header.  The response must
contain ``choices[0].logprobs.top_logprobs[0]``, a mapping from candidate
token to its natural-log probability.  Values are converted to bits before
they leave this module.

Cache layout
------------
``<cache_dir>/logprobs.jsonl`` holds one JSON object per line::

    {"key": ..., "model": ..., "prefix_digest": ..., "request_digest": ...,
     "response": <raw response object>, "timestamp": <unix seconds>}

``key`` is sha256(model id, NUL, prefix digest).  Records are append-only and
each key is written at most once.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx
from filelock import FileLock

from ..errors import BackendError, ConfigError, ProtocolError, RetryableError
from ..seqcore import as_bits
from .analytic import clamp

log = logging.getLogger(__name__)

CACHE_FILE = "logprobs.jsonl"
LN2 = math.log(2.0)


@dataclass(frozen=True)
class RemoteClientConfig:
    endpoint: str
    model: str
    cache_dir: Path
    max_concurrency: int = 10
    max_retries: int = 3
    api_key_env: str = "MARTINGAP_API_KEY"
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    path: str = "/v1/completions"
    top_logprobs: int = 1
    timeout: float = 60.0
    backoff_base: float = 1.0
    backoff_cap: float = 30.0

    def __post_init__(self):
        if self.max_concurrency < 1:
            raise ConfigError("max_concurrency must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        object.__setattr__(self, "cache_dir", Path(self.cache_dir))


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def parse_top_logprobs(response: dict) -> dict[str, float]:
    """Extract next-token log-probabilities (base 2) from a raw response."""
    try:
        top = response["choices"][0]["logprobs"]["top_logprobs"][0]
        out = {str(tok): float(lp) / LN2 for tok, lp in top.items()}
    except (KeyError, IndexError, TypeError, ValueError, AttributeError) as exc:
        raise ProtocolError(f"malformed logprob response: {exc!r}") from exc
    if not out or any(v > 1e-9 or math.isnan(v) for v in out.values()):
        raise ProtocolError("log-probabilities must be finite and <= 0")
    return out


class RemoteLogprobClient:
    """Bounded-concurrency client with exponential backoff and a disk cache.

    ``stats`` counts network requests, retries and cache hits; the counters
    are what the tests inspect.
    """

    def __init__(self, config: RemoteClientConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._slots = threading.BoundedSemaphore(config.max_concurrency)
        self._http = httpx.Client(timeout=config.timeout, transport=transport)
        self._index: dict[str, dict] = {}
        self._key_locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.stats = {"requests": 0, "retries": 0, "cache_hits": 0}
        config.cache_dir.mkdir(parents=True, exist_ok=True)
        self._cache_path = config.cache_dir / CACHE_FILE
        self._file_lock = FileLock(str(self._cache_path) + ".lock")
        self._load_cache()

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _bump(self, key: str):
        with self._guard:
            self.stats[key] += 1

    def _load_cache(self):
        if not self._cache_path.exists():
            return
        with self._cache_path.open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("skipping corrupt cache line in %s", self._cache_path)
                    continue
                self._index.setdefault(rec["key"], rec)

    def cache_key(self, tokens: Sequence[str]) -> str:
        return hashlib.sha256(f"{self.config.model}\0{_digest(list(tokens))}".encode()).hexdigest()

    def _lock_for(self, key: str) -> threading.Lock:
        with self._guard:
            return self._key_locks.setdefault(key, threading.Lock())

    def _credential(self) -> str:
        value = os.environ.get(self.config.api_key_env)
        if not value:
            raise ConfigError(f"credential variable {self.config.api_key_env} is not set")
        return value

    def _request_body(self, tokens: Sequence[str]) -> dict:
        return {
            "model": self.config.model,
            "prompt": "".join(tokens),
            "max_tokens": 0,
            "temperature": 0,
            "logprobs": self.config.top_logprobs,
            "echo": False,
        }

    def _post(self, body: dict) -> dict:
        cfg = self.config
        secret = self._credential()
        header = f"{cfg.auth_scheme} {secret}" if cfg.auth_scheme else secret
        url = cfg.endpoint.rstrip("/") + cfg.path
        attempt = 0
        while True:
            with self._slots:
                self._bump("requests")
                try:
                    resp = self._http.post(url, json=body, headers={cfg.auth_header: header})
                    status = resp.status_code
                except httpx.TransportError as exc:
                    status, resp = None, exc
            if status is not None and status < 400:
                try:
                    return resp.json()
                except ValueError as exc:
                    raise ProtocolError("response body is not JSON") from exc
            retryable = status is None or status == 429 or status >= 500
            if not retryable:
                raise BackendError(f"remote service returned HTTP {status}")
            if attempt >= cfg.max_retries:
                raise RetryableError(f"gave up after {attempt} retries (last status {status})")
            attempt += 1
            self._bump("retries")
            delay = min(cfg.backoff_cap, cfg.backoff_base * 2 ** (attempt - 1))
            log.info("remote backend status %s, retry %d in %.3fs", status, attempt, delay)
            time.sleep(delay)

    def logprobs(self, tokens: Sequence[str]) -> dict[str, float]:
        """Next-token log2-probabilities after ``tokens``."""
        tokens = list(tokens)
        key = self.cache_key(tokens)
        rec = self._index.get(key)
        if rec is None:
            with self._lock_for(key):
                rec = self._index.get(key)
                if rec is None:
                    body = self._request_body(tokens)
                    raw = self._post(body)
                    parse_top_logprobs(raw)
                    rec = {
                        "key": key,
                        "model": self.config.model,
                        "prefix_digest": _digest(tokens),
                        "request_digest": _digest(body),
                        "response": raw,
                        "timestamp": time.time(),
                    }
                    with self._file_lock, self._cache_path.open("a") as fh:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    self._index[key] = rec
                    return parse_top_logprobs(raw)
        self._bump("cache_hits")
        return parse_top_logprobs(rec["response"])

    def logprobs_many(self, prefixes: Sequence[Sequence[str]]) -> list[dict[str, float]]:
        with ThreadPoolExecutor(max_workers=self.config.max_concurrency) as pool:
            return list(pool.map(self.logprobs, prefixes))


def remote_predict(tokens: Sequence[str], config: RemoteClientConfig) -> dict[str, float]:
    """One-shot helper: open a client, query ``tokens`` and close it."""
    with RemoteLogprobClient(config) as client:
        return client.logprobs(tokens)


class RemotePredictor:
    """Binary predictor backed by a :class:`RemoteLogprobClient`.

    Bits are rendered as ``symbols[bit]`` tokens.  If only the top token is
    returned, the other symbol gets the complementary mass.
    """

    def __init__(self, client: RemoteLogprobClient, symbols: tuple[str, str] = (" 0", " 1")):
        self.client = client
        self.symbols = symbols
        self.name = f"remote({client.config.model})"

    def predict_one(self, prefix) -> float:
        x = as_bits(prefix)
        lp = self.client.logprobs([self.symbols[b] for b in x.bits])
        zero, one = self.symbols
        if one in lp:
            return clamp(2.0 ** lp[one])
        if zero in lp:
            return clamp(1.0 - 2.0 ** lp[zero])
        raise ProtocolError(f"neither {zero!r} nor {one!r} among returned tokens")
