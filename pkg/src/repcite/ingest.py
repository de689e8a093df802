"""Per-year citation counts from the Semantic Scholar graph API, with a
file cache.

The client pages through ``/graph/v1/paper/{id}/citations?fields=year`` and
tallies citing papers by year. Each result is cached as a one-line JSON
document at ``{cache_dir}/{source}/{quoted paper id}.json``.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import quote

log = logging.getLogger(__name__)

SOURCE = "semanticscholar"
API_KEY_ENV = "S2_API_KEY"
BASE_URL_ENV = "S2_API_URL"
DEFAULT_BASE_URL = "https://api.semanticscholar.org"


class IngestError(RuntimeError):
    pass


class NotFoundError(IngestError):
    pass


class RateLimitError(IngestError):
    pass


@dataclass(frozen=True)
class ClientConfig:
    base_url: str | None = None
    api_key: str | None = None
    requests_per_second: float = 1.0
    page_size: int = 1000
    max_retries: int = 5
    backoff_base: float = 1.0
    timeout: float = 30.0

    def resolved_base_url(self) -> str:
        return (self.base_url or os.environ.get(BASE_URL_ENV) or DEFAULT_BASE_URL).rstrip("/")

    def resolved_api_key(self) -> str | None:
        return self.api_key or os.environ.get(API_KEY_ENV)


@dataclass
class CitationFetchResult:
    paper_id: str
    year_counts: dict[int, int]
    unknown_year: int
    total: int
    fetched_at: str
    source: str = SOURCE

    def __post_init__(self):
        self.year_counts = {int(y): int(n) for y, n in self.year_counts.items()}
        current = datetime.now(timezone.utc).year
        if any(y > current for y in self.year_counts):
            raise ValueError(f"{self.paper_id}: citation year after {current}")
        if any(n < 0 for n in self.year_counts.values()) or self.unknown_year < 0:
            raise ValueError(f"{self.paper_id}: negative citation count")

    def to_json(self) -> str:
        doc = asdict(self)
        doc["year_counts"] = {str(y): n for y, n in sorted(self.year_counts.items())}
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CitationFetchResult":
        doc = json.loads(text)
        return cls(
            doc["paper_id"], {int(y): n for y, n in doc["year_counts"].items()}, int(doc["unknown_year"]),
            int(doc["total"]), doc["fetched_at"], doc.get("source", SOURCE),
        )


def _cache_path(cache_dir, source: str, paper_id: str) -> Path:
    return Path(cache_dir) / source / f"{quote(paper_id, safe='')}.json"


def cache_store(cache_dir, result: CitationFetchResult) -> Path:
    """Write ``result`` atomically (temp file + rename in the same directory)."""
    path = _cache_path(cache_dir, result.source, result.paper_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(result.to_json() + "\n")
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def cache_lookup(cache_dir, paper_id: str, source: str = SOURCE) -> CitationFetchResult | None:
    """Return the cached result, or None when absent or unreadable."""
    path = _cache_path(cache_dir, source, paper_id)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        return None
    try:
        result = CitationFetchResult.from_json(text.splitlines()[0] if text else "")
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        log.warning("skipping corrupt cache entry %s: %s", path, exc)
        return None
    if result.paper_id != paper_id or result.source != source:
        log.warning("cache entry %s holds %s/%s; ignored", path, result.source, result.paper_id)
        return None
    return result


class RateLimiter:
    """Enforces a minimum interval between requests across threads."""

    def __init__(self, per_second: float, clock=time.monotonic, sleep=time.sleep):
        if per_second <= 0:
            raise ValueError("requests per second must be positive")
        self.interval = 1.0 / per_second
        self._clock, self._sleep = clock, sleep
        self._next = None
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is not None and now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.interval


@dataclass
class CitationClient:
    """HTTP client for citation listings. ``session`` needs a
    ``get(url, params=, headers=, timeout=)`` method returning an object with
    ``status_code``, ``headers`` and ``json()`` (``requests.Session`` fits)."""

    config: ClientConfig = field(default_factory=ClientConfig)
    session: object = None
    sleep: object = time.sleep
    limiter: RateLimiter | None = None
    requests_made: int = 0

    def __post_init__(self):
        if self.session is None:
            import requests

            self.session = requests.Session()
        if self.limiter is None:
            self.limiter = RateLimiter(self.config.requests_per_second, sleep=self.sleep)

    def _get(self, url: str, params: dict) -> dict:
        headers = {}
        key = self.config.resolved_api_key()
        if key:
            headers["x-api-key"] = key
        for attempt in range(self.config.max_retries + 1):
            self.limiter.wait()
            self.requests_made += 1
            resp = self.session.get(url, params=params, headers=headers, timeout=self.config.timeout)
            status = resp.status_code
            if status == 200:
                return resp.json()
            if status == 404:
                raise NotFoundError(f"paper not found: {url}")
            if status == 429 or status >= 500:
                if attempt == self.config.max_retries:
                    break
                delay = self.config.backoff_base * 2**attempt
                retry_after = (resp.headers or {}).get("Retry-After")
                if retry_after is not None:
                    try:
                        delay = max(delay, float(retry_after))
                    except ValueError:
                        pass
                log.info("HTTP %d from %s; retrying in %.1fs", status, url, delay)
                self.sleep(delay)
                continue
            raise IngestError(f"HTTP {status} from {url}")
        raise RateLimitError(f"giving up on {url} after {self.config.max_retries} retries")

    def fetch(self, paper_id: str) -> CitationFetchResult:
        url = f"{self.config.resolved_base_url()}/graph/v1/paper/{quote(paper_id, safe=':')}/citations"
        counts: dict[int, int] = {}
        unknown = total = 0
        offset = 0
        while True:
            page = self._get(url, {"fields": "year", "limit": self.config.page_size, "offset": offset})
            items = page.get("data") or []
            for item in items:
                year = (item.get("citingPaper") or {}).get("year")
                total += 1
                if year is None:
                    unknown += 1
                else:
                    counts[int(year)] = counts.get(int(year), 0) + 1
            nxt = page.get("next")
            if nxt is None or not items:
                break
            offset = int(nxt)
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return CitationFetchResult(paper_id, counts, unknown, total, stamp)


def fetch_citations_by_year(paper_id: str, client: CitationClient, cache_dir=None) -> CitationFetchResult:
    """Cached fetch: a cache hit makes no request; a miss is stored before
    returning."""
    if cache_dir is not None:
        hit = cache_lookup(cache_dir, paper_id)
        if hit is not None:
            return hit
    result = client.fetch(paper_id)
    if cache_dir is not None:
        cache_store(cache_dir, result)
    return result
