"""Tag and release-asset lists per package, from fixtures or the GitHub API."""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional

from .pkgid import PackageIdentity, UnknownPackage, UnknownTag, match_github_url

log = logging.getLogger(__name__)

TOKEN_ENV = "GITHUB_TOKEN"
CACHE_ENV = "PINMETA_CACHE_DIR"
API_ROOT = "https://api.github.com"
_FIXTURE_KEYS = frozenset({"tags", "release_asset_urls", "fetched_at"})


class RegistryLoadError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class PackageRecord:
    tags: tuple[str, ...]
    release_asset_urls: frozenset[str] = frozenset()
    fetched_at: Optional[str] = None
    tag_set: frozenset[str] = field(init=False, repr=False, compare=False)
    release_keys: frozenset = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(set(self.tags)) != len(self.tags):
            dup = next(t for t in self.tags if self.tags.count(t) > 1)
            raise ValueError(f"duplicate tag {dup!r}")
        object.__setattr__(self, "tag_set", frozenset(self.tags))
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tags)})
        keys = set()
        for url in self.release_asset_urls:
            ref = match_github_url(url)
            if ref is not None and ref.asset_file:
                keys.add(ref.release_key)
        object.__setattr__(self, "release_keys", frozenset(keys))

    def index(self, tag: str) -> int:
        try:
            return self._index[tag]
        except KeyError:
            raise UnknownTag(tag) from None


@dataclass(frozen=True)
class RegistrySnapshot:
    packages: Mapping[PackageIdentity, PackageRecord] = field(default_factory=dict)
    errors: Mapping[str, str] = field(default_factory=dict, compare=False)

    def record(self, identity: PackageIdentity) -> PackageRecord:
        try:
            return self.packages[identity]
        except KeyError:
            raise UnknownPackage(str(identity)) from None

    def __contains__(self, identity: object) -> bool:
        return identity in self.packages

    def tags(self, identity: PackageIdentity) -> tuple[str, ...]:
        return self.record(identity).tags

    def tag_index(self, identity: PackageIdentity, tag: str) -> int:
        return self.record(identity).index(tag)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for ident in sorted(self.packages):
            rec = self.packages[ident]
            entry: dict[str, Any] = {"tags": list(rec.tags), "release_asset_urls": sorted(rec.release_asset_urls)}
            if rec.fetched_at is not None:
                entry["fetched_at"] = rec.fetched_at
            out[str(ident)] = entry
        return out

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def restrict(self, identities: Iterable[PackageIdentity]) -> "RegistrySnapshot":
        keep = set(identities)
        return RegistrySnapshot({k: v for k, v in self.packages.items() if k in keep}, dict(self.errors))


def snapshot_from_json(data: Any) -> RegistrySnapshot:
    if not isinstance(data, dict):
        raise RegistryLoadError("<root>", "expected a JSON object of packages")
    packages: dict[PackageIdentity, PackageRecord] = {}
    for key, entry in data.items():
        try:
            ident = PackageIdentity.parse(key)
        except ValueError as exc:
            raise RegistryLoadError(key, str(exc)) from None
        if ident in packages:
            raise RegistryLoadError(key, "duplicate package (names are case-insensitive)")
        if not isinstance(entry, dict):
            raise RegistryLoadError(key, "expected an object")
        extra = set(entry) - _FIXTURE_KEYS
        if extra:
            bad = sorted(extra)[0]
            raise RegistryLoadError(f"{key}.{bad}", "unknown key")
        tags = entry.get("tags")
        if not isinstance(tags, list) or not all(isinstance(t, str) and t for t in tags):
            raise RegistryLoadError(f"{key}.tags", "expected a list of non-empty strings")
        urls = entry.get("release_asset_urls", [])
        if not isinstance(urls, list) or not all(isinstance(u, str) for u in urls):
            raise RegistryLoadError(f"{key}.release_asset_urls", "expected a list of strings")
        fetched_at = entry.get("fetched_at")
        if fetched_at is not None and not isinstance(fetched_at, str):
            raise RegistryLoadError(f"{key}.fetched_at", "expected a string")
        try:
            packages[ident] = PackageRecord(tuple(tags), frozenset(urls), fetched_at)
        except ValueError as exc:
            raise RegistryLoadError(f"{key}.tags", str(exc)) from None
    return RegistrySnapshot(packages)


def load_fixture(path: str | Path) -> RegistrySnapshot:
    """Load a registry fixture file. Tag order is taken as written."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RegistryLoadError("<root>", f"invalid JSON: {exc}") from None
    return snapshot_from_json(data)


_RUN = re.compile(r"\d+|\D+")


def version_key(tag: str) -> tuple:
    """Sort key splitting a tag into numeric and non-numeric runs."""
    key = []
    for run in _RUN.findall(tag):
        key.append((0, int(run), run) if run.isdigit() else (1, 0, run))
    return tuple(key)


def order_tags(tags: Iterable[str], created: Optional[Mapping[str, str]] = None) -> list[str]:
    created = created or {}
    return sorted(set(tags), key=lambda t: (version_key(t), created.get(t, ""), t))


class GitHubClient:
    """Minimal GitHub REST client with serialized requests and backoff.

    ``session`` only needs a ``get(url, headers=..., params=..., timeout=...)``
    method returning an object with ``status_code``, ``headers``, ``json()``
    and ``links``, which is what :mod:`requests` provides.
    """

    def __init__(
        self,
        token: Optional[str] = None,
        session: Any = None,
        max_retries: int = 5,
        sleep: Callable[[float], None] = time.sleep,
        api_root: str = API_ROOT,
    ) -> None:
        if session is None:
            import requests

            session = requests.Session()
        self.session = session
        self.token = token
        self.max_retries = max_retries
        self.sleep = sleep
        self.api_root = api_root.rstrip("/")
        self.request_count = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Accept": "application/vnd.github+json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def get_pages(self, path: str) -> list[Any]:
        url: Optional[str] = f"{self.api_root}{path}"
        params: Optional[dict] = {"per_page": 100}
        items: list[Any] = []
        while url:
            resp = self._get(url, params)
            items.extend(resp.json())
            url = (getattr(resp, "links", None) or {}).get("next", {}).get("url")
            params = None
        return items

    def _get(self, url: str, params: Optional[dict]) -> Any:
        for attempt in range(self.max_retries + 1):
            self.request_count += 1
            resp = self.session.get(url, headers=self._headers(), params=params, timeout=30)
            status = resp.status_code
            if status == 404:
                raise FileNotFoundError(url)
            if status in (403, 429) and attempt < self.max_retries:
                retry_after = resp.headers.get("Retry-After")
                delay = float(retry_after) if retry_after else float(2**attempt)
                log.warning("rate limited on %s, retrying in %.0fs", url, delay)
                self.sleep(delay)
                continue
            if status >= 400:
                raise RuntimeError(f"GitHub API returned {status} for {url}")
            return resp
        raise RuntimeError(f"giving up on {url}")


def _cache_path(cache_dir: Path, ident: PackageIdentity, day: str) -> Path:
    return cache_dir / day / f"{ident.owner}__{ident.repo}.json"


def fetch_live(
    identities: Iterable[PackageIdentity],
    credentials: Optional[str] = None,
    *,
    cache_dir: Optional[str | Path] = None,
    client: Optional[GitHubClient] = None,
    today: Optional[str] = None,
) -> RegistrySnapshot:
    """Fetch tag and release lists for each package from the GitHub API.

    Results are cached per package and UTC day. Failures are collected in
    ``snapshot.errors`` instead of raising.
    """
    if credentials is None:
        credentials = os.environ.get(TOKEN_ENV)
    if cache_dir is None and os.environ.get(CACHE_ENV):
        cache_dir = os.environ[CACHE_ENV]
    now = datetime.now(timezone.utc)
    day = today or now.strftime("%Y-%m-%d")
    cache = Path(cache_dir) if cache_dir else None

    packages: dict[PackageIdentity, PackageRecord] = {}
    errors: dict[str, str] = {}
    for ident in sorted(set(identities)):
        path = _cache_path(cache, ident, day) if cache else None
        if path is not None and path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            packages[ident] = PackageRecord(tuple(entry["tags"]), frozenset(entry["release_asset_urls"]), entry.get("fetched_at"))
            continue
        if client is None:
            client = GitHubClient(credentials)
        try:
            tag_items = client.get_pages(f"/repos/{ident.owner}/{ident.repo}/tags")
            release_items = client.get_pages(f"/repos/{ident.owner}/{ident.repo}/releases")
        except FileNotFoundError:
            errors[str(ident)] = "NotFound"
            continue
        except Exception as exc:  # network failures must not abort the batch
            errors[str(ident)] = f"{type(exc).__name__}: {exc}"
            continue
        created = {r["tag_name"]: r.get("created_at") or "" for r in release_items if r.get("tag_name")}
        tags = order_tags([t["name"] for t in tag_items if t.get("name")], created)
        assets = frozenset(
            a["browser_download_url"] for r in release_items for a in r.get("assets", []) if a.get("browser_download_url")
        )
        record = PackageRecord(tuple(tags), assets, now.strftime("%Y-%m-%dT%H:%M:%SZ"))
        packages[ident] = record
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            payload = {"tags": list(record.tags), "release_asset_urls": sorted(assets), "fetched_at": record.fetched_at}
            path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return RegistrySnapshot(packages, errors)
