"""Per-Dockerfile package timelines from git history, and their classification."""

from __future__ import annotations

import enum
import json
import logging
import os
import subprocess
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path, PurePosixPath
from typing import Any, Iterable, Optional, Sequence

from .dockerfile import SourceSpan, is_dockerfile_name, parse_dockerfile
from .extract import build_env, extract_urls
from .pkgid import PackageIdentity, PackageRef, PinnedPackage, UnknownPackage, match_github_url, validate
from .registry import RegistrySnapshot

log = logging.getLogger(__name__)

TIMELINES_SCHEMA = "pinmeta.timelines/1"


class DockerfileStatus(str, enum.Enum):
    DORMANT = "dormant"
    ALL_PACKAGES_DELETED = "all packages deleted"
    MULTIPLE_VERSIONS = "packages with multiple versions"
    NO_PACKAGE_UPDATED = "no package updated"
    PACKAGE_UPDATED = "package updated"


class RepoStatus(str, enum.Enum):
    WITH_UPDATE = "with update"
    NO_UPDATE = "no update"
    OTHER = "other"


STATUS_PRECEDENCE = tuple(DockerfileStatus)


class RepositoryError(RuntimeError):
    """A corpus entry could not be read as a git repository."""


def to_iso(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def from_iso(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


# -- raw mining (registry independent, picklable) ---------------------------


@dataclass(frozen=True)
class UrlRecord:
    url: str
    source_kind: str
    line: int
    fully_resolved: bool

    def to_json(self) -> dict[str, Any]:
        return {"url": self.url, "source_kind": self.source_kind, "line": self.line, "fully_resolved": self.fully_resolved}


@dataclass(frozen=True)
class RawSnapshot:
    commit: str
    timestamp: datetime
    valid: bool = True
    deleted: bool = False
    urls: tuple[UrlRecord, ...] = ()


@dataclass
class RawDockerfile:
    path: str
    snapshots: list[RawSnapshot] = field(default_factory=list)


@dataclass
class RawRepo:
    repo: str
    source: str
    kind: str  # git | json
    last_commit: Optional[datetime] = None
    dockerfiles: list[RawDockerfile] = field(default_factory=list)
    error: Optional[str] = None


def analyze_text(text: bytes | str, path: str, *, lenient_from: bool = False) -> tuple[bool, tuple[UrlRecord, ...]]:
    """Parse one Dockerfile version and return (valid, extracted URLs)."""
    ast = parse_dockerfile(text, path, lenient_from=lenient_from)
    urls = extract_urls(ast, build_env(ast))
    return ast.valid, tuple(UrlRecord(u.url, u.source_kind, u.line, u.fully_resolved) for u in urls)


def _git(repo: str | Path, *args: str, data: Optional[bytes] = None) -> bytes:
    # never let git discover an enclosing repository
    env = dict(os.environ, GIT_CEILING_DIRECTORIES=str(Path(repo).resolve().parent))
    proc = subprocess.run(
        ["git", "-C", str(repo), "-c", "core.quotepath=off", *args],
        input=data,
        capture_output=True,
        check=False,
        env=env,
    )
    if proc.returncode != 0:
        raise RepositoryError(proc.stderr.decode("utf-8", "replace").strip() or f"git {args[0]} failed")
    return proc.stdout


def _cat_files(repo: str | Path, specs: Sequence[str]) -> list[Optional[bytes]]:
    if not specs:
        return []
    out = _git(repo, "cat-file", "--batch", data="".join(s + "\n" for s in specs).encode("utf-8"))
    results: list[Optional[bytes]] = []
    pos = 0
    for _ in specs:
        nl = out.index(b"\n", pos)
        header = out[pos:nl].split()
        pos = nl + 1
        if len(header) < 3 or header[-1] == b"missing":
            results.append(None)
            continue
        size = int(header[2])
        results.append(out[pos : pos + size])
        pos += size + 1
    return results


def read_blob(repo: str | Path, commit: str, path: str) -> Optional[bytes]:
    return _cat_files(repo, [f"{commit}:{path}"])[0]


def _log_changes(repo: str | Path) -> list[tuple[str, datetime, list[tuple[str, str, Optional[str]]]]]:
    out = _git(
        repo,
        "log",
        "--first-parent",
        "--diff-merges=first-parent",
        "--reverse",
        "-M",
        "--name-status",
        "-z",
        "--format=%x01%H%x00%ct",
        "HEAD",
    ).decode("utf-8", "replace")
    commits = []
    for chunk in out.split("\x01")[1:]:
        fields = chunk.split("\x00")
        sha, ct = fields[0], int(fields[1])
        tokens = [t.lstrip("\n") for t in fields[2:]]
        changes: list[tuple[str, str, Optional[str]]] = []
        i = 0
        while i < len(tokens):
            status = tokens[i]
            if not status:
                i += 1
                continue
            if status[0] in "RC" and i + 2 < len(tokens):
                changes.append((status[0], tokens[i + 1], tokens[i + 2]))
                i += 3
            elif i + 1 < len(tokens):
                changes.append((status[0], tokens[i + 1], None))
                i += 2
            else:
                break
        commits.append((sha, datetime.fromtimestamp(ct, timezone.utc), changes))
    return commits


def _is_df(path: str) -> bool:
    return is_dockerfile_name(PurePosixPath(path).name)


def mine_git_repo(path: str | Path, repo_id: Optional[str] = None, *, lenient_from: bool = False) -> RawRepo:
    """Walk first-parent history and extract URLs from every Dockerfile version."""
    path = Path(path)
    repo_id = repo_id or path.name
    raw = RawRepo(repo_id, str(path), "git")
    try:
        _git(path, "rev-parse", "--verify", "HEAD")
        last = _git(path, "log", "-1", "--format=%ct", "HEAD").decode().strip()
        raw.last_commit = datetime.fromtimestamp(int(last), timezone.utc)
        commits = _log_changes(path)
    except (RepositoryError, ValueError, OSError) as exc:
        raw.error = f"unreadable repository: {exc}"
        return raw

    timelines: dict[str, RawDockerfile] = {}
    finished: list[RawDockerfile] = []
    for sha, ts, changes in commits:
        to_read: list[str] = []
        for status, first, second in changes:
            if status == "R" and second is not None:
                if first in timelines:
                    tl = timelines.pop(first)
                    if _is_df(second):
                        tl.path = second
                        timelines[second] = tl
                    else:
                        tl.snapshots.append(RawSnapshot(sha, ts, deleted=True))
                        finished.append(tl)
                if _is_df(second):
                    to_read.append(second)
            elif status == "C" and second is not None:
                if _is_df(second):
                    to_read.append(second)
            elif status == "D":
                if first in timelines:
                    tl = timelines.pop(first)
                    tl.snapshots.append(RawSnapshot(sha, ts, deleted=True))
                    finished.append(tl)
            elif _is_df(first):
                to_read.append(first)
        blobs = _cat_files(path, [f"{sha}:{p}" for p in to_read])
        for p, blob in zip(to_read, blobs):
            if blob is None:
                continue
            valid, urls = analyze_text(blob, p, lenient_from=lenient_from)
            tl = timelines.setdefault(p, RawDockerfile(p))
            tl.snapshots.append(RawSnapshot(sha, ts, valid, False, urls))
    finished.extend(timelines.values())
    raw.dockerfiles = sorted(finished, key=lambda d: (d.path, d.snapshots[0].timestamp if d.snapshots else ts))
    return raw


# -- timelines --------------------------------------------------------------


@dataclass(frozen=True)
class Snapshot:
    commit: str
    timestamp: datetime
    packages: tuple[PinnedPackage, ...] = ()
    valid: bool = True
    deleted: bool = False

    def identities(self) -> frozenset[PackageIdentity]:
        return frozenset(p.ref.identity for p in self.packages)

    def tags_by_identity(self) -> dict[PackageIdentity, set[str]]:
        out: dict[PackageIdentity, set[str]] = {}
        for p in self.packages:
            out.setdefault(p.ref.identity, set()).add(p.ref.tag)
        return out


@dataclass(frozen=True)
class DockerfileTimeline:
    repo: str
    path: str
    snapshots: tuple[Snapshot, ...]
    present_at_head: bool = True

    @property
    def head(self) -> Snapshot:
        return self.snapshots[-1]


@dataclass
class RepoHistory:
    repo: str
    source: str
    kind: str
    last_commit: Optional[datetime]
    timelines: list[DockerfileTimeline] = field(default_factory=list)
    error: Optional[str] = None
    latest_urls: dict[str, tuple[UrlRecord, ...]] = field(default_factory=dict)
    latest_valid: dict[str, bool] = field(default_factory=dict)
    all_urls: set[str] = field(default_factory=set)
    excluded: dict[str, str] = field(default_factory=dict)


def _packages_for(
    snap: RawSnapshot,
    path: str,
    registry: RegistrySnapshot,
    keep_unresolved: bool,
    diagnostics: list[str],
) -> tuple[PinnedPackage, ...]:
    found = []
    for u in snap.urls:
        if not u.fully_resolved and not keep_unresolved:
            continue
        ref = match_github_url(u.url)
        if ref is None:
            continue
        try:
            ok = validate(ref, registry)
        except UnknownPackage:
            diagnostics.append(f"{path}@{snap.commit[:12]}: {ref.identity} not in registry")
            continue
        if ok:
            found.append(PinnedPackage(ref, SourceSpan(path, u.line, u.line), path, snap.commit, True))
    found.sort(key=lambda p: (p.location.start_line, str(p.ref.identity), p.ref.tag, p.ref.url))
    return tuple(found)


def validate_repo(
    raw: RawRepo,
    registry: RegistrySnapshot,
    *,
    keep_unresolved: bool = False,
    diagnostics: Optional[list[str]] = None,
) -> RepoHistory:
    """Attach registry-validated packages to raw history and keep analyzable Dockerfiles."""
    diags = diagnostics if diagnostics is not None else []
    hist = RepoHistory(raw.repo, raw.source, raw.kind, raw.last_commit, error=raw.error)
    for df in raw.dockerfiles:
        if not df.snapshots:
            continue
        existing = [s for s in df.snapshots if not s.deleted]
        if existing:
            hist.latest_urls[df.path] = existing[-1].urls
            hist.latest_valid[df.path] = existing[-1].valid
        for s in df.snapshots:
            hist.all_urls.update(u.url for u in s.urls)
        snaps = tuple(
            Snapshot(s.commit, s.timestamp, _packages_for(s, df.path, registry, keep_unresolved, diags), s.valid, s.deleted)
            for s in df.snapshots
        )
        snaps = tuple(sorted(snaps, key=lambda s: s.timestamp))
        if not any(s.packages for s in snaps):
            continue
        if existing and not existing[-1].valid:
            hist.excluded[df.path] = "latest version is not a valid Dockerfile"
            continue
        hist.timelines.append(DockerfileTimeline(raw.repo, df.path, snaps, not snaps[-1].deleted))
    hist.timelines.sort(key=lambda t: t.path)
    return hist


def build_timelines(
    repo: str | Path,
    registry: RegistrySnapshot,
    *,
    lenient_from: bool = False,
    keep_unresolved: bool = False,
) -> list[DockerfileTimeline]:
    raw = mine_git_repo(repo, lenient_from=lenient_from)
    if raw.error:
        raise RepositoryError(raw.error)
    return validate_repo(raw, registry, keep_unresolved=keep_unresolved).timelines


# -- classification ---------------------------------------------------------


def classify_dockerfile(t: DockerfileTimeline, repo_last_commit: datetime, dormancy_cutoff: datetime) -> DockerfileStatus:
    if not t.snapshots:
        raise ValueError("timeline has no snapshots")
    if repo_last_commit < dormancy_cutoff:
        return DockerfileStatus.DORMANT
    if not t.head.packages and any(s.packages for s in t.snapshots):
        return DockerfileStatus.ALL_PACKAGES_DELETED
    for s in t.snapshots:
        if any(len(tags) > 1 for tags in s.tags_by_identity().values()):
            return DockerfileStatus.MULTIPLE_VERSIONS
    for prev, cur in zip(t.snapshots, t.snapshots[1:]):
        before = prev.tags_by_identity()
        after = cur.tags_by_identity()
        for ident in before.keys() & after.keys():
            if before[ident] != after[ident]:
                return DockerfileStatus.PACKAGE_UPDATED
    return DockerfileStatus.NO_PACKAGE_UPDATED


def classify_repo(statuses: Iterable[DockerfileStatus], diagnostics: Optional[list[str]] = None) -> RepoStatus:
    statuses = list(statuses)
    if not statuses:
        if diagnostics is not None:
            diagnostics.append("repository without analyzed Dockerfiles")
        return RepoStatus.OTHER
    if DockerfileStatus.PACKAGE_UPDATED in statuses:
        return RepoStatus.WITH_UPDATE
    if all(s == DockerfileStatus.NO_PACKAGE_UPDATED for s in statuses):
        return RepoStatus.NO_UPDATE
    return RepoStatus.OTHER


def tally(values: Iterable[Any], categories: Sequence[Any]) -> dict[str, Any]:
    """Counts and percentages per category, in the given category order."""
    values = list(values)
    total = len(values)
    rows = []
    for cat in categories:
        count = sum(1 for v in values if v == cat)
        pct = round(100.0 * count / total, 1) if total else 0.0
        rows.append({"category": cat.value if isinstance(cat, enum.Enum) else cat, "count": count, "percent": pct})
    return {"rows": rows, "total": total}


# -- artifact (de)serialization ---------------------------------------------


def _package_json(p: PinnedPackage) -> dict[str, Any]:
    return {
        "package": str(p.ref.identity),
        "tag": p.ref.tag,
        "pattern": p.ref.pattern,
        "asset_file": p.ref.asset_file,
        "url": p.ref.url,
        "line": p.location.start_line,
    }


def history_to_json(histories: Sequence[RepoHistory]) -> dict[str, Any]:
    repos = []
    for h in sorted(histories, key=lambda h: h.repo):
        repos.append(
            {
                "repo": h.repo,
                "source": h.source,
                "kind": h.kind,
                "last_commit": to_iso(h.last_commit) if h.last_commit else None,
                "error": h.error,
                "excluded": dict(sorted(h.excluded.items())),
                "dockerfiles": [
                    {
                        "path": t.path,
                        "present_at_head": t.present_at_head,
                        "snapshots": [
                            {
                                "commit": s.commit,
                                "timestamp": to_iso(s.timestamp),
                                "valid": s.valid,
                                "deleted": s.deleted,
                                "packages": [_package_json(p) for p in s.packages],
                            }
                            for s in t.snapshots
                        ],
                    }
                    for t in h.timelines
                ],
            }
        )
    return {"schema": TIMELINES_SCHEMA, "repos": repos}


def _ref_from_json(entry: dict[str, Any]) -> PackageRef:
    ref = match_github_url(entry["url"])
    if ref is None:
        raise ValueError(f"not a GitHub package URL: {entry['url']}")
    return ref


def history_from_json(data: dict[str, Any]) -> list[RepoHistory]:
    """Load a timelines artifact written by :func:`history_to_json`."""
    out = []
    for r in data.get("repos", []):
        last = from_iso(r["last_commit"]) if r.get("last_commit") else None
        h = RepoHistory(r["repo"], r.get("source", ""), r.get("kind", "json"), last, error=r.get("error"))
        h.excluded = dict(r.get("excluded", {}))
        for d in r.get("dockerfiles", []):
            snaps = []
            for s in d["snapshots"]:
                pkgs = tuple(
                    PinnedPackage(_ref_from_json(p), SourceSpan(d["path"], p.get("line", 1), p.get("line", 1)), d["path"], s["commit"], True)
                    for p in s.get("packages", [])
                )
                snaps.append(Snapshot(s["commit"], from_iso(s["timestamp"]), pkgs, s.get("valid", True), s.get("deleted", False)))
            h.timelines.append(DockerfileTimeline(h.repo, d["path"], tuple(snaps), d.get("present_at_head", not snaps[-1].deleted)))
        out.append(h)
    return out


def raw_repos_from_json(data: dict[str, Any], source: str, *, lenient_from: bool = False) -> list[RawRepo]:
    """Read a pre-exported history file.

    Snapshots give either ``content`` (Dockerfile text, extracted here) or
    ``packages`` (a list of objects with ``url`` and optional ``line``).
    """
    repos = []
    for r in data.get("repos", []):
        raw = RawRepo(r["repo"], source, "json", from_iso(r["last_commit"]) if r.get("last_commit") else None, error=r.get("error"))
        for d in r.get("dockerfiles", []):
            df = RawDockerfile(d["path"])
            for s in d.get("snapshots", []):
                ts = from_iso(s["timestamp"])
                deleted = bool(s.get("deleted", False))
                if "content" in s and not deleted:
                    valid, urls = analyze_text(s["content"], d["path"], lenient_from=lenient_from)
                else:
                    valid = s.get("valid", True)
                    urls = tuple(UrlRecord(p["url"], p.get("source_kind", "curl"), p.get("line", 1), True) for p in s.get("packages", []))
                df.snapshots.append(RawSnapshot(s["commit"], ts, valid, deleted, urls))
            raw.dockerfiles.append(df)
        repos.append(raw)
    return repos


def json_snapshot_content(data: dict[str, Any], repo: str, path: str, commit: str) -> Optional[str]:
    for r in data.get("repos", []):
        if r["repo"] != repo:
            continue
        for d in r.get("dockerfiles", []):
            if d["path"] != path:
                continue
            for s in d.get("snapshots", []):
                if s["commit"] == commit:
                    return s.get("content")
    return None


def discover_repos(corpus: str | Path) -> list[Path]:
    """Immediate subdirectories of a corpus directory, sorted by name."""
    corpus = Path(corpus)
    return sorted((p for p in corpus.iterdir() if p.is_dir() and not p.name.startswith(".")), key=lambda p: p.name)


def load_history_file(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def git_available() -> bool:
    try:
        subprocess.run(["git", "--version"], capture_output=True, check=True)
    except (OSError, subprocess.CalledProcessError):
        return False
    return True

