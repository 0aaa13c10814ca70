"""Recognize GitHub release and archive URLs as version-pinned packages."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional
from urllib.parse import unquote, urlsplit

from .dockerfile import SourceSpan

if TYPE_CHECKING:
    from .registry import RegistrySnapshot

RELEASE = "Release"
ARCHIVE = "Archive"

_OWNER = re.compile(r"[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?")
_REPO = re.compile(r"[A-Za-z0-9._-]+")
ARCHIVE_SUFFIXES = (".tar.gz", ".zip")


@dataclass(frozen=True, order=True)
class PackageIdentity:
    owner: str
    repo: str

    def __post_init__(self) -> None:
        if not self.owner or not self.repo:
            raise ValueError("owner and repo must be non-empty")
        object.__setattr__(self, "owner", self.owner.lower())
        object.__setattr__(self, "repo", self.repo.lower())

    @classmethod
    def parse(cls, text: str) -> "PackageIdentity":
        owner, sep, repo = text.partition("/")
        if not sep or "/" in repo:
            raise ValueError(f"expected owner/repo, got {text!r}")
        return cls(owner, repo)

    def __str__(self) -> str:
        return f"{self.owner}/{self.repo}"


@dataclass(frozen=True)
class PackageRef:
    identity: PackageIdentity
    tag: str
    pattern: str
    asset_file: Optional[str]
    url: str
    stripped_query: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        if not self.tag:
            raise ValueError("tag must be non-empty")
        if self.pattern == RELEASE and not self.asset_file:
            raise ValueError("Release refs need an asset file")

    @property
    def release_key(self) -> tuple[PackageIdentity, str, Optional[str]]:
        return (self.identity, self.tag, self.asset_file)


@dataclass(frozen=True)
class PinnedPackage:
    ref: PackageRef
    location: SourceSpan
    dockerfile: str
    commit: str = ""
    validated: bool = False


class UnknownPackage(KeyError):
    """The registry snapshot has no entry for a package."""


class UnknownTag(KeyError):
    """A tag is not in a package's tag list."""


def match_github_url(url: str) -> Optional[PackageRef]:
    """Return a PackageRef when ``url`` is a github.com release or tag archive URL."""
    try:
        parts = urlsplit(url)
    except ValueError:
        return None
    if parts.scheme not in ("http", "https"):
        return None
    if (parts.hostname or "").lower() != "github.com":
        return None
    stripped = bool(parts.query or parts.fragment)
    base = f"{parts.scheme}://{parts.netloc}{parts.path}"
    segs = [unquote(s) for s in parts.path.split("/")[1:]]
    if len(segs) < 4 or not _OWNER.fullmatch(segs[0]) or not _REPO.fullmatch(segs[1]):
        return None
    identity = PackageIdentity(segs[0], segs[1])
    rest = segs[2:]

    if len(rest) == 4 and rest[0] == "releases" and rest[1] == "download":
        tag, asset = rest[2], rest[3]
        if tag and asset:
            return PackageRef(identity, tag, RELEASE, asset, base, stripped)
        return None

    if rest[0] != "archive":
        return None
    if len(rest) == 4 and rest[1] == "refs" and rest[2] == "tags":
        name = rest[3]
    elif len(rest) == 2:
        name = rest[1]
    else:
        return None
    for suffix in ARCHIVE_SUFFIXES:
        if name.endswith(suffix) and len(name) > len(suffix):
            return PackageRef(identity, name[: -len(suffix)], ARCHIVE, None, base, stripped)
    return None


def validate(ref: PackageRef, registry: "RegistrySnapshot") -> bool:
    """Check a ref against the registry's release-asset list or tag list.

    Raises UnknownPackage when the registry has no record of the package.
    """
    record = registry.record(ref.identity)
    if ref.pattern == RELEASE:
        return ref.release_key in record.release_keys
    return ref.tag in record.tag_set
