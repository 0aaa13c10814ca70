"""Package sets shared across repositories and their version combinations.

A package set is the full set of distinct packages pinned in one Dockerfile
version. Repositories whose Dockerfiles pin the same set form a group; the
group is classified by comparing the members' latest version combinations
under the product order (componentwise comparison of tag positions).
"""

from __future__ import annotations

import enum
import hashlib
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Iterable, Mapping, Optional, Sequence

from .history import DockerfileTimeline, RepoStatus, Snapshot, from_iso, to_iso
from .pkgid import PackageIdentity, UnknownPackage, UnknownTag
from .registry import RegistrySnapshot


class ContractViolation(ValueError):
    """A function was called outside its documented precondition."""


class Order(str, enum.Enum):
    LESS = "less"
    EQUAL = "equal"
    GREATER = "greater"
    INCOMPARABLE = "incomparable"


class GroupClass(str, enum.Enum):
    NO_UPDATE = "no update"
    EQUIVALENT = "equivalent"
    INCOMPARABLE = "incomparable"
    COMPARABLE = "comparable"


@dataclass(frozen=True, order=True)
class PackageSet:
    members: tuple[PackageIdentity, ...]

    def __post_init__(self) -> None:
        members = tuple(sorted(set(self.members)))
        if len(members) < 2:
            raise ValueError("a package set needs at least two packages")
        object.__setattr__(self, "members", members)

    def __len__(self) -> int:
        return len(self.members)

    def key(self) -> str:
        return " ".join(str(m) for m in self.members)

    def group_id(self) -> str:
        return "g-" + hashlib.sha1(self.key().encode("utf-8")).hexdigest()[:10]


@dataclass(frozen=True)
class VersionCombination:
    set: PackageSet
    tags: tuple[str, ...]  # aligned with set.members
    indices: tuple[int, ...]
    source: tuple[str, str, str] = ("", "", "")  # repo, dockerfile path, commit

    def __post_init__(self) -> None:
        if len(self.tags) != len(self.set) or len(self.indices) != len(self.set):
            raise ValueError("tags and indices must cover every package in the set")

    def tag(self, identity: PackageIdentity) -> str:
        return self.tags[self.set.members.index(identity)]

    def index(self, identity: PackageIdentity) -> int:
        return self.indices[self.set.members.index(identity)]

    def tag_map(self) -> dict[PackageIdentity, str]:
        return dict(zip(self.set.members, self.tags))

    @classmethod
    def from_tags(
        cls,
        pset: PackageSet,
        tags: Mapping[PackageIdentity, str],
        registry: RegistrySnapshot,
        source: tuple[str, str, str] = ("", "", ""),
    ) -> "VersionCombination":
        ordered = tuple(tags[m] for m in pset.members)
        indices = tuple(registry.tag_index(m, t) for m, t in zip(pset.members, ordered))
        return cls(pset, ordered, indices, source)


@dataclass(frozen=True)
class GroupMember:
    repo: str
    status: RepoStatus
    combination: VersionCombination
    path: str
    commit: str
    timestamp: datetime
    drifted: bool = False


@dataclass
class RepoGroup:
    set: PackageSet
    members: list[GroupMember]
    classification: Optional[GroupClass] = None

    @property
    def id(self) -> str:
        return self.set.group_id()


def compare_combinations(x: VersionCombination, y: VersionCombination) -> Order:
    """Product-order comparison of two combinations over the same package set."""
    if x.set != y.set:
        raise ContractViolation("combinations are over different package sets")
    le = all(a <= b for a, b in zip(x.indices, y.indices))
    ge = all(a >= b for a, b in zip(x.indices, y.indices))
    if le and ge:
        return Order.EQUAL
    if le:
        return Order.LESS
    if ge:
        return Order.GREATER
    return Order.INCOMPARABLE


def _snapshot_tags(snap: Snapshot) -> Optional[dict[PackageIdentity, str]]:
    """One tag per package, or None if some package is pinned at two tags."""
    tags: dict[PackageIdentity, str] = {}
    for ident, found in snap.tags_by_identity().items():
        if len(found) != 1:
            return None
        tags[ident] = next(iter(found))
    return tags


def find_package_sets(
    timelines: Iterable[DockerfileTimeline],
    eligible_repos: Mapping[str, RepoStatus],
    registry: RegistrySnapshot,
    diagnostics: Optional[list[str]] = None,
) -> list[RepoGroup]:
    """Group eligible repositories by the package sets their Dockerfiles pin.

    Every Dockerfile version whose distinct packages number two or more is a
    candidate set; sets seen in at least two repositories become groups.
    """
    diags = diagnostics if diagnostics is not None else []
    # set -> repo -> list of (timeline, snapshot index, tags)
    seen: dict[PackageSet, dict[str, list[tuple[DockerfileTimeline, int, dict]]]] = defaultdict(lambda: defaultdict(list))
    for t in timelines:
        if t.repo not in eligible_repos:
            continue
        for i, snap in enumerate(t.snapshots):
            if len(snap.identities()) < 2:
                continue
            tags = _snapshot_tags(snap)
            if tags is None:
                continue
            try:
                for ident, tag in tags.items():
                    registry.tag_index(ident, tag)
            except (UnknownPackage, UnknownTag) as exc:
                diags.append(f"{t.repo}:{t.path}@{snap.commit[:12]}: tag not in tag list ({exc})")
                continue
            seen[PackageSet(tuple(tags))][t.repo].append((t, i, tags))

    groups = []
    for pset, by_repo in seen.items():
        if len(by_repo) < 2:
            continue
        members = []
        for repo, hits in by_repo.items():
            best: dict[str, tuple[DockerfileTimeline, int, dict]] = {}
            for t, i, tags in hits:
                if t.path not in best or i > best[t.path][1]:
                    best[t.path] = (t, i, tags)
            # newest matching Dockerfile wins; ties go to the smaller path
            t, i, tags = min(best.values(), key=lambda h: (-h[0].snapshots[h[1]].timestamp.timestamp(), h[0].path))
            snap = t.snapshots[i]
            combo = VersionCombination.from_tags(pset, tags, registry, (repo, t.path, snap.commit))
            members.append(
                GroupMember(repo, eligible_repos[repo], combo, t.path, snap.commit, snap.timestamp, i != len(t.snapshots) - 1)
            )
        members.sort(key=lambda m: m.repo)
        groups.append(RepoGroup(pset, members))
    groups.sort(key=lambda g: g.set.key())
    return groups


def classify_group(g: RepoGroup) -> GroupClass:
    if all(m.status == RepoStatus.NO_UPDATE for m in g.members):
        return GroupClass.NO_UPDATE
    combos = [m.combination for m in g.members]
    orders = [compare_combinations(a, b) for i, a in enumerate(combos) for b in combos[i + 1 :]]
    if all(o == Order.EQUAL for o in orders):
        return GroupClass.EQUIVALENT
    if any(o == Order.INCOMPARABLE for o in orders):
        return GroupClass.INCOMPARABLE
    return GroupClass.COMPARABLE


def maximal_combination(combos: Sequence[VersionCombination]) -> VersionCombination:
    """The greatest combination of a chain; raises if none dominates all others."""
    for c in combos:
        if all(compare_combinations(c, other) in (Order.EQUAL, Order.GREATER) for other in combos):
            return c
    raise ContractViolation("combinations have no maximum")


def tag_distance(identity: PackageIdentity, from_tag: str, to_tag: str, registry: RegistrySnapshot) -> int:
    """Number of positions between two tags in the package's ordered tag list."""
    return abs(registry.tag_index(identity, to_tag) - registry.tag_index(identity, from_tag))


@dataclass(frozen=True)
class GroupMetrics:
    repos_with_differences: int
    max_version_difference: int
    spreads: tuple[tuple[PackageIdentity, int], ...] = field(default=())


def group_metrics(group: RepoGroup, registry: RegistrySnapshot) -> GroupMetrics:
    if group.classification not in (None, GroupClass.COMPARABLE):
        raise ContractViolation("metrics are defined for comparable groups")
    combos = [m.combination for m in group.members]
    top = maximal_combination(combos)
    differing = sum(1 for c in combos if compare_combinations(c, top) != Order.EQUAL)
    spreads = []
    for k, ident in enumerate(group.set.members):
        lo = min(combos, key=lambda c: c.indices[k])
        hi = max(combos, key=lambda c: c.indices[k])
        spreads.append((ident, tag_distance(ident, lo.tags[k], hi.tags[k], registry)))
    return GroupMetrics(differing, max(s for _, s in spreads), tuple(spreads))


def analyze_groups(
    timelines: Iterable[DockerfileTimeline],
    repo_statuses: Mapping[str, RepoStatus],
    registry: RegistrySnapshot,
    diagnostics: Optional[list[str]] = None,
) -> list[RepoGroup]:
    """Find and classify groups among repositories with or without updates."""
    eligible = {r: s for r, s in repo_statuses.items() if s in (RepoStatus.WITH_UPDATE, RepoStatus.NO_UPDATE)}
    groups = find_package_sets(timelines, eligible, registry, diagnostics)
    for g in groups:
        g.classification = classify_group(g)
    return groups


def groups_to_json(groups: Sequence[RepoGroup], registry: RegistrySnapshot) -> dict[str, Any]:
    out = []
    for g in groups:
        entry: dict[str, Any] = {
            "id": g.id,
            "packages": [str(m) for m in g.set.members],
            "size": len(g.set),
            "class": g.classification.value if g.classification else None,
            "members": [
                {
                    "repo": m.repo,
                    "status": m.status.value,
                    "path": m.path,
                    "commit": m.commit,
                    "timestamp": to_iso(m.timestamp),
                    "drifted": m.drifted,
                    "tags": list(m.combination.tags),
                    "indices": list(m.combination.indices),
                }
                for m in g.members
            ],
        }
        if g.classification == GroupClass.COMPARABLE:
            metrics = group_metrics(g, registry)
            top = maximal_combination([m.combination for m in g.members])
            entry["maximal"] = {
                "tags": list(top.tags),
                "repos": [m.repo for m in g.members if compare_combinations(m.combination, top) == Order.EQUAL],
            }
            entry["metrics"] = {
                "repos_with_differences": metrics.repos_with_differences,
                "max_version_difference": metrics.max_version_difference,
                "spreads": {str(i): s for i, s in metrics.spreads},
            }
        out.append(entry)
    table = {c.value: sum(1 for g in groups if g.classification == c) for c in GroupClass}
    total = len(groups)
    return {
        "schema": "pinmeta.groups/1",
        "table4": {
            "rows": [
                {"category": k, "count": v, "percent": round(100.0 * v / total, 1) if total else 0.0} for k, v in table.items()
            ],
            "total": total,
        },
        "groups": out,
    }


def groups_from_json(data: Mapping[str, Any], registry: RegistrySnapshot) -> list[RepoGroup]:
    groups = []
    for entry in data.get("groups", []):
        pset = PackageSet(tuple(PackageIdentity.parse(p) for p in entry["packages"]))
        members = []
        for m in entry["members"]:
            combo = VersionCombination(pset, tuple(m["tags"]), tuple(m["indices"]), (m["repo"], m["path"], m["commit"]))
            members.append(
                GroupMember(m["repo"], RepoStatus(m["status"]), combo, m["path"], m["commit"], from_iso(m["timestamp"]), m["drifted"])
            )
        groups.append(RepoGroup(pset, members, GroupClass(entry["class"]) if entry.get("class") else None))
    return groups
