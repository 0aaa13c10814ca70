"""Update recommendations for groups whose members form a version chain."""

from __future__ import annotations

import difflib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence
from urllib.parse import quote, unquote, urlsplit

from .dockerfile import SourceSpan, parse_dockerfile
from .extract import Piece, VarEnv, build_env, extract_urls
from .metamaint import ContractViolation, GroupClass, Order, RepoGroup, compare_combinations, maximal_combination
from .pkgid import ARCHIVE_SUFFIXES, RELEASE, PackageIdentity, PackageRef, UnknownPackage, match_github_url, validate
from .registry import RegistrySnapshot

SourceReader = Callable[[str, str, str], Optional[str]]

_CORE = re.compile(r"\d+(?:[._]\d+)*")


class RewriteError(ValueError):
    pass


class AmbiguousEdit(RewriteError):
    """A variable feeds URLs that must not all change the same way."""


class UnlocatableTag(RewriteError):
    """The tag cannot be found where the extraction says it came from."""


@dataclass(frozen=True)
class TagChange:
    identity: PackageIdentity
    from_tag: str
    to_tag: str


@dataclass(frozen=True)
class Edit:
    start: int
    end: int
    old: str
    new: str
    line: int


@dataclass(frozen=True)
class RewriteResult:
    text: str
    edits: tuple[Edit, ...]
    sites: Mapping[PackageIdentity, tuple[SourceSpan, ...]]


@dataclass(frozen=True)
class Change:
    identity: PackageIdentity
    from_tag: str
    to_tag: str
    edit_sites: tuple[SourceSpan, ...] = ()


@dataclass
class Recommendation:
    group_id: str
    repo: str
    path: str
    commit: str
    changes: list[Change]
    evidence: list[str]
    original_text: str = ""
    rewritten_text: str = ""
    patch: str = ""
    message: str = ""
    held: bool = False
    held_tags: list[str] = field(default_factory=list)
    verified: bool = False
    error: Optional[str] = None
    drifted: bool = False

    @property
    def target(self) -> tuple[str, str]:
        return (self.repo, self.path)

    @property
    def status(self) -> str:
        if self.error:
            return "error"
        if self.held:
            return "held"
        if not self.verified:
            return "unverifiable"
        return "ready"


def load_advisories(path: str | Path) -> dict[PackageIdentity, frozenset[str]]:
    """Read ``{"owner/repo": ["bad-tag", ...]}``."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise ValueError("advisories file must be a JSON object")
    out = {}
    for key, tags in data.items():
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise ValueError(f"{key}: expected a list of tags")
        out[PackageIdentity.parse(key)] = frozenset(tags)
    return out


def numeric_core(tag: str) -> str:
    """Longest dotted number in a tag: ``v1.2.3`` -> ``1.2.3``, ``libssh2-1.9.0`` -> ``1.9.0``."""
    best = ""
    for m in _CORE.finditer(tag):
        if len(m.group(0)) > len(best):
            best = m.group(0)
    return best


def _occurrences(haystack: str, needle: str) -> list[int]:
    """Positions of ``needle`` not embedded in a longer number."""
    found = []
    start = 0
    while needle:
        i = haystack.find(needle, start)
        if i < 0:
            break
        j = i + len(needle)
        before_ok = i == 0 or not (haystack[i - 1].isdigit() or (haystack[i - 1] == "." and needle[0].isdigit()))
        after = haystack[j : j + 2]
        after_ok = not after[:1].isdigit() and not (after[:1] in "._" and after[1:2].isdigit() and needle[-1].isdigit())
        if before_ok and after_ok:
            found.append(i)
        start = i + 1
    return found


def _url_ranges(url: str, ref: PackageRef, new_tag: str) -> list[tuple[int, int, str, str]]:
    """Ranges of ``url`` to replace: (start, end, old text, new text)."""
    parts = urlsplit(url)
    prefix = f"{parts.scheme}://{parts.netloc}"
    if not url.startswith(prefix):
        raise UnlocatableTag(url)
    segs = parts.path.split("/")
    offsets = []
    pos = len(prefix)
    for s in segs:
        offsets.append(pos)
        pos += len(s) + 1

    def encode(tag: str, like: str) -> str:
        return tag if like == unquote(like) else quote(tag, safe="-._~+!$&'()*,;=:@")

    ranges = []
    if ref.pattern == RELEASE:
        tag_idx = 5
        raw_tag = segs[tag_idx]
    else:
        tag_idx = len(segs) - 1
        raw_name = segs[tag_idx]
        suffix = next(s for s in ARCHIVE_SUFFIXES if raw_name.endswith(s))
        raw_tag = raw_name[: -len(suffix)]
    if unquote(raw_tag) != ref.tag:
        raise UnlocatableTag(f"tag {ref.tag!r} not found in {url}")
    ranges.append((offsets[tag_idx], offsets[tag_idx] + len(raw_tag), raw_tag, encode(new_tag, raw_tag)))

    if ref.pattern == RELEASE:
        raw_file = segs[6]
        file_start = offsets[6]
        hits = _occurrences(raw_file, ref.tag)
        old, new = ref.tag, new_tag
        if not hits:
            old, new = numeric_core(ref.tag), numeric_core(new_tag)
            hits = _occurrences(raw_file, old) if old and new else []
        for h in hits:
            ranges.append((file_start + h, file_start + h + len(old), old, new))
    return ranges


def _line_of(text: str, offset: int) -> int:
    return text.count("\n", 0, offset) + 1


def _map_range(
    pieces: Sequence[Piece],
    resolved: str,
    start: int,
    end: int,
    new: str,
    text: str,
    out: dict[tuple[int, int], str],
    depth: int = 0,
) -> None:
    """Translate a range of a resolved value into an edit of the file text."""
    old = resolved[start:end]
    for p in pieces:
        if not (p.start <= start and end <= p.end):
            continue
        if p.kind == "var" and p.binding is not None and depth < 16:
            _map_range(p.binding.pieces, p.binding.marked, start - p.start, end - p.start, new, text, out, depth + 1)
            return
        if p.kind != "literal":
            break
        src = text[p.src_start : p.src_end]
        if src == resolved[p.start : p.end]:
            key = (p.src_start + start - p.start, p.src_start + end - p.start)
        else:
            hits = [m.start() for m in re.finditer(re.escape(old), src)]
            if len(hits) != 1:
                break
            key = (p.src_start + hits[0], p.src_start + hits[0] + len(old))
        if key in out and out[key] != new:
            raise AmbiguousEdit(f"conflicting edits for {old!r} at offset {key[0]}")
        out[key] = new
        return
    raise UnlocatableTag(f"cannot locate {old!r} in the source")


def rewrite_dockerfile(
    text: str,
    plan: Iterable[TagChange],
    env: Optional[VarEnv] = None,
    *,
    path: str = "Dockerfile",
) -> RewriteResult:
    """Rewrite pinned tags, editing variable definitions where the tag came from one.

    Bytes outside the edited ranges are left untouched.
    """
    changes = {c.identity: c for c in plan}
    ast = parse_dockerfile(text, path)
    if env is None:
        env = build_env(ast)
    urls = extract_urls(ast, env)

    raw_edits: dict[tuple[int, int], str] = {}
    expected: list[str] = []
    touched: dict[PackageIdentity, int] = {}
    for u in urls:
        ref = match_github_url(u.url) if u.fully_resolved else None
        change = changes.get(ref.identity) if ref else None
        if ref is None or change is None or ref.tag != change.from_tag:
            expected.append(u.url)
            continue
        new_url = u.url
        for s, e, old, new in sorted(_url_ranges(u.url, ref, change.to_tag), reverse=True):
            _map_range(u.pieces, u.url, s, e, new, text, raw_edits)
            new_url = new_url[:s] + new + new_url[e:]
        expected.append(new_url)
        touched[ref.identity] = touched.get(ref.identity, 0) + 1

    missing = [str(i) for i in changes if i not in touched]
    if missing:
        raise UnlocatableTag(f"no URL pins {', '.join(missing)} at the planned tag")

    ordered = sorted(raw_edits.items())
    for (s1, e1), _ in ordered:
        for (s2, e2), _ in ordered:
            if (s1, e1) < (s2, e2) and s2 < e1:
                raise AmbiguousEdit(f"overlapping edits at offsets {s1} and {s2}")
    new_text = text
    edits = []
    for (s, e), new in sorted(raw_edits.items(), reverse=True):
        edits.append(Edit(s, e, text[s:e], new, _line_of(text, s)))
        new_text = new_text[:s] + new + new_text[e:]
    edits.reverse()

    after = extract_urls(parse_dockerfile(new_text, path))
    if [u.url for u in after] != expected:
        raise AmbiguousEdit("an edited definition also feeds a URL that should not change")

    sites: dict[PackageIdentity, list[SourceSpan]] = {}
    for u in urls:
        ref = match_github_url(u.url) if u.fully_resolved else None
        if ref is None or ref.identity not in changes or ref.tag != changes[ref.identity].from_tag:
            continue
        local: dict[tuple[int, int], str] = {}
        for s, e, _, new in _url_ranges(u.url, ref, changes[ref.identity].to_tag):
            _map_range(u.pieces, u.url, s, e, new, text, local)
        lines = sorted({_line_of(text, s) for s, _ in local})
        sites.setdefault(ref.identity, []).extend(SourceSpan(path, n, n) for n in lines)
    return RewriteResult(
        new_text,
        tuple(edits),
        {k: tuple(sorted(set(v), key=lambda sp: sp.start_line)) for k, v in sites.items()},
    )


def unified_diff(old: str, new: str, path: str) -> str:
    """A unified diff that ``patch -p1`` applies, including missing final newlines."""
    a = old.splitlines(keepends=True)
    b = new.splitlines(keepends=True)
    out = []
    for line in difflib.unified_diff(a, b, fromfile=f"a/{path}", tofile=f"b/{path}"):
        if line.startswith(("---", "+++")):
            out.append(line.rstrip("\n") + "\n")
            continue
        out.append(line)
        if not line.endswith("\n"):
            out.append("\n\\ No newline at end of file\n")
    return "".join(out)


def package_tags(text: str, path: str, registry: Optional[RegistrySnapshot] = None) -> dict[PackageIdentity, set[str]]:
    """Tags pinned per package in a Dockerfile text (validated when a registry is given)."""
    ast = parse_dockerfile(text, path)
    found: dict[PackageIdentity, set[str]] = {}
    for u in extract_urls(ast, build_env(ast)):
        if not u.fully_resolved:
            continue
        ref = match_github_url(u.url)
        if ref is None:
            continue
        if registry is not None:
            try:
                if not validate(ref, registry):
                    continue
            except UnknownPackage:
                continue
        found.setdefault(ref.identity, set()).add(ref.tag)
    return found


def _refs(text: str, path: str) -> list[PackageRef]:
    ast = parse_dockerfile(text, path)
    refs = []
    for u in extract_urls(ast, build_env(ast)):
        ref = match_github_url(u.url) if u.fully_resolved else None
        if ref is not None:
            refs.append(ref)
    return refs


def plan_updates(
    group: RepoGroup,
    registry: RegistrySnapshot,
    read_source: SourceReader,
    advisories: Optional[Mapping[PackageIdentity, frozenset[str]]] = None,
) -> list[Recommendation]:
    """One recommendation per member lagging behind the group's maximal combination."""
    if group.classification != GroupClass.COMPARABLE:
        raise ContractViolation(f"group {group.id} is not comparable")
    combos = [m.combination for m in group.members]
    top = maximal_combination(combos)
    if all(compare_combinations(c, top) == Order.EQUAL for c in combos):
        raise ContractViolation(f"group {group.id} has no lagging member")
    evidence = sorted(m.repo for m in group.members if compare_combinations(m.combination, top) == Order.EQUAL)
    advisories = advisories or {}

    recs = []
    for m in group.members:
        if compare_combinations(m.combination, top) == Order.EQUAL:
            continue
        plan = [
            TagChange(ident, m.combination.tags[k], top.tags[k])
            for k, ident in enumerate(group.set.members)
            if m.combination.indices[k] != top.indices[k]
        ]
        rec = Recommendation(
            group.id,
            m.repo,
            m.path,
            m.commit,
            [Change(c.identity, c.from_tag, c.to_tag) for c in plan],
            evidence,
            drifted=m.drifted,
        )
        for c in plan:
            flagged = advisories.get(c.identity, frozenset())
            if c.to_tag in flagged:
                rec.held = True
                rec.held_tags.append(f"{c.identity}@{c.to_tag}")
        text = read_source(m.repo, m.path, m.commit)
        if text is None:
            rec.error = "Dockerfile source not available"
            rec.message = render_message(rec)
            recs.append(rec)
            continue
        rec.original_text = text
        try:
            result = rewrite_dockerfile(text, plan, path=m.path)
        except RewriteError as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            rec.message = render_message(rec)
            recs.append(rec)
            continue
        rec.rewritten_text = result.text
        rec.changes = [Change(c.identity, c.from_tag, c.to_tag, result.sites.get(c.identity, ())) for c in plan]
        rec.patch = unified_diff(text, result.text, m.path)

        pinned = package_tags(result.text, m.path)
        target = {ident: {top.tags[k]} for k, ident in enumerate(group.set.members)}
        if {i: pinned.get(i, set()) for i in target} != target:
            rec.error = "rewritten Dockerfile does not pin the target combination"
        rec.verified = all(
            _valid(ref, registry) for ref in _refs(result.text, m.path) if ref.identity in target
        )
        rec.message = render_message(rec)
        recs.append(rec)
    return recs


def _valid(ref: PackageRef, registry: RegistrySnapshot) -> bool:
    try:
        return validate(ref, registry)
    except UnknownPackage:
        return False


def _join(items: Sequence[str]) -> str:
    if len(items) <= 1:
        return "".join(items)
    return ", ".join(items[:-1]) + " and " + items[-1]


def render_message(rec: Recommendation) -> str:
    """Pull-request body for a recommendation."""
    moves = [f"{c.identity} from {c.from_tag} to {c.to_tag}" for c in rec.changes]
    single = len(rec.changes) == 1
    where = _join(rec.evidence) or "other repositories"
    lines = [
        f"In this pull request, I am updating {_join(moves)}. "
        f"Since {'this update is' if single else 'these updates are'} being done in {where}, "
        f"I'm wondering if this project can update the {'package' if single else 'packages'} as well.",
        "",
    ]
    if rec.held:
        lines += [
            "> [!CAUTION]",
            f"> On hold: {_join(rec.held_tags)} {'is' if len(rec.held_tags) == 1 else 'are'} flagged in the advisories file.",
            "> Check the advisory before proposing this update.",
            "",
        ]
    if rec.error:
        lines += [f"> Not applied automatically: {rec.error}", ""]
    elif not rec.verified:
        lines += ["> The rewritten URLs could not all be confirmed against the release and tag lists.", ""]
    lines.append("| package | from | to |")
    lines.append("|---|---|---|")
    lines += [f"| {c.identity} | {c.from_tag} | {c.to_tag} |" for c in rec.changes]
    return "\n".join(lines) + "\n"


def recommendation_index_entry(rec: Recommendation, patch_file: Optional[str], message_file: str) -> dict[str, Any]:
    return {
        "group": rec.group_id,
        "repo": rec.repo,
        "path": rec.path,
        "commit": rec.commit,
        "status": rec.status,
        "held": rec.held,
        "held_tags": rec.held_tags,
        "verified": rec.verified,
        "drifted": rec.drifted,
        "error": rec.error,
        "evidence": rec.evidence,
        "changes": [
            {
                "package": str(c.identity),
                "from": c.from_tag,
                "to": c.to_tag,
                "edit_lines": [s.start_line for s in c.edit_sites],
            }
            for c in rec.changes
        ],
        "patch": patch_file,
        "message": message_file,
    }
