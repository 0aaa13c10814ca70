"""Variable resolution and URL harvesting for parsed Dockerfiles.

Each resolved value keeps a list of :class:`Piece` objects describing where
its characters came from (literal text in the file, a variable binding, or
an unresolved reference). The recommender uses this to edit a tag at its
definition site instead of in the URL that uses it.
"""

from __future__ import annotations

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Optional, Union
from urllib.parse import urlsplit

from .dockerfile import DockerfileAst, Instruction, SourceSpan
from .shell import Literal, ShellList, ShellWord, collect_assignments, parse_shell, parse_word, split_assignment, split_words

log = logging.getLogger(__name__)

UNRESOLVED_RE = re.compile(r"\$\{UNRESOLVED:[A-Za-z_][A-Za-z0-9_]*\}")
_URL_START = re.compile(r"https?://")
_EXPANSION_NAME = re.compile(r"\$\{#?([A-Za-z_][A-Za-z0-9_]*)")
_JSON_STRING = re.compile(r'"((?:[^"\\]|\\.)*)"')
_AFTER = 10**9  # ENV/ARG bindings take effect after their instruction

# options whose value is the next token
CONSUMING_FLAGS = {
    "wget": frozenset({"-O", "-o", "-P", "--header", "--user-agent", "-U"}),
    "curl": frozenset({"-o", "-H", "-d", "--data", "-u", "-A", "-X", "--output", "--header"}),
}
_SHORT_CONSUMERS = {"wget": "OoPU", "curl": "oHduAX"}
_PREFIX_WORDS = frozenset({"then", "do", "else", "elif", "!", "{", "(", "time", "exec"})


def unresolved_marker(name: str) -> str:
    return "${UNRESOLVED:" + name + "}"


@dataclass(frozen=True)
class Piece:
    """Where characters ``[start, end)`` of a resolved value came from."""

    start: int
    end: int
    kind: str  # literal | var | unresolved | gap
    src_start: int = -1
    src_end: int = -1
    raw: str = ""
    binding: Optional["Binding"] = None


@dataclass(frozen=True)
class Binding:
    name: str
    marked: str  # value with unresolved references shown as markers
    origin: str  # ARG-default | ENV | shell-assignment
    span: SourceSpan
    position: tuple[int, int]
    pieces: tuple[Piece, ...] = field(default=(), repr=False, compare=False)

    @property
    def value(self) -> str:
        return UNRESOLVED_RE.sub("", self.marked)

    @property
    def resolved(self) -> bool:
        return UNRESOLVED_RE.search(self.marked) is None


@dataclass
class VarEnv:
    """Variable bindings collected from ARG, ENV and shell assignments.

    ``history`` holds every binding in instruction order; ``bindings`` is the
    last binding per name. Lookups can be positional so that a value is
    resolved against what was defined before its use.
    """

    history: list[Binding] = field(default_factory=list)
    diagnostics: list[tuple[SourceSpan, str]] = field(default_factory=list)

    @property
    def bindings(self) -> dict[str, Binding]:
        final: dict[str, Binding] = {}
        for b in self.history:
            final[b.name] = b
        return final

    def lookup(self, name: str, at: Optional[tuple[int, int]] = None) -> Optional[Binding]:
        found = None
        for b in self.history:
            if b.name != name:
                continue
            if at is not None and b.position >= at:
                break
            found = b
        return found

    def value(self, name: str, at: Optional[tuple[int, int]] = None) -> str:
        b = self.lookup(name, at)
        if b is None:
            self.diagnostics.append((SourceSpan("<env>", 1, 1), f"unbound variable {name}"))
            return ""
        return b.value

    def add(self, binding: Binding) -> None:
        self.history.append(binding)
        self.history.sort(key=lambda b: b.position)


@dataclass(frozen=True)
class ExtractedUrl:
    url: str
    source_kind: str  # ADD | curl | wget
    span: SourceSpan
    fully_resolved: bool
    instruction_index: int = 0
    pieces: tuple[Piece, ...] = field(default=(), repr=False, compare=False)

    @property
    def line(self) -> int:
        return self.span.start_line

    def to_json(self) -> dict:
        return {
            "url": self.url,
            "source_kind": self.source_kind,
            "line": self.line,
            "fully_resolved": self.fully_resolved,
        }


@lru_cache(maxsize=4096)
def _shell(raw_args: str) -> ShellList:
    return parse_shell(raw_args)


@lru_cache(maxsize=4096)
def _words(raw_args: str) -> tuple[ShellWord, ...]:
    return tuple(split_words(raw_args))


def _json_form(raw_args: str) -> Optional[list[ShellWord]]:
    stripped = raw_args.lstrip()
    if not stripped.startswith("["):
        return None
    try:
        items = json.loads(stripped)
    except ValueError:
        return None
    if not isinstance(items, list) or not all(isinstance(x, str) for x in items):
        return None
    words = []
    for m in _JSON_STRING.finditer(raw_args):
        text = json.loads(m.group(0))
        start = m.start(1)
        words.append(ShellWord((Literal(text, m.group(1), start),), "double", start, m.end(1)))
    return words


class _Resolver:
    def __init__(self, env: VarEnv, inst: Instruction, index: int, path: str) -> None:
        self.env = env
        self.inst = inst
        self.index = index
        self.path = path

    def _src(self, start: int, end: int) -> tuple[int, int]:
        if end <= start:
            s = self.inst.source_offset(start)
            return s, s
        return self.inst.source_offset(start), self.inst.source_offset(end - 1) + 1

    def resolve(self, word: ShellWord, at: tuple[int, int], depth: int = 0) -> tuple[str, list[Piece]]:
        out: list[str] = []
        pieces: list[Piece] = []
        pos = 0
        for part in word.parts:
            if isinstance(part, Literal):
                if not part.raw:
                    continue
                if part.raw.startswith(("${", "$(", "`")):
                    # expansion the subset parser does not evaluate
                    m = _EXPANSION_NAME.match(part.raw)
                    text = unresolved_marker(m.group(1) if m else "expansion")
                    pieces.append(Piece(pos, pos + len(text), "unresolved"))
                    self.env.diagnostics.append((self.inst.span, f"unsupported expansion {part.raw!r}"))
                    out.append(text)
                    pos += len(text)
                    continue
                s, e = self._src(part.start, part.end)
                pieces.append(Piece(pos, pos + len(part.text), "literal", s, e, part.raw))
                out.append(part.text)
                pos += len(part.text)
                continue
            binding = self.env.lookup(part.name, at)
            if binding is not None:
                text = binding.marked
                pieces.append(Piece(pos, pos + len(text), "var", binding=binding))
            elif part.default_value is not None and depth < 8:
                inner = parse_word(part.default_value, part.start + part.default_offset)
                text, sub = self.resolve(inner, at, depth + 1)
                pieces.extend(Piece(p.start + pos, p.end + pos, p.kind, p.src_start, p.src_end, p.raw, p.binding) for p in sub)
            else:
                text = unresolved_marker(part.name)
                pieces.append(Piece(pos, pos + len(text), "unresolved"))
                self.env.diagnostics.append((self.inst.span, f"unbound variable {part.name}"))
            out.append(text)
            pos += len(text)
        return "".join(out), pieces

    def resolve_words(self, words: list[ShellWord], at: tuple[int, int]) -> tuple[str, list[Piece]]:
        out: list[str] = []
        pieces: list[Piece] = []
        pos = 0
        for i, w in enumerate(words):
            if i:
                pieces.append(Piece(pos, pos + 1, "gap"))
                out.append(" ")
                pos += 1
            text, sub = self.resolve(w, at)
            pieces.extend(Piece(p.start + pos, p.end + pos, p.kind, p.src_start, p.src_end, p.raw, p.binding) for p in sub)
            out.append(text)
            pos += len(text)
        return "".join(out), pieces

    def bind(self, name: str, value: ShellWord | list[ShellWord], origin: str, position: tuple[int, int], at: tuple[int, int]) -> None:
        if isinstance(value, list):
            marked, pieces = self.resolve_words(value, at)
        else:
            marked, pieces = self.resolve(value, at)
        self.env.add(Binding(name, marked, origin, self.inst.span, position, tuple(pieces)))


def build_env(ast: DockerfileAst) -> VarEnv:
    """Collect variable bindings from ARG defaults, ENV and RUN assignments."""
    env = VarEnv()
    for idx, inst in enumerate(ast.instructions):
        r = _Resolver(env, inst, idx, ast.path)
        before = (idx, -1)
        after = (idx, _AFTER)
        if inst.keyword == "ARG":
            for word in _words(inst.raw_args):
                split = split_assignment(word)
                if split is not None:
                    r.bind(split[0], split[1], "ARG-default", after, before)
        elif inst.keyword == "ENV":
            _env_instruction(r, inst, before, after)
        elif inst.keyword == "RUN" and not inst.heredoc and _json_form(inst.raw_args) is None:
            for name, value in collect_assignments(_shell(inst.raw_args)):
                r.bind(name, value, "shell-assignment", (idx, value.start), (idx, value.start))
    return env


def _env_instruction(r: _Resolver, inst: Instruction, before: tuple[int, int], after: tuple[int, int]) -> None:
    words = list(_words(inst.raw_args))
    if not words:
        r.env.diagnostics.append((inst.span, "ENV without arguments"))
        return
    first = split_assignment(words[0])
    if first is None:
        # legacy form: ENV name value...
        name = words[0].literal_text()
        if not name or len(words) < 2:
            r.env.diagnostics.append((inst.span, "malformed ENV"))
            return
        r.bind(name, words[1:], "ENV", after, before)
        return
    for word in words:
        split = split_assignment(word)
        if split is None:
            r.env.diagnostics.append((inst.span, f"malformed ENV pair {word.raw!r}"))
            continue
        r.bind(split[0], split[1], "ENV", after, before)


def _command_words(argv: tuple[ShellWord, ...] | list[ShellWord]) -> tuple[Optional[str], list[ShellWord]]:
    """Find the command name (skipping sudo and compound-command keywords)."""
    i = 0
    n = len(argv)
    while i < n:
        text = argv[i].literal_text()
        if text in _PREFIX_WORDS:
            i += 1
            continue
        if text == "sudo":
            i += 1
            while i < n and (argv[i].literal_text() or "").startswith("-"):
                i += 1
            continue
        break
    if i >= n:
        return None, []
    name = argv[i].literal_text()
    if name is None:
        return None, []
    return name.rsplit("/", 1)[-1], list(argv[i + 1 :])


def _url_candidates(tool: str, args: list[ShellWord]) -> list[ShellWord]:
    consuming = CONSUMING_FLAGS[tool]
    short = _SHORT_CONSUMERS[tool]
    out = []
    skip = False
    for word in args:
        if skip:
            skip = False
            continue
        text = word.literal_text()
        if text is not None and text.startswith("-"):
            if text in consuming:
                skip = True
            elif re.fullmatch(r"-[A-Za-z]+", text) and text[-1] in short:
                skip = True
            continue
        out.append(word)
    return out


def extract_urls(ast: DockerfileAst, env: Optional[VarEnv] = None) -> list[ExtractedUrl]:
    """Harvest http(s) URLs from ADD sources and curl/wget arguments."""
    if env is None:
        env = build_env(ast)
    found: list[ExtractedUrl] = []
    for idx, inst in enumerate(ast.instructions):
        if inst.keyword not in ("ADD", "RUN") or inst.heredoc:
            continue
        r = _Resolver(env, inst, idx, ast.path)
        candidates: list[tuple[str, ShellWord]] = []
        if inst.keyword == "ADD":
            words = _json_form(inst.raw_args) or list(_words(inst.raw_args))
            words = [w for w in words if not (w.literal_text() or "").startswith("--")]
            if words:
                candidates.append(("ADD", words[0]))
        else:
            exec_form = _json_form(inst.raw_args)
            argvs = [exec_form] if exec_form is not None else [c.argv for c in _shell(inst.raw_args).commands]
            for argv in argvs:
                tool, args = _command_words(argv)
                if tool in CONSUMING_FLAGS:
                    candidates.extend((tool, w) for w in _url_candidates(tool, args))
        for kind, word in candidates:
            url, pieces = r.resolve(word, (idx, word.start))
            if not _URL_START.match(url):
                continue
            if any(ch.isspace() for ch in url):
                env.diagnostics.append((inst.span, f"skipped URL containing whitespace: {url!r}"))
                continue
            found.append(
                ExtractedUrl(
                    url=url,
                    source_kind=kind,
                    span=inst.span,
                    fully_resolved=UNRESOLVED_RE.search(url) is None,
                    instruction_index=idx,
                    pieces=tuple(pieces),
                )
            )
    return found


def url_host(url: str) -> Optional[str]:
    try:
        host = urlsplit(url).hostname
    except ValueError:
        return None
    return host.lower() if host else None


def domain_histogram(
    urls_by_repo: Mapping[str, Iterable[Union[ExtractedUrl, str]]],
    diagnostics: Optional[list[str]] = None,
) -> dict[str, int]:
    """Number of repositories using each URL host, most common first."""
    repos_per_domain: dict[str, set[str]] = defaultdict(set)
    for repo, urls in urls_by_repo.items():
        for u in urls:
            url = u.url if isinstance(u, ExtractedUrl) else u
            host = url_host(url)
            if host is None:
                msg = f"{repo}: no host in {url!r}"
                log.debug(msg)
                if diagnostics is not None:
                    diagnostics.append(msg)
                continue
            repos_per_domain[host].add(repo)
    counts = {d: len(r) for d, r in repos_per_domain.items()}
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
