"""A small shell parser for RUN arguments.

Only the parts of the shell language needed to find commands, their
arguments, variable assignments and ``$VAR`` references are understood.
Anything else (command substitution, redirections, compound commands, ...)
is kept as literal text and noted in ``ShellList.degraded``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Optional, Union

CONNECTORS = ("&&", "||", ";", "|", "&", "\n")

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_ASSIGNMENT = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)=")
_BLANKS = " \t\r\f\v"
_RESERVED = frozenset({"if", "then", "else", "elif", "fi", "for", "while", "until", "do", "done", "case", "esac", "{", "}", "!"})


@dataclass(frozen=True)
class Literal:
    text: str
    raw: str
    start: int = 0  # offset of ``raw`` in the parsed string

    @property
    def end(self) -> int:
        return self.start + len(self.raw)


@dataclass(frozen=True)
class VarRef:
    name: str
    has_braces: bool = False
    default_value: Optional[str] = None
    raw: str = ""
    start: int = 0
    # offset of default_value inside raw, when present
    default_offset: int = -1

    @property
    def end(self) -> int:
        return self.start + len(self.raw)


Segment = Union[Literal, VarRef]


@dataclass(frozen=True)
class ShellWord:
    parts: tuple[Segment, ...]
    quoted: str = "none"  # none | single | double
    start: int = 0
    end: int = 0

    @property
    def raw(self) -> str:
        return "".join(p.raw for p in self.parts)

    def literal_text(self) -> Optional[str]:
        """The word's value if it has no variable references."""
        if any(isinstance(p, VarRef) for p in self.parts):
            return None
        return "".join(p.text for p in self.parts)

    def expand(self, lookup: Callable[[str], Optional[str]]) -> str:
        """Substitute variables; ``lookup`` returns None for unbound names."""
        out = []
        for p in self.parts:
            if isinstance(p, Literal):
                out.append(p.text)
                continue
            value = lookup(p.name)
            if value is None and p.default_value is not None:
                value = parse_word(p.default_value).expand(lookup)
            out.append(value or "")
        return "".join(out)


@dataclass(frozen=True)
class ShellCommand:
    assignments: tuple[tuple[str, ShellWord], ...] = ()
    argv: tuple[ShellWord, ...] = ()

    @property
    def name(self) -> Optional[str]:
        return self.argv[0].literal_text() if self.argv else None


@dataclass(frozen=True)
class ShellList:
    commands: tuple[ShellCommand, ...] = ()
    connectors: tuple[str, ...] = ()
    degraded: frozenset[str] = frozenset()
    diagnostics: tuple[str, ...] = ()


class _WordBuilder:
    def __init__(self, start: int) -> None:
        self.start = start
        self.parts: list[Segment] = []
        self.quotes: set[str] = set()
        self._text: list[str] = []
        self._raw: list[str] = []
        self._lit_start = start

    def lit(self, text: str, raw: str, pos: int) -> None:
        if not self._raw:
            self._lit_start = pos
        self._text.append(text)
        self._raw.append(raw)

    def opaque(self, raw: str, pos: int) -> None:
        # an expansion kept verbatim gets its own segment so callers can spot it
        self.flush()
        self.parts.append(Literal(raw, raw, pos))

    def flush(self) -> None:
        if self._raw:
            self.parts.append(Literal("".join(self._text), "".join(self._raw), self._lit_start))
            self._text, self._raw = [], []

    def var(self, ref: VarRef) -> None:
        self.flush()
        self.parts.append(ref)

    def build(self, end: int) -> ShellWord:
        self.flush()
        if not self.quotes:
            quoted = "none"
        elif "double" in self.quotes:
            quoted = "double"
        else:
            quoted = "single"
        return ShellWord(tuple(self.parts), quoted, self.start, end)


class _Parser:
    def __init__(self, text: str, plain: bool = False) -> None:
        self.s = text
        self.n = len(text)
        self.pos = 0
        # plain: Dockerfile instruction arguments, no shell operators
        self.plain = plain
        self.degraded: set[str] = set()
        self.diagnostics: list[str] = []

    # -- scanning helpers -------------------------------------------------

    def _skip_balanced(self, pos: int, open_ch: str, close_ch: str) -> int:
        """Return the index just past the matching ``close_ch``; ``pos`` is past the opener."""
        depth = 1
        s, n = self.s, self.n
        while pos < n:
            c = s[pos]
            if c == "\\":
                pos += 2
                continue
            if c == "'":
                q = s.find("'", pos + 1)
                pos = n if q == -1 else q + 1
                continue
            if c == '"':
                pos = self._skip_double(pos + 1)
                continue
            if c == open_ch:
                depth += 1
            elif c == close_ch:
                depth -= 1
                if depth == 0:
                    return pos + 1
            pos += 1
        self.diagnostics.append(f"unterminated {open_ch}{close_ch} group")
        return n

    def _skip_double(self, pos: int) -> int:
        s, n = self.s, self.n
        while pos < n:
            c = s[pos]
            if c == "\\":
                pos += 2
                continue
            if c == '"':
                return pos + 1
            pos += 1
        return n

    def _dollar(self, pos: int, in_double: bool) -> tuple[Optional[VarRef], int]:
        """Parse a ``$`` expansion at ``pos``. Returns (ref or None, end)."""
        s, n = self.s, self.n
        nxt = pos + 1
        if nxt >= n:
            return None, nxt
        c = s[nxt]
        if self.plain and c != "{" and not (c.isalpha() or c == "_"):
            return None, nxt
        if c == "(":
            self.degraded.add("command-substitution")
            return None, self._skip_balanced(nxt + 1, "(", ")")
        if c == "{":
            before = len(self.diagnostics)
            close = self._skip_balanced(nxt + 1, "{", "}") - 1
            if len(self.diagnostics) > before:
                return None, n
            body = s[nxt + 1 : close]
            raw = s[pos : close + 1]
            m = _NAME.match(body)
            if m and m.end() == len(body):
                return VarRef(m.group(0), True, None, raw, pos), close + 1
            if m and body[m.end() :].startswith((":-", "-")):
                op = ":-" if body[m.end() :].startswith(":-") else "-"
                default = body[m.end() + len(op) :]
                return (
                    VarRef(m.group(0), True, default, raw, pos, 2 + m.end() + len(op)),
                    close + 1,
                )
            self.degraded.add("parameter-expansion")
            return None, close + 1
        if c == "'" and not in_double:
            self.degraded.add("ansi-c-quoting")
            q = s.find("'", nxt + 1)
            return None, n if q == -1 else q + 1
        m = _NAME.match(s, nxt)
        if m:
            return VarRef(m.group(0), False, None, s[pos : m.end()], pos), m.end()
        return None, nxt

    # -- words ------------------------------------------------------------

    def _read_word(self) -> ShellWord:
        s, n = self.s, self.n
        w = _WordBuilder(self.pos)
        pos = self.pos
        stops = _BLANKS + "\n" if self.plain else _BLANKS + "\n;&|()"
        while pos < n:
            c = s[pos]
            if c in stops:
                if c in "()" and pos == w.start:
                    # lone parenthesis: keep as its own word
                    self.degraded.add("subshell")
                    w.lit(c, c, pos)
                    pos += 1
                break
            if c in "<>" and not self.plain:
                self.degraded.add("redirection")
                m = re.compile(r"<<-|<<|>>|<&|>&|<>|>\||[<>]").match(s, pos)
                op = m.group(0)
                w.lit(op, op, pos)
                pos += len(op)
                if pos < n and s[pos] == "-" and op in ("<&", ">&"):
                    w.lit("-", "-", pos)
                    pos += 1
                continue
            if c == "\\":
                if pos + 1 < n and s[pos + 1] == "\n":
                    w.lit("", s[pos : pos + 2], pos)
                    pos += 2
                    continue
                esc = s[pos + 1 : pos + 2]
                w.lit(esc, s[pos : pos + 2], pos)
                pos += 2 if esc else 1
                continue
            if c == "'":
                w.quotes.add("single")
                q = s.find("'", pos + 1)
                if q == -1:
                    self.diagnostics.append("unterminated single quote")
                    q = n
                    w.lit(s[pos + 1 : q], s[pos:q], pos)
                    pos = n
                else:
                    w.lit(s[pos + 1 : q], s[pos : q + 1], pos)
                    pos = q + 1
                continue
            if c == '"':
                w.quotes.add("double")
                w.lit("", '"', pos)
                pos = self._read_double(w, pos + 1)
                continue
            if c == "`" and not self.plain:
                self.degraded.add("backticks")
                q = s.find("`", pos + 1)
                end = n if q == -1 else q + 1
                if q == -1:
                    self.diagnostics.append("unterminated backtick")
                w.opaque(s[pos:end], pos)
                pos = end
                continue
            if c == "$":
                ref, end = self._dollar(pos, False)
                if ref is not None:
                    w.var(ref)
                else:
                    w.opaque(s[pos:end], pos)
                pos = end
                continue
            w.lit(c, c, pos)
            pos += 1
        self.pos = pos
        return w.build(pos)

    def _read_double(self, w: _WordBuilder, pos: int) -> int:
        s, n = self.s, self.n
        while pos < n:
            c = s[pos]
            if c == '"':
                w.lit("", '"', pos)
                return pos + 1
            if c == "\\" and pos + 1 < n and s[pos + 1] in '$`"\\\n':
                esc = s[pos + 1]
                w.lit("" if esc == "\n" else esc, s[pos : pos + 2], pos)
                pos += 2
                continue
            if c == "$":
                ref, end = self._dollar(pos, True)
                if ref is not None:
                    w.var(ref)
                else:
                    w.opaque(s[pos:end], pos)
                pos = end
                continue
            if c == "`" and not self.plain:
                self.degraded.add("backticks")
                q = s.find("`", pos + 1)
                end = n if q == -1 else q + 1
                w.opaque(s[pos:end], pos)
                pos = end
                continue
            w.lit(c, c, pos)
            pos += 1
        self.diagnostics.append("unterminated double quote")
        return n

    # -- commands ---------------------------------------------------------

    def _operator(self) -> Optional[str]:
        s, pos = self.s, self.pos
        c = s[pos]
        if c == "\n":
            return "\n"
        if c == ";":
            return ";"
        two = s[pos : pos + 2]
        if two in ("&&", "||"):
            return two
        if c == "|":
            return "|"
        if c == "&":
            return "&"
        return None

    def parse(self) -> ShellList:
        s, n = self.s, self.n
        commands: list[ShellCommand] = []
        connectors: list[str] = []
        pending: Optional[str] = None
        assignments: list[tuple[str, ShellWord]] = []
        argv: list[ShellWord] = []

        def close(op: Optional[str]) -> None:
            nonlocal pending, assignments, argv
            if assignments or argv:
                if commands:
                    connectors.append(pending or ";")
                commands.append(ShellCommand(tuple(assignments), tuple(argv)))
                assignments, argv = [], []
                pending = op
            elif op in ("&&", "||", "|", "&") and not commands:
                self.diagnostics.append(f"operator {op!r} without a preceding command")
            elif op is not None and pending is None and commands:
                pending = op

        while self.pos < n:
            c = s[self.pos]
            if c in _BLANKS:
                self.pos += 1
                continue
            if c == "\\" and s[self.pos : self.pos + 2] == "\\\n":
                self.pos += 2
                continue
            if c == "#":
                nl = s.find("\n", self.pos)
                self.pos = n if nl == -1 else nl
                continue
            if c == "&" and s[self.pos : self.pos + 2] == "&>":
                self.degraded.add("redirection")
                argv.append(ShellWord((Literal("&>", "&>", self.pos),), "none", self.pos, self.pos + 2))
                self.pos += 2
                continue
            op = self._operator()
            if op is not None:
                self.pos += len(op)
                close(op)
                continue
            if c == ")":
                self.degraded.add("subshell")
                self.pos += 1
                close(None)
                continue
            word = self._read_word()
            if word.end == word.start:
                # defensive: never loop without progress
                self.pos += 1
                continue
            if not argv:
                split = _split_assignment(word)
                if split is not None:
                    assignments.append(split)
                    continue
                if word.literal_text() in _RESERVED:
                    self.degraded.add("compound-command")
            argv.append(word)
        close(None)
        return ShellList(tuple(commands), tuple(connectors), frozenset(self.degraded), tuple(self.diagnostics))


def _split_assignment(word: ShellWord) -> Optional[tuple[str, ShellWord]]:
    """Split ``NAME=value`` into (NAME, value word) when the name is unquoted."""
    if not word.parts or not isinstance(word.parts[0], Literal):
        return None
    first = word.parts[0]
    if first.raw != first.text:
        # the name part must be plain text; allow quoting only after '='
        m = _ASSIGNMENT.match(first.raw)
        if m is None or not first.text.startswith(m.group(0)):
            return None
    m = _ASSIGNMENT.match(first.text)
    if m is None or not first.raw.startswith(m.group(0)):
        return None
    cut = m.end()
    rest_raw = first.raw[cut:]
    rest_text = first.text[cut:]
    parts: list[Segment] = []
    if rest_raw:
        parts.append(Literal(rest_text, rest_raw, first.start + cut))
    parts.extend(word.parts[1:])
    value = ShellWord(tuple(parts), word.quoted, word.start + cut, word.end)
    return m.group(1), value


def parse_word(text: str, offset: int = 0) -> ShellWord:
    """Parse ``text`` as a single word: quotes apply, whitespace is kept literally."""
    p = _Parser(text)
    w = _WordBuilder(0)
    pos = 0
    n = len(text)
    while pos < n:
        c = text[pos]
        if c == "$":
            ref, end = p._dollar(pos, True)
            if ref is not None:
                w.var(ref)
            elif end - pos <= 1:
                w.lit("$", "$", pos)
            else:
                w.opaque(text[pos:end], pos)
            pos = end
        elif c == "'":
            w.quotes.add("single")
            q = text.find("'", pos + 1)
            end = n if q == -1 else q + 1
            w.lit(text[pos + 1 : q if q != -1 else n], text[pos:end], pos)
            pos = end
        elif c == '"':
            w.quotes.add("double")
            w.lit("", '"', pos)
            pos = p._read_double(w, pos + 1)
        elif c == "\\" and pos + 1 < n:
            w.lit(text[pos + 1], text[pos : pos + 2], pos)
            pos += 2
        else:
            w.lit(c, c, pos)
            pos += 1
    word = w.build(n)
    return shift_word(word, offset) if offset else word


def shift_word(word: ShellWord, offset: int) -> ShellWord:
    parts: list[Segment] = []
    for p in word.parts:
        if isinstance(p, Literal):
            parts.append(Literal(p.text, p.raw, p.start + offset))
        else:
            parts.append(VarRef(p.name, p.has_braces, p.default_value, p.raw, p.start + offset, p.default_offset))
    return ShellWord(tuple(parts), word.quoted, word.start + offset, word.end + offset)


def split_words(text: str) -> list[ShellWord]:
    """Split Dockerfile instruction arguments into words.

    Quotes, backslash escapes and ``$VAR`` references are interpreted; shell
    operators and comments are not.
    """
    p = _Parser(text, plain=True)
    words: list[ShellWord] = []
    while p.pos < p.n:
        if text[p.pos] in _BLANKS or text[p.pos] == "\n":
            p.pos += 1
            continue
        if text.startswith("\\\n", p.pos):
            p.pos += 2
            continue
        word = p._read_word()
        if word.end == word.start:
            p.pos += 1
            continue
        words.append(word)
    return words


def split_assignment(word: ShellWord) -> Optional[tuple[str, ShellWord]]:
    return _split_assignment(word)


def _join_assignment(name: str, value: ShellWord) -> ShellWord:
    start = value.start - len(name) - 1
    head = Literal(name + "=", name + "=", start)
    parts: list[Segment] = [head]
    if value.parts and isinstance(value.parts[0], Literal):
        first = value.parts[0]
        parts[0] = Literal(head.text + first.text, head.raw + first.raw, start)
        parts.extend(value.parts[1:])
    else:
        parts.extend(value.parts)
    return ShellWord(tuple(parts), value.quoted, start, value.end)


def parse_shell(text: str) -> ShellList:
    """Parse a RUN argument string into a list of simple commands."""
    return _Parser(text).parse()


def collect_assignments(shell: ShellList) -> list[tuple[str, ShellWord]]:
    """All variable assignments in source order, including ``export NAME=value``."""
    found: list[tuple[str, ShellWord]] = []
    for cmd in shell.commands:
        found.extend(cmd.assignments)
        if cmd.name == "export":
            for word in cmd.argv[1:]:
                split = _split_assignment(word)
                if split is not None:
                    found.append(split)
    found.sort(key=lambda item: item[1].start)
    return found
