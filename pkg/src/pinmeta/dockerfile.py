"""Top-level Dockerfile parsing.

The parser splits a Dockerfile into instructions, comments and blank lines.
RUN arguments are kept as plain strings here; :mod:`pinmeta.shell` parses
them further. Every physical line is accounted for, so the original text can
be rebuilt exactly with :func:`reconstruct`.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

KNOWN_INSTRUCTIONS = frozenset(
    {
        "ADD",
        "ARG",
        "CMD",
        "COPY",
        "ENTRYPOINT",
        "ENV",
        "EXPOSE",
        "FROM",
        "HEALTHCHECK",
        "LABEL",
        "MAINTAINER",
        "ONBUILD",
        "RUN",
        "SHELL",
        "STOPSIGNAL",
        "USER",
        "VOLUME",
        "WORKDIR",
    }
)

_DOCKERFILE_NAME = re.compile(r".*(d|D)ockerfile.*")
_KEYWORD = re.compile(r"([A-Za-z][A-Za-z0-9]*)(?=[ \t]|$)")
_CONTINUATION = re.compile(r"\\[ \t]*$")
_HEREDOC = re.compile(r"<<(-?)([\"']?)([A-Za-z_][A-Za-z0-9_]*)\2")
_HEREDOC_KEYWORDS = frozenset({"RUN", "COPY", "ADD"})


@dataclass(frozen=True)
class SourceSpan:
    path: str
    start_line: int
    end_line: int

    def __post_init__(self) -> None:
        if not self.path:
            raise ValueError("SourceSpan.path must be non-empty")
        if self.start_line > self.end_line:
            raise ValueError(f"start_line {self.start_line} > end_line {self.end_line}")


@dataclass(frozen=True)
class Diagnostic:
    span: SourceSpan
    message: str
    severity: str = "error"


@dataclass(frozen=True)
class Instruction:
    """One Dockerfile instruction with its arguments joined across lines.

    ``continuations`` records the text removed while joining: pairs of
    (offset into ``raw_args``, removed text). Together with ``indent``,
    ``keyword_text``, ``separator`` and ``line_end`` this is enough to
    rebuild the original bytes and to map argument offsets back to the file.
    """

    keyword: str
    raw_args: str
    span: SourceSpan
    offset: int = 0
    indent: str = ""
    keyword_text: str = ""
    separator: str = ""
    continuations: tuple[tuple[int, str], ...] = ()
    line_end: str = ""
    heredoc: bool = False

    @property
    def args_offset(self) -> int:
        """Absolute offset of ``raw_args[0]`` in the source text."""
        return self.offset + len(self.indent) + len(self.keyword_text) + len(self.separator)

    def source_offset(self, index: int) -> int:
        """Map an offset in ``raw_args`` to an absolute offset in the source."""
        shift = 0
        for at, removed in self.continuations:
            if at <= index:
                shift += len(removed)
            else:
                break
        return self.args_offset + index + shift

    def source_text(self) -> str:
        parts = [self.indent, self.keyword_text, self.separator]
        last = 0
        for at, removed in self.continuations:
            parts.append(self.raw_args[last:at])
            parts.append(removed)
            last = at
        parts.append(self.raw_args[last:])
        parts.append(self.line_end)
        return "".join(parts)


@dataclass(frozen=True)
class Trivia:
    """A physical line that is not part of an instruction."""

    line: int
    kind: str  # "comment" | "blank" | "error"
    text: str
    offset: int = 0


@dataclass(frozen=True)
class DockerfileAst:
    path: str
    instructions: tuple[Instruction, ...]
    valid: bool
    parse_diagnostics: tuple[Diagnostic, ...] = ()
    trivia: tuple[Trivia, ...] = field(default=(), repr=False)
    text: str = field(default="", repr=False, compare=False)

    def errors(self) -> list[Diagnostic]:
        return [d for d in self.parse_diagnostics if d.severity == "error"]


def is_dockerfile_name(filename: str) -> bool:
    """True when a basename looks like a Dockerfile (``Dockerfile``, ``x.Dockerfile``, ...)."""
    return _DOCKERFILE_NAME.fullmatch(filename) is not None


def decode(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def _physical_lines(text: str) -> list[tuple[str, str]]:
    """Split into (content, line ending) pairs; only ``\\n`` ends a line."""
    lines = []
    pos = 0
    n = len(text)
    while pos < n:
        nl = text.find("\n", pos)
        if nl == -1:
            chunk, end, pos = text[pos:], "", n
        else:
            chunk, end, pos = text[pos:nl], "\n", nl + 1
        if chunk.endswith("\r"):
            chunk, end = chunk[:-1], "\r" + end
        lines.append((chunk, end))
    return lines


def parse_dockerfile(text: bytes | str, path: str = "Dockerfile", *, lenient_from: bool = False) -> DockerfileAst:
    """Parse Dockerfile text. Never raises on malformed input."""
    text = decode(text)
    path = path or "Dockerfile"
    lines = _physical_lines(text)
    instructions: list[Instruction] = []
    trivia: list[Trivia] = []
    diagnostics: list[Diagnostic] = []

    offsets = []
    pos = 0
    for content, end in lines:
        offsets.append(pos)
        pos += len(content) + len(end)

    i = 0
    while i < len(lines):
        content, end = lines[i]
        lineno = i + 1
        stripped = content.strip(" \t")
        if not stripped:
            trivia.append(Trivia(lineno, "blank", content + end, offsets[i]))
            i += 1
            continue
        if stripped.startswith("#"):
            trivia.append(Trivia(lineno, "comment", content + end, offsets[i]))
            i += 1
            continue

        indent = content[: len(content) - len(content.lstrip(" \t"))]
        m = _KEYWORD.match(content, len(indent))
        if m is None:
            trivia.append(Trivia(lineno, "error", content + end, offsets[i]))
            diagnostics.append(Diagnostic(SourceSpan(path, lineno, lineno), "unparseable line"))
            i += 1
            continue

        keyword_text = m.group(1)
        keyword = keyword_text.upper()
        rest = content[m.end():]
        body = rest.lstrip(" \t")
        separator = rest[: len(rest) - len(body)]

        args_parts: list[str] = []
        continuations: list[tuple[int, str]] = []
        args_len = 0
        heredoc = False
        start = i

        cont = _CONTINUATION.search(body)
        if keyword in _HEREDOC_KEYWORDS and _HEREDOC.search(body) and not cont:
            heredoc = True
            args_parts.append(body)
            args_len += len(body)
            terminators = [(h.group(1) == "-", h.group(3)) for h in _HEREDOC.finditer(body)]
            line_end = end
            for strip_tabs, word in terminators:
                while True:
                    i += 1
                    if i >= len(lines):
                        diagnostics.append(
                            Diagnostic(SourceSpan(path, lineno, max(lineno, i)), f"unterminated heredoc {word}")
                        )
                        break
                    hcontent, hend = lines[i]
                    args_parts.append(line_end + hcontent)
                    args_len += len(line_end) + len(hcontent)
                    line_end = hend
                    candidate = hcontent.lstrip("\t") if strip_tabs else hcontent
                    if candidate == word:
                        break
                if i >= len(lines):
                    break
            end = line_end
            i = min(i, len(lines) - 1)
            diagnostics.append(
                Diagnostic(SourceSpan(path, lineno, i + 1), "heredoc body kept verbatim, not shell-parsed", "warning")
            )
        else:
            while cont is not None:
                piece = body[: cont.start()]
                args_parts.append(piece)
                args_len += len(piece)
                removed = [body[cont.start():] + end]
                i += 1
                # blank and comment lines inside a continuation are skipped
                while i < len(lines):
                    nxt, nend = lines[i]
                    s = nxt.strip(" \t")
                    if s and not s.startswith("#"):
                        break
                    removed.append(nxt + nend)
                    i += 1
                continuations.append((args_len, "".join(removed)))
                if i >= len(lines):
                    body, end = "", ""
                    break
                body, end = lines[i]
                cont = _CONTINUATION.search(body)
            args_parts.append(body)
            args_len += len(body)

        raw_args = "".join(args_parts)
        span = SourceSpan(path, start + 1, max(start + 1, i + 1))
        instructions.append(
            Instruction(
                keyword=keyword,
                raw_args=raw_args,
                span=span,
                offset=offsets[start],
                indent=indent,
                keyword_text=keyword_text,
                separator=separator,
                continuations=tuple(continuations),
                line_end=end,
                heredoc=heredoc,
            )
        )
        if keyword not in KNOWN_INSTRUCTIONS:
            diagnostics.append(Diagnostic(span, f"unknown instruction {keyword}"))
        i += 1

    valid = _is_valid(instructions, diagnostics, lenient_from)
    return DockerfileAst(
        path=path,
        instructions=tuple(instructions),
        valid=valid,
        parse_diagnostics=tuple(diagnostics),
        trivia=tuple(trivia),
        text=text,
    )


def _is_valid(instructions: list[Instruction], diagnostics: list[Diagnostic], lenient_from: bool) -> bool:
    if not instructions:
        return False
    if any(d.severity == "error" for d in diagnostics):
        return False
    first = instructions[0]
    if lenient_from:
        for inst in instructions:
            if inst.keyword != "ARG":
                first = inst
                break
    return first.keyword == "FROM"


def reconstruct(ast: DockerfileAst) -> str:
    """Rebuild the parsed text from instructions and trivia."""
    items: list[tuple[int, str]] = [(inst.offset, inst.source_text()) for inst in ast.instructions]
    items.extend((t.offset, t.text) for t in ast.trivia)
    items.sort(key=lambda item: item[0])
    return "".join(text for _, text in items)
