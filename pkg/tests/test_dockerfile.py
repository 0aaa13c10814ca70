from __future__ import annotations

import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinmeta.dockerfile import (
    KNOWN_INSTRUCTIONS,
    SourceSpan,
    is_dockerfile_name,
    parse_dockerfile,
    reconstruct,
)

ZOOKEEPER = """FROM ubuntu:14.04
ENV zookeeperVersion 3.4.13
RUN wget -q https://archive.apache.org/dist/zookeeper/zookeeper-$zookeeperVersion/zookeeper-$zookeeperVersion.tar.gz
"""


def test_zookeeper_example_has_three_instructions():
    ast = parse_dockerfile(ZOOKEEPER)
    assert [i.keyword for i in ast.instructions] == ["FROM", "ENV", "RUN"]
    assert ast.valid
    assert ast.instructions[1].raw_args == "zookeeperVersion 3.4.13"


def test_empty_file_is_invalid():
    ast = parse_dockerfile("")
    assert ast.instructions == ()
    assert not ast.valid


def test_run_before_from_is_invalid():
    ast = parse_dockerfile("RUN echo hi\nFROM alpine")
    assert len(ast.instructions) == 2
    assert not ast.valid


def test_arg_before_from_needs_lenient_flag():
    text = "# syntax=docker/dockerfile:1\nARG BASE=alpine\nFROM $BASE\n"
    assert not parse_dockerfile(text).valid
    assert parse_dockerfile(text, lenient_from=True).valid


@pytest.mark.parametrize(
    "name, expected",
    [
        ("Dockerfile", True),
        ("prod.Dockerfile", True),
        ("Dockerfile.dev", True),
        ("my-dockerfile", True),
        ("Makefile", False),
        ("DOCKERFILE", False),
    ],
)
def test_is_dockerfile_name(name, expected):
    assert is_dockerfile_name(name) is expected


def test_continuations_are_joined_and_recorded():
    text = "FROM a\nRUN apt-get update \\\n    && apt-get install -y git\n"
    ast = parse_dockerfile(text)
    run = ast.instructions[1]
    assert run.raw_args == "apt-get update     && apt-get install -y git"
    assert run.span == SourceSpan("Dockerfile", 2, 3)
    assert reconstruct(ast) == text


def test_comment_inside_continuation_is_dropped_from_args():
    text = "FROM a\nRUN echo one \\\n# a comment\n  && echo two\n"
    ast = parse_dockerfile(text)
    assert "comment" not in ast.instructions[1].raw_args
    assert ast.instructions[1].raw_args.endswith("&& echo two")
    assert reconstruct(ast) == text


def test_keywords_are_uppercased():
    ast = parse_dockerfile("from alpine\nrun echo hi\n")
    assert [i.keyword for i in ast.instructions] == ["FROM", "RUN"]
    assert ast.valid


def test_unknown_keyword_is_diagnosed():
    ast = parse_dockerfile("FROM a\nFROBNICATE x\n")
    assert not ast.valid
    assert any("FROBNICATE" in d.message for d in ast.errors())


def test_heredoc_is_kept_verbatim_with_warning():
    text = "FROM a\nRUN <<EOF\ncurl https://x.org/a\nEOF\nRUN echo after\n"
    ast = parse_dockerfile(text)
    assert [i.keyword for i in ast.instructions] == ["FROM", "RUN", "RUN"]
    assert ast.instructions[1].heredoc
    assert any(d.severity == "warning" for d in ast.parse_diagnostics)
    assert reconstruct(ast) == text


def test_parse_is_deterministic():
    assert parse_dockerfile(ZOOKEEPER) == parse_dockerfile(ZOOKEEPER)


def test_invalid_utf8_is_replaced():
    ast = parse_dockerfile(b"FROM a\nRUN echo \xff\xfe\n")
    assert ast.valid
    assert "�" in ast.instructions[1].raw_args


_line = st.one_of(
    st.sampled_from(sorted(KNOWN_INSTRUCTIONS)).map(lambda k: k.lower() if len(k) % 2 else k),
    st.sampled_from(["#", "  # c", "", "   ", "\\", "x \\", "RUN <<EOF", "EOF", "\t", "\r"]),
    st.text(alphabet=" \t\\#$'\"&|;=abcXYZ-./:{}()<\r", max_size=12),
)
_dockerfile = st.lists(st.tuples(_line, st.text(alphabet=" \t\\abc${}", max_size=8)), max_size=12).map(
    lambda parts: "\n".join(a + (" " + b if b else "") for a, b in parts)
)


@settings(max_examples=400, deadline=None)
@given(_dockerfile)
def test_reconstruction_is_lossless(text):
    assert reconstruct(parse_dockerfile(text)) == text


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=200))
def test_reconstruction_on_arbitrary_text(text):
    assert reconstruct(parse_dockerfile(text)) == text


@settings(max_examples=300, deadline=None)
@given(_dockerfile)
def test_valid_implies_from_first(text):
    ast = parse_dockerfile(text)
    if ast.valid:
        assert ast.instructions and ast.instructions[0].keyword == "FROM"
    for inst in ast.instructions:
        assert re.fullmatch(r"[A-Z][A-Z0-9]*", inst.keyword)


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=300))
def test_parser_is_total_on_bytes(data):
    ast = parse_dockerfile(data)
    assert isinstance(ast.valid, bool)
