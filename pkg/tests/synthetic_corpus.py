"""Hand-authored git corpus used by the pipeline tests.

Each repository is a list of commits; each commit maps paths to new file
contents, or to ``None`` to delete the file. Dates, names and messages are
fixed so commit hashes are reproducible.
"""

from __future__ import annotations

import os
import subprocess
from pathlib import Path

SAM = "https://github.com/samtools/samtools/releases/download"
HTS = "https://github.com/samtools/htslib/releases/download"
DUMB = "https://github.com/Yelp/dumb-init/releases/download"
S6 = "https://github.com/just-containers/s6-overlay/releases/download"

ALPHA_V1 = f"""FROM ubuntu:20.04
ENV SAMTOOLS_VERSION=1.9
RUN apt-get update && apt-get install -y wget bzip2 make gcc
RUN wget -q {SAM}/${{SAMTOOLS_VERSION}}/samtools-${{SAMTOOLS_VERSION}}.tar.bz2 \\
 && wget -q {HTS}/${{SAMTOOLS_VERSION}}/htslib-${{SAMTOOLS_VERSION}}.tar.bz2 \\
 && tar -xjf samtools-${{SAMTOOLS_VERSION}}.tar.bz2
"""
ALPHA_V2 = ALPHA_V1 + "WORKDIR /opt\n"

BETA_V1 = f"""FROM debian:buster
# pinned to 1.10 for CRAM 3.0 support
RUN curl -fsSL -o /tmp/samtools.tar.bz2 {SAM}/1.10/samtools-1.10.tar.bz2
RUN curl -fsSL -o /tmp/htslib.tar.bz2 {HTS}/1.10/htslib-1.10.tar.bz2
RUN curl -fsSL https://bootstrap.pypa.io/get-pip.py -o get-pip.py
"""
BETA_V2 = BETA_V1.replace("FROM debian:buster\n", "FROM debian:buster\nLABEL maintainer=beta\n")


def _gamma(v: str) -> str:
    return f"""FROM ubuntu:20.04
ARG SAMTOOLS_VERSION={v}
ARG HTSLIB_VERSION={v}
RUN wget {SAM}/${{SAMTOOLS_VERSION}}/samtools-${{SAMTOOLS_VERSION}}.tar.bz2
RUN wget {HTS}/${{HTSLIB_VERSION}}/htslib-${{HTSLIB_VERSION}}.tar.bz2
"""


GAMMA_DEV = f"""FROM ubuntu:20.04
RUN wget -O /usr/local/bin/dumb-init {DUMB}/v1.2.4/dumb-init_1.2.4_x86_64
RUN wget -O /usr/local/bin/dumb-init-next {DUMB}/v1.2.5/dumb-init_1.2.5_x86_64
"""

DELTA = f"""FROM alpine:3.13
RUN export SV=1.10 HV=1.9 \\
 && curl -fsSL -o samtools.tar.bz2 {SAM}/$SV/samtools-$SV.tar.bz2 \\
 && curl -fsSL -o htslib.tar.bz2 {HTS}/$HV/htslib-$HV.tar.bz2
"""


def _git2(libgit2: str, libssh2: str) -> str:
    return f"""FROM golang:1.16
RUN curl -L -o libgit2.tar.gz https://github.com/libgit2/libgit2/archive/refs/tags/{libgit2}.tar.gz \\
 && curl -L -o libssh2.tar.gz https://github.com/libssh2/libssh2/releases/download/{libssh2}/{libssh2}.tar.gz
"""


def _heif(de265: str, heif: str) -> str:
    return f"""FROM ubuntu:20.04
ENV LIBDE265_VERSION={de265[1:]} LIBHEIF={heif}
RUN wget https://github.com/strukturag/libde265/releases/download/v$LIBDE265_VERSION/libde265-$LIBDE265_VERSION.tar.gz
RUN wget https://github.com/strukturag/libheif/archive/$LIBHEIF.tar.gz
"""


THETA = """FROM php:8.0-fpm
ADD https://github.com/strukturag/libde265/releases/download/v1.0.8/libde265-1.0.8.tar.gz /tmp/
RUN curl -fsSL https://github.com/strukturag/libheif/archive/v1.12.0.tar.gz | tar -xz -C /tmp
"""


def _erlang(otp: str, elixir: str) -> str:
    return f"""FROM debian:bullseye
ENV OTP_VERSION="{otp}"
RUN curl -fSL -o otp-src.tar.gz "https://github.com/erlang/otp/archive/$OTP_VERSION.tar.gz"
RUN curl -fSL -o elixir-src.tar.gz https://github.com/elixir-lang/elixir/archive/{elixir}.tar.gz
ADD https://repo.hex.pm/installs/1.1.0/hex-1.1.0.ez /tmp/
"""


LAMBDA_V1 = f"""FROM ubuntu:16.04
RUN wget {SAM}/1.6/samtools-1.6.tar.bz2 && wget {HTS}/1.6/htslib-1.6.tar.bz2
"""
LAMBDA_V2 = LAMBDA_V1 + "CMD [\"samtools\"]\n"


def _media(bedtools: str, dumb: str, s6: str) -> str:
    return f"""FROM debian:bullseye
ARG BEDTOOLS_VERSION={bedtools}
ADD {S6}/{s6}/s6-overlay-amd64.tar.gz /tmp/
RUN wget -O /usr/local/bin/dumb-init {DUMB}/{dumb}/dumb-init_{dumb[1:]}_x86_64 \\
 && wget -q https://github.com/arq5x/bedtools2/archive/${{BEDTOOLS_VERSION}}.tar.gz \\
 && curl -sL https://deb.nodesource.com/setup_14.x | bash -
"""


XI_DOCKERFILE_V1 = f"""FROM ubuntu:18.04
RUN wget -O /sbin/dumb-init {DUMB}/v1.2.3/dumb-init_1.2.3_x86_64
"""
XI_DOCKERFILE_V2 = """FROM ubuntu:18.04
RUN apt-get update && apt-get install -y dumb-init
"""
XI_CI = f"""FROM ubuntu:18.04
RUN wget {SAM}/1.7/samtools-1.7.tar.bz2
RUN wget {SAM}/1.8/samtools-1.8.tar.bz2
"""
XI_OLD = _erlang("OTP-23.0", "v1.11.0")
XI_BROKEN = f"""RUN wget {SAM}/1.9/samtools-1.9.tar.bz2
FROM ubuntu:18.04
"""

RECIPE: dict[str, list[tuple[str, str, dict[str, str | None]]]] = {
    "alpha-bio": [
        ("2020-06-01T10:00:00Z", "Add Dockerfiles", {"Dockerfile": ALPHA_V1, "dev.Dockerfile": "FROM alpha-bio:latest\nRUN apt-get install -y vim\n"}),
        ("2021-03-01T10:00:00Z", "Set workdir", {"Dockerfile": ALPHA_V2}),
    ],
    "beta-seq": [
        ("2020-08-10T09:30:00Z", "Initial image", {"Dockerfile": BETA_V1, "README.md": "beta\n"}),
        ("2021-02-15T09:30:00Z", "Add label", {"Dockerfile": BETA_V2}),
    ],
    "gamma-pipeline": [
        ("2020-09-01T08:00:00Z", "Pipeline image", {"Dockerfile": _gamma("1.10"), "Dockerfile.dev": GAMMA_DEV}),
        ("2021-04-20T08:00:00Z", "Bump samtools and htslib", {"Dockerfile": _gamma("1.12")}),
    ],
    "delta-tools": [
        ("2021-01-20T14:00:00Z", "Tools image", {"Dockerfile": DELTA}),
    ],
    "epsilon-git": [
        ("2020-09-15T12:00:00Z", "Build libgit2", {"Dockerfile": _git2("v1.0.1", "libssh2-1.9.0")}),
        ("2021-05-01T12:00:00Z", "Update libgit2 and libssh2", {"Dockerfile": _git2("v1.1.0", "libssh2-1.10.0")}),
    ],
    "zeta-gitconvex": [
        ("2021-02-01T12:00:00Z", "Build image", {"Dockerfile": _git2("v1.1.1", "libssh2-1.9.0")}),
    ],
    "eta-heif": [
        ("2020-07-01T12:00:00Z", "HEIF support", {"Dockerfile": _heif("v1.0.5", "v1.10.0")}),
        ("2021-06-01T12:00:00Z", "Update HEIF libraries", {"Dockerfile": _heif("v1.0.8", "v1.12.0")}),
    ],
    "theta-php": [
        ("2021-06-10T12:00:00Z", "PHP with HEIF", {"Dockerfile": THETA}),
    ],
    "iota-erlang": [
        ("2021-05-20T12:00:00Z", "Erlang 24", {"Dockerfile": _erlang("OTP-24.0", "v1.12.0")}),
    ],
    "kappa-elixir": [
        ("2021-03-20T12:00:00Z", "Elixir image", {"Dockerfile": _erlang("OTP-23.3", "v1.11.4")}),
    ],
    "lambda-legacy": [
        ("2019-03-01T12:00:00Z", "Legacy image", {"Dockerfile": LAMBDA_V1}),
        ("2019-08-01T12:00:00Z", "Default command", {"Dockerfile": LAMBDA_V2}),
    ],
    "mu-media": [
        ("2021-01-10T12:00:00Z", "Media image", {"Dockerfile": _media("v2.29.2", "v1.2.2", "v2.1.0.2")}),
    ],
    "nu-stack": [
        ("2020-10-01T12:00:00Z", "Stack image", {"Dockerfile": _media("v2.29.2", "v1.2.2", "v2.1.0.2")}),
        ("2021-07-01T12:00:00Z", "Update bedtools, dumb-init, s6", {"Dockerfile": _media("v2.30.0", "v1.2.5", "v2.2.0.3")}),
    ],
    "xi-cleanup": [
        (
            "2020-05-01T12:00:00Z",
            "Initial layout",
            {"Dockerfile": XI_DOCKERFILE_V1, "build/Dockerfile.ci": XI_CI, "old/Dockerfile": XI_OLD, "broken.Dockerfile": XI_BROKEN},
        ),
        ("2021-02-01T12:00:00Z", "Use distro dumb-init, drop old image", {"Dockerfile": XI_DOCKERFILE_V2, "old/Dockerfile": None}),
    ],
}


def git_env(date: str) -> dict[str, str]:
    env = dict(os.environ)
    env.update(
        GIT_AUTHOR_NAME="Corpus Author",
        GIT_AUTHOR_EMAIL="author@example.com",
        GIT_COMMITTER_NAME="Corpus Author",
        GIT_COMMITTER_EMAIL="author@example.com",
        GIT_AUTHOR_DATE=date,
        GIT_COMMITTER_DATE=date,
        GIT_CONFIG_GLOBAL=os.devnull,
        GIT_CONFIG_NOSYSTEM="1",
    )
    return env


def build_repo(dest: Path, commits: list[tuple[str, str, dict[str, str | None]]]) -> Path:
    dest.mkdir(parents=True)
    env = git_env(commits[0][0])
    subprocess.run(["git", "init", "-q", "-b", "main", str(dest)], check=True, env=env)
    for date, message, files in commits:
        for rel, content in files.items():
            target = dest / rel
            if content is None:
                target.unlink()
            else:
                target.parent.mkdir(parents=True, exist_ok=True)
                target.write_text(content, encoding="utf-8")
        env = git_env(date)
        subprocess.run(["git", "-C", str(dest), "add", "-A"], check=True, env=env)
        subprocess.run(
            ["git", "-C", str(dest), "-c", "commit.gpgsign=false", "commit", "-q", "-m", message], check=True, env=env
        )
    return dest


def build_corpus(root: Path, names: list[str] | None = None) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for name in names or sorted(RECIPE):
        build_repo(root / name, RECIPE[name])
    return root
