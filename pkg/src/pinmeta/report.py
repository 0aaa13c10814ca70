"""Figures and delimited tables built from the pipeline's JSON artifacts."""

from __future__ import annotations

import csv
from collections import Counter
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

TOP_DOMAINS = 30
_PNG_META = {"Software": None}


def write_tsv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _bar(path: Path, labels: Sequence[str], values: Sequence[int], title: str, xlabel: str, ylabel: str, horizontal: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(8, max(3.0, 0.28 * len(labels) + 1.2)) if horizontal else (7, 4))
    if not labels:
        ax.text(0.5, 0.5, "no data", ha="center", va="center", transform=ax.transAxes)
        ax.set_xticks([])
        ax.set_yticks([])
    elif horizontal:
        ax.barh(range(len(labels)), values, color="#4c72b0")
        ax.set_yticks(range(len(labels)), labels)
        ax.invert_yaxis()
    else:
        ax.bar(range(len(labels)), values, color="#4c72b0")
        ax.set_xticks(range(len(labels)), labels)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def _histogram(values: Sequence[int]) -> tuple[list[str], list[int]]:
    counts = Counter(values)
    keys = sorted(counts)
    return [str(k) for k in keys], [counts[k] for k in keys]


def _md_table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in r) + " |" for r in rows]
    return lines


def write_report(
    out_dir: Path,
    *,
    domains: Mapping[str, Any],
    classification: Mapping[str, Any],
    groups: Mapping[str, Any],
    recommendations: Optional[Mapping[str, Any]] = None,
) -> list[Path]:
    """Write PNG figures, TSV tables and ``report.md`` into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def tsv(name: str, header: Sequence[str], rows: list[Sequence[Any]]) -> list[Sequence[Any]]:
        write_tsv(out_dir / name, header, rows)
        written.append(out_dir / name)
        return rows

    def fig(name: str, *args: Any, **kwargs: Any) -> None:
        _bar(out_dir / name, *args, **kwargs)
        written.append(out_dir / name)

    dom_rows = tsv("domains.tsv", ["domain", "repos"], [(d["domain"], d["repos"]) for d in domains["domains"]])
    top = dom_rows[:TOP_DOMAINS]
    fig("domains.png", [r[0] for r in top], [r[1] for r in top], "URL domains", "repositories", "", horizontal=True)

    t1 = tsv("table1.tsv", ["status", "dockerfiles", "percent"], [(r["category"], r["count"], r["percent"]) for r in classification["table1"]["rows"]])
    t2 = tsv("table2.tsv", ["status", "repositories", "percent"], [(r["category"], r["count"], r["percent"]) for r in classification["table2"]["rows"]])
    t4 = tsv("table4.tsv", ["class", "groups", "percent"], [(r["category"], r["count"], r["percent"]) for r in groups["table4"]["rows"]])

    gs = groups["groups"]
    sizes = _histogram([g["size"] for g in gs])
    tsv("set_sizes.tsv", ["packages_in_set", "groups"], list(zip(*sizes)))
    fig("set_sizes.png", *sizes, "Packages per shared set", "packages in set", "groups")

    members = _histogram([len(g["members"]) for g in gs])
    tsv("group_sizes.tsv", ["repositories_in_group", "groups"], list(zip(*members)))
    fig("group_sizes.png", *members, "Repositories per group", "repositories", "groups")

    comparable = [g for g in gs if "metrics" in g]
    tsv(
        "version_differences.tsv",
        ["group", "packages", "repos_with_differences", "max_version_difference"],
        [
            (g["id"], ",".join(g["packages"]), g["metrics"]["repos_with_differences"], g["metrics"]["max_version_difference"])
            for g in comparable
        ],
    )
    diffs = _histogram([g["metrics"]["repos_with_differences"] for g in comparable])
    fig("repos_with_differences.png", *diffs, "Repositories behind the newest combination", "repositories", "groups")
    spread = _histogram([g["metrics"]["max_version_difference"] for g in comparable])
    fig("max_version_difference.png", *spread, "Largest version difference per group", "tags apart", "groups")

    md = ["# pinmeta report", "", f"Dormancy cutoff: {classification['cutoff']}", "", "## Dockerfiles by status", ""]
    md += _md_table(["status", "Dockerfiles", "%"], t1)
    md += ["", "## Repositories by status", ""]
    md += _md_table(["status", "repositories", "%"], t2)
    md += ["", "## Groups by class", ""]
    md += _md_table(["class", "groups", "%"], t4)
    md += ["", "## Top domains", ""]
    md += _md_table(["domain", "repositories"], top)
    if recommendations is not None:
        md += ["", "## Recommendations", ""]
        md += _md_table(
            ["group", "repository", "Dockerfile", "status"],
            [(r["group"], r["repo"], r["path"], r["status"]) for r in recommendations["recommendations"]],
        )
    md += [
        "",
        "Figures: domains.png, set_sizes.png, group_sizes.png, repos_with_differences.png, max_version_difference.png",
        "",
    ]
    (out_dir / "report.md").write_text("\n".join(md), encoding="utf-8")
    written.append(out_dir / "report.md")
    return written
