"""Command-line pipeline: scan, classify, groups, recommend, report."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .extract import domain_histogram
from .history import (
    STATUS_PRECEDENCE,
    DockerfileStatus,
    RawRepo,
    RepoStatus,
    classify_dockerfile,
    classify_repo,
    discover_repos,
    history_from_json,
    history_to_json,
    json_snapshot_content,
    load_history_file,
    mine_git_repo,
    raw_repos_from_json,
    read_blob,
    tally,
    to_iso,
    validate_repo,
)
from .metamaint import GroupClass, analyze_groups, groups_from_json, groups_to_json
from .pkgid import PackageIdentity, match_github_url
from .recommend import load_advisories, plan_updates, recommendation_index_entry
from .registry import RegistryLoadError, fetch_live, load_fixture, snapshot_from_json

log = logging.getLogger("pinmeta")

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2

SCAN_SUMMARY = "scan_summary.json"
EXTRACTION = "extraction.json"
DOMAINS = "domains.json"
TIMELINES = "timelines.json"
REGISTRY = "registry.json"
CLASSIFICATION = "classification.json"
GROUPS = "groups.json"
RECOMMENDATIONS = "recommendations.json"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    corpus_dir: Optional[Path]
    output_dir: Path
    registry_fixture: Optional[Path] = None
    live: bool = False
    cutoff: Optional[date] = None
    jobs: int = 1
    lenient_from: bool = False
    keep_unresolved: bool = False
    advisories: Optional[Path] = None
    cache_dir: Optional[Path] = None

    @property
    def cutoff_datetime(self) -> datetime:
        d = self.cutoff or default_cutoff()
        return datetime(d.year, d.month, d.day, tzinfo=timezone.utc)


def default_cutoff(today: Optional[date] = None) -> date:
    today = today or datetime.now(timezone.utc).date()
    try:
        return today.replace(year=today.year - 1)
    except ValueError:  # Feb 29
        return today - timedelta(days=365)


def _date(text: str) -> date:
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    if not path.exists():
        raise UsageError(f"missing artifact {path}; run the earlier pipeline stage first")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def text_table(rows: Sequence[dict[str, Any]], total: int, title: str) -> str:
    width = max([len("Total")] + [len(str(r["category"])) for r in rows])
    lines = [title, f"{'Category':<{width}}  {'Count':>7}  {'%':>6}"]
    for r in rows:
        lines.append(f"{r['category']:<{width}}  {r['count']:>7}  {r['percent']:>6.1f}")
    lines.append(f"{'Total':<{width}}  {total:>7}  {100.0 if total else 0.0:>6.1f}")
    return "\n".join(lines) + "\n"


# -- scan -------------------------------------------------------------------


def _mine(args: tuple[str, bool]) -> RawRepo:
    path, lenient = args
    raw = mine_git_repo(path, lenient_from=lenient)
    raw.source = Path(path).name
    return raw


def load_corpus(cfg: RunConfig) -> list[RawRepo]:
    corpus = cfg.corpus_dir
    if corpus is None or not corpus.exists():
        raise UsageError(f"corpus not found: {corpus}")
    if corpus.is_file():
        try:
            data = load_history_file(corpus)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read history file {corpus}: {exc}") from None
        return sorted(raw_repos_from_json(data, corpus.name, lenient_from=cfg.lenient_from), key=lambda r: r.repo)
    tasks = [(str(p), cfg.lenient_from) for p in discover_repos(corpus)]
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            raws = list(pool.map(_mine, tasks))
    else:
        raws = [_mine(t) for t in tasks]
    return sorted(raws, key=lambda r: r.repo)


def _identities(raws: Sequence[RawRepo]) -> set[PackageIdentity]:
    found = set()
    for raw in raws:
        for df in raw.dockerfiles:
            for s in df.snapshots:
                for u in s.urls:
                    ref = match_github_url(u.url)
                    if ref is not None:
                        found.add(ref.identity)
    return found


def load_registry(cfg: RunConfig, identities: set[PackageIdentity]):
    if cfg.live:
        return fetch_live(identities, cache_dir=cfg.cache_dir)
    if cfg.registry_fixture is None:
        raise UsageError("either --registry-fixture or --live is required")
    if not cfg.registry_fixture.exists():
        raise UsageError(f"registry fixture not found: {cfg.registry_fixture}")
    try:
        return load_fixture(cfg.registry_fixture)
    except RegistryLoadError as exc:
        raise UsageError(f"bad registry fixture: {exc}") from None


def cmd_scan(cfg: RunConfig) -> int:
    raws = load_corpus(cfg)
    if not raws:
        log.warning("corpus %s contains no repositories", cfg.corpus_dir)
    registry = load_registry(cfg, _identities(raws))
    diagnostics: list[str] = []
    histories = [validate_repo(r, registry, keep_unresolved=cfg.keep_unresolved, diagnostics=diagnostics) for r in raws]

    extraction = []
    for h in histories:
        extraction.append(
            {
                "repo": h.repo,
                "error": h.error,
                "dockerfiles": [
                    {"path": p, "valid": h.latest_valid[p], "urls": [u.to_json() for u in h.latest_urls[p]]}
                    for p in sorted(h.latest_urls)
                ],
            }
        )
    domains = domain_histogram({h.repo: [u.url for urls in h.latest_urls.values() for u in urls] for h in histories})
    out = cfg.output_dir
    write_json(out / EXTRACTION, {"schema": "pinmeta.extraction/1", "repos": extraction})
    write_json(out / DOMAINS, {"schema": "pinmeta.domains/1", "domains": [{"domain": d, "repos": n} for d, n in domains.items()]})
    write_json(out / TIMELINES, history_to_json(histories))
    used = sorted({t_id for h in histories for t in h.timelines for s in t.snapshots for t_id in s.identities()})
    write_json(out / REGISTRY, registry.restrict(used).to_json())

    errors = {h.repo: h.error for h in histories if h.error}
    summary = {
        "schema": "pinmeta.scan/1",
        "corpus": str(cfg.corpus_dir),
        "corpus_kind": "history-file" if cfg.corpus_dir.is_file() else "directory",
        "registry_mode": "live" if cfg.live else "fixture",
        "repos": len(histories),
        "dockerfiles": sum(len(h.latest_urls) for h in histories),
        "analyzed_dockerfiles": sum(len(h.timelines) for h in histories),
        "urls": sum(len(u) for h in histories for u in h.latest_urls.values()),
        "packages": len(used),
        "repo_errors": errors,
        "registry_errors": dict(sorted(registry.errors.items())),
        "excluded": {f"{h.repo}:{p}": why for h in histories for p, why in sorted(h.excluded.items())},
        "diagnostics": sorted(set(diagnostics)),
    }
    write_json(out / SCAN_SUMMARY, summary)
    for repo, err in errors.items():
        print(f"error: {repo}: {err}", file=sys.stderr)
    print(f"scanned {len(histories)} repositories, {summary['analyzed_dockerfiles']} Dockerfiles with packages")
    return EXIT_PARTIAL if errors else EXIT_OK


# -- classify ---------------------------------------------------------------


def cmd_classify(cfg: RunConfig) -> int:
    histories = history_from_json(read_json(cfg.output_dir / TIMELINES))
    cutoff = cfg.cutoff_datetime
    repos = []
    df_statuses: list[DockerfileStatus] = []
    repo_statuses: list[RepoStatus] = []
    for h in histories:
        if h.error or h.last_commit is None:
            continue
        per_df = {t.path: classify_dockerfile(t, h.last_commit, cutoff) for t in h.timelines}
        status = classify_repo(per_df.values())
        df_statuses.extend(per_df.values())
        repo_statuses.append(status)
        repos.append(
            {
                "repo": h.repo,
                "status": status.value,
                "last_commit": to_iso(h.last_commit),
                "dockerfiles": {p: s.value for p, s in sorted(per_df.items())},
            }
        )
    table1 = tally(df_statuses, list(DockerfileStatus))
    table2 = tally(repo_statuses, list(RepoStatus))
    report = {
        "schema": "pinmeta.classification/1",
        "cutoff": cfg.cutoff_datetime.date().isoformat(),
        "precedence": [s.value for s in STATUS_PRECEDENCE],
        "table1": table1,
        "table2": table2,
        "repos": repos,
    }
    write_json(cfg.output_dir / CLASSIFICATION, report)
    text = (
        text_table(table1["rows"], table1["total"], "Dockerfiles by status")
        + "\n"
        + text_table(table2["rows"], table2["total"], "Repositories by status")
    )
    (cfg.output_dir / "classification.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# -- groups -----------------------------------------------------------------


def _load_registry_artifact(cfg: RunConfig):
    return snapshot_from_json(read_json(cfg.output_dir / REGISTRY))


def cmd_groups(cfg: RunConfig) -> int:
    histories = history_from_json(read_json(cfg.output_dir / TIMELINES))
    classification = read_json(cfg.output_dir / CLASSIFICATION)
    registry = _load_registry_artifact(cfg)
    statuses = {r["repo"]: RepoStatus(r["status"]) for r in classification["repos"]}
    timelines = [t for h in histories for t in h.timelines]
    diagnostics: list[str] = []
    groups = analyze_groups(timelines, statuses, registry, diagnostics)
    data = groups_to_json(groups, registry)
    data["diagnostics"] = sorted(set(diagnostics))
    write_json(cfg.output_dir / GROUPS, data)
    lines = [text_table(data["table4"]["rows"], data["table4"]["total"], "Package-set groups by class")]
    for g in data["groups"]:
        lines.append(f"{g['id']}  {g['class']:<12}  {' + '.join(g['packages'])}")
        for m in g["members"]:
            lines.append(f"    {m['repo']:<24} {m['status']:<12} {' '.join(m['tags'])}  ({m['path']})")
        if "metrics" in g:
            mt = g["metrics"]
            lines.append(
                f"    repos with differences: {mt['repos_with_differences']}, "
                f"max version difference: {mt['max_version_difference']}"
            )
    text = "\n".join(lines) + "\n"
    (cfg.output_dir / "groups.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


# -- recommend --------------------------------------------------------------


class _SourceReader:
    """Fetch a Dockerfile version from the corpus recorded at scan time."""

    def __init__(self, corpus: Path, sources: dict[str, tuple[str, str]]) -> None:
        self.corpus = corpus
        self.sources = sources
        self._json: Optional[dict] = None

    def __call__(self, repo: str, path: str, commit: str) -> Optional[str]:
        source, kind = self.sources.get(repo, (repo, "git"))
        if kind == "json":
            if self._json is None:
                self._json = load_history_file(self.corpus)
            return json_snapshot_content(self._json, repo, path, commit)
        blob = read_blob(self.corpus / source, commit, path)
        return None if blob is None else blob.decode("utf-8", "replace")


def cmd_recommend(cfg: RunConfig) -> int:
    out = cfg.output_dir
    summary = read_json(out / SCAN_SUMMARY)
    timelines = read_json(out / TIMELINES)
    registry = _load_registry_artifact(cfg)
    groups = groups_from_json(read_json(out / GROUPS), registry)
    corpus = cfg.corpus_dir or Path(summary["corpus"])
    reader = _SourceReader(corpus, {r["repo"]: (r["source"], r["kind"]) for r in timelines["repos"]})
    advisories = {}
    if cfg.advisories is not None:
        try:
            advisories = load_advisories(cfg.advisories)
        except (OSError, ValueError) as exc:
            raise UsageError(f"bad advisories file: {exc}") from None

    rec_dir = out / "recommendations"
    index = []
    failed = 0
    for g in groups:
        if g.classification != GroupClass.COMPARABLE:
            continue
        for rec in plan_updates(g, registry, reader, advisories):
            base = rec_dir / rec.group_id / rec.repo
            patch_rel = None
            if rec.patch:
                patch_path = base / f"{rec.path}.patch"
                patch_path.parent.mkdir(parents=True, exist_ok=True)
                patch_path.write_text(rec.patch, encoding="utf-8")
                patch_rel = patch_path.relative_to(out).as_posix()
            msg_path = base / "message.md"
            msg_path.parent.mkdir(parents=True, exist_ok=True)
            msg_path.write_text(rec.message, encoding="utf-8")
            index.append(recommendation_index_entry(rec, patch_rel, msg_path.relative_to(out).as_posix()))
            if rec.error:
                failed += 1
                print(f"warning: {rec.repo}:{rec.path}: {rec.error}", file=sys.stderr)
    counts = {s: sum(1 for e in index if e["status"] == s) for s in ("ready", "held", "unverifiable", "error")}
    write_json(out / RECOMMENDATIONS, {"schema": "pinmeta.recommendations/1", "counts": counts, "recommendations": index})
    print(f"{len(index)} recommendations: " + ", ".join(f"{v} {k}" for k, v in counts.items()))
    return EXIT_PARTIAL if failed else EXIT_OK


# -- report -----------------------------------------------------------------


def cmd_report(cfg: RunConfig) -> int:
    from .report import write_report

    out = cfg.output_dir
    write_report(
        out / "report",
        domains=read_json(out / DOMAINS),
        classification=read_json(out / CLASSIFICATION),
        groups=read_json(out / GROUPS),
        recommendations=read_json(out / RECOMMENDATIONS) if (out / RECOMMENDATIONS).exists() else None,
    )
    print(f"report written to {out / 'report'}")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    worst = EXIT_OK
    for step in (cmd_scan, cmd_classify, cmd_groups, cmd_recommend, cmd_report):
        worst = max(worst, step(cfg))
    return worst


COMMANDS = {
    "scan": cmd_scan,
    "classify": cmd_classify,
    "groups": cmd_groups,
    "recommend": cmd_recommend,
    "report": cmd_report,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--corpus", type=Path, help="directory of git repositories, or a history JSON file")
    common.add_argument("--registry-fixture", type=Path, help="offline tag/release JSON")
    common.add_argument("--live", action="store_true", help="query the GitHub API (token from GITHUB_TOKEN)")
    common.add_argument("--cache-dir", type=Path, help="cache for live API responses (or PINMETA_CACHE_DIR)")
    common.add_argument("--cutoff", type=_date, help="dormancy cutoff date YYYY-MM-DD (default: one year ago)")
    common.add_argument("--out", type=Path, default=Path("pinmeta-out"), help="artifact directory")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes for history mining")
    common.add_argument("--lenient-from", action="store_true", help="allow ARG and comments before the first FROM")
    common.add_argument("--keep-unresolved", action="store_true", help="identify packages in partially resolved URLs")
    common.add_argument("--advisories", type=Path, help='JSON {"owner/repo": ["tag", ...]} of flagged releases')
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pinmeta", description="Find and update shared package pins across Dockerfiles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "scan": "extract URLs and package timelines from the corpus",
        "classify": "classify Dockerfiles and repositories by update status",
        "groups": "group repositories sharing a package set and compare versions",
        "recommend": "write patches and messages for lagging group members",
        "report": "render tables and figures from the stage artifacts",
        "run": "all stages in order",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.jobs < 1:
        parser.error("--jobs must be at least 1")
    if args.live and args.registry_fixture:
        parser.error("--live and --registry-fixture are mutually exclusive")
    cfg = RunConfig(
        corpus_dir=args.corpus,
        output_dir=args.out,
        registry_fixture=args.registry_fixture,
        live=args.live,
        cutoff=args.cutoff,
        jobs=args.jobs,
        lenient_from=args.lenient_from,
        keep_unresolved=args.keep_unresolved,
        advisories=args.advisories,
        cache_dir=args.cache_dir,
    )
    try:
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"pinmeta {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
