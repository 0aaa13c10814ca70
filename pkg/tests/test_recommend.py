from __future__ import annotations

import json
import shutil
import subprocess
from datetime import datetime, timezone

import pytest

from conftest import ADVISORIES_FIXTURE, FIXTURES, REGISTRY_FIXTURE
from pinmeta.history import RepoStatus
from pinmeta.metamaint import ContractViolation, GroupClass, GroupMember, PackageSet, RepoGroup, VersionCombination
from pinmeta.pkgid import PackageIdentity
from pinmeta.recommend import (
    AmbiguousEdit,
    Change,
    Recommendation,
    TagChange,
    UnlocatableTag,
    load_advisories,
    numeric_core,
    package_tags,
    plan_updates,
    render_message,
    rewrite_dockerfile,
    unified_diff,
)
from pinmeta.registry import load_fixture, snapshot_from_json

SAM = PackageIdentity("samtools", "samtools")
HTS = PackageIdentity("samtools", "htslib")
PG = PackageIdentity("postgres", "postgres")
SAM_URL = "https://github.com/samtools/samtools/releases/download/{0}/samtools-{0}.tar.bz2"
HTS_URL = "https://github.com/samtools/htslib/releases/download/{0}/htslib-{0}.tar.bz2"


def changed_lines(old: str, new: str) -> list[int]:
    a, b = old.splitlines(), new.splitlines()
    assert len(a) == len(b)
    return [i + 1 for i, (x, y) in enumerate(zip(a, b)) if x != y]


def test_env_definition_is_edited_not_the_url():
    text = "FROM debian\nENV PG_VERSION=9.3.4\nRUN curl -SL https://github.com/postgres/postgres/archive/$PG_VERSION.tar.gz | tar -xz\n"
    res = rewrite_dockerfile(text, [TagChange(PG, "9.3.4", "9.3.5")])
    assert res.text == text.replace("PG_VERSION=9.3.4", "PG_VERSION=9.3.5")
    assert changed_lines(text, res.text) == [2]
    assert [s.start_line for s in res.sites[PG]] == [2]


def test_literal_release_url_updates_asset_name():
    text = f"FROM a\nRUN wget {SAM_URL.format('1.9')}\n"
    res = rewrite_dockerfile(text, [TagChange(SAM, "1.9", "1.10")])
    assert res.text == f"FROM a\nRUN wget {SAM_URL.format('1.10')}\n"
    assert package_tags(res.text, "Dockerfile") == {SAM: {"1.10"}}


def test_asset_with_prefixed_tag_uses_numeric_core():
    url = "https://github.com/strukturag/libde265/releases/download/v1.0.7/libde265-1.0.7.tar.gz"
    res = rewrite_dockerfile(f"FROM a\nRUN wget {url}\n", [TagChange(PackageIdentity("strukturag", "libde265"), "v1.0.7", "v1.0.8")])
    assert "download/v1.0.8/libde265-1.0.8.tar.gz" in res.text


def test_unrelated_occurrence_is_preserved():
    text = f"FROM a\nLABEL note=\"built against lib1.9x and 1.9\"\nRUN wget {SAM_URL.format('1.9')} && echo 1.9\n"
    res = rewrite_dockerfile(text, [TagChange(SAM, "1.9", "1.12")])
    assert res.text == text.replace(SAM_URL.format("1.9"), SAM_URL.format("1.12"))


def test_shared_variable_feeding_an_unchanged_url_is_ambiguous():
    text = f"FROM a\nENV V=1.9\nRUN wget {SAM_URL.format('$V')} {HTS_URL.format('$V')}\n"
    with pytest.raises(AmbiguousEdit):
        rewrite_dockerfile(text, [TagChange(SAM, "1.9", "1.10")])
    both = rewrite_dockerfile(text, [TagChange(SAM, "1.9", "1.10"), TagChange(HTS, "1.9", "1.10")])
    assert changed_lines(text, both.text) == [2]


def test_missing_tag_is_unlocatable():
    with pytest.raises(UnlocatableTag):
        rewrite_dockerfile(f"FROM a\nRUN wget {SAM_URL.format('1.9')}\n", [TagChange(SAM, "1.8", "1.10")])


def test_numeric_core():
    assert numeric_core("v1.2.3") == "1.2.3"
    assert numeric_core("libssh2-1.9.0") == "1.9.0"
    assert numeric_core("OTP-24.0") == "24.0"
    assert numeric_core("latest") == ""


def test_unified_diff_handles_missing_final_newline(tmp_path):
    old, new = "FROM a\nENV V=1", "FROM a\nENV V=2"
    (tmp_path / "Dockerfile").write_text(old)
    (tmp_path / "p.diff").write_text(unified_diff(old, new, "Dockerfile"))
    subprocess.run(["patch", "-p1", "-s", "-i", "p.diff"], cwd=tmp_path, check=True)
    assert (tmp_path / "Dockerfile").read_text() == new


# -- messages ----------------------------------------------------------------


def rec(changes: list[tuple[PackageIdentity, str, str]], **kw) -> Recommendation:
    return Recommendation("g", "r", "Dockerfile", "c", [Change(*c) for c in changes], ["up1", "up2"], verified=True, **kw)


def test_message_names_every_change_and_the_evidence():
    msg = render_message(rec([(SAM, "1.9", "1.12"), (HTS, "1.9", "1.12")]))
    assert msg.startswith(
        "In this pull request, I am updating samtools/samtools from 1.9 to 1.12 and samtools/htslib from 1.9 to 1.12. "
        "Since these updates are being done in up1 and up2, I'm wondering if this project can update the packages as well."
    )
    assert "| samtools/htslib | 1.9 | 1.12 |" in msg
    assert "CAUTION" not in msg


def test_single_change_message_is_singular():
    msg = render_message(rec([(SAM, "1.9", "1.12")]))
    assert "Since this update is being done in" in msg
    assert "update the package as well" in msg


def test_held_message_has_caution_block():
    msg = render_message(rec([(SAM, "1.9", "1.12")], held=True, held_tags=["samtools/samtools@1.12"]))
    assert "> [!CAUTION]" in msg
    assert "samtools/samtools@1.12 is flagged" in msg


def test_advisories_file():
    adv = load_advisories(ADVISORIES_FIXTURE)
    assert adv == {PackageIdentity("just-containers", "s6-overlay"): frozenset({"v2.2.0.3"})}


# -- planning ----------------------------------------------------------------

REG = load_fixture(REGISTRY_FIXTURE)
PAIR = PackageSet((SAM, HTS))
T0 = datetime(2021, 1, 1, tzinfo=timezone.utc)


def member(repo: str, status: RepoStatus, sam: str, hts: str) -> GroupMember:
    combo = VersionCombination.from_tags(PAIR, {SAM: sam, HTS: hts}, REG, (repo, "Dockerfile", "c"))
    return GroupMember(repo, status, combo, "Dockerfile", "c", T0)


def dockerfile(sam: str, hts: str) -> str:
    return f"FROM a\nENV S={sam} H={hts}\nRUN wget {SAM_URL.format('$S')} {HTS_URL.format('$H')}\n"


def test_chain_of_two_gives_one_recommendation():
    g = RepoGroup(PAIR, [member("old", RepoStatus.NO_UPDATE, "1.9", "1.9"), member("new", RepoStatus.WITH_UPDATE, "1.10", "1.10")], GroupClass.COMPARABLE)
    (r,) = plan_updates(g, REG, lambda repo, path, commit: dockerfile("1.9", "1.9"))
    assert r.target == ("old", "Dockerfile")
    assert r.evidence == ["new"]
    assert r.status == "ready"
    assert r.rewritten_text == dockerfile("1.10", "1.10")
    assert all(c.edit_sites for c in r.changes)


def test_missing_source_is_an_error_recommendation():
    g = RepoGroup(PAIR, [member("old", RepoStatus.NO_UPDATE, "1.9", "1.9"), member("new", RepoStatus.WITH_UPDATE, "1.10", "1.10")], GroupClass.COMPARABLE)
    (r,) = plan_updates(g, REG, lambda *a: None)
    assert r.status == "error"


def test_target_missing_from_registry_is_unverifiable():
    g = RepoGroup(PAIR, [member("old", RepoStatus.NO_UPDATE, "1.9", "1.9"), member("new", RepoStatus.WITH_UPDATE, "1.10", "1.10")], GroupClass.COMPARABLE)
    data = REG.to_json()
    data["samtools/htslib"]["release_asset_urls"] = []
    (r,) = plan_updates(g, snapshot_from_json(data), lambda *a: dockerfile("1.9", "1.9"))
    assert r.status == "unverifiable"
    assert "could not all be confirmed" in r.message


def test_equal_members_violate_contract():
    g = RepoGroup(PAIR, [member("a", RepoStatus.WITH_UPDATE, "1.9", "1.9"), member("b", RepoStatus.NO_UPDATE, "1.9", "1.9")], GroupClass.COMPARABLE)
    with pytest.raises(ContractViolation):
        plan_updates(g, REG, lambda *a: "")


def test_non_comparable_group_violates_contract():
    g = RepoGroup(PAIR, [member("a", RepoStatus.WITH_UPDATE, "1.9", "1.10"), member("b", RepoStatus.NO_UPDATE, "1.10", "1.9")], GroupClass.INCOMPARABLE)
    with pytest.raises(ContractViolation):
        plan_updates(g, REG, lambda *a: "")


# -- synthetic corpus round trip ---------------------------------------------


def _index(pipeline_out) -> dict[str, dict]:
    data = json.loads((pipeline_out / "recommendations.json").read_text())
    return {r["repo"]: r for r in data["recommendations"]}


def test_recommendations_match_ground_truth(pipeline_out, ground_truth):
    got = {
        repo: {
            "status": r["status"],
            "changes": {c["package"]: [c["from"], c["to"]] for c in r["changes"]},
            "edit_lines": sorted({n for c in r["changes"] for n in c["edit_lines"]}),
        }
        for repo, r in _index(pipeline_out).items()
    }
    assert got == ground_truth["recommendations"]


@pytest.mark.skipif(shutil.which("patch") is None, reason="patch tool not found")
@pytest.mark.parametrize("repo", ["alpha-bio", "beta-seq", "delta-tools", "mu-media"])
def test_patches_apply_and_match_post_images(repo, corpus_dir, pipeline_out, ground_truth, tmp_path):
    r = _index(pipeline_out)[repo]
    original = subprocess.run(
        ["git", "-C", str(corpus_dir / repo), "show", f"{r['commit']}:{r['path']}"], capture_output=True, text=True, check=True
    ).stdout
    (tmp_path / r["path"]).write_text(original)
    subprocess.run(["patch", "-p1", "-s", "-i", str(pipeline_out / r["patch"])], cwd=tmp_path, check=True)
    patched = (tmp_path / r["path"]).read_text()
    assert patched == (FIXTURES / "postimages" / repo / r["path"]).read_text()
    assert changed_lines(original, patched) == ground_truth["recommendations"][repo]["edit_lines"]
    target = {PackageIdentity.parse(c["package"]): {c["to"]} for c in r["changes"]}
    pinned = package_tags(patched, r["path"], REG)
    assert {k: pinned.get(k) for k in target} == target
