import json

import pytest

from rwre.campaign import report, run_campaign
from rwre.cli import main
from rwre.config import parse_text
from rwre.errors import EmptyLedger

CAMPAIGN = """\
seed: 7
laws:
  biased: {family: fixed, kernel: [0.6, 0.4]}
  srw: {family: srw, d: 1}
experiments:
  - id: back
    kind: tgamma
    law: biased
    samples: 2000
    grid: {L_grid: [[1, 2], [3]]}
  - id: ruin
    kind: exit-compare
    law: srw
    samples: 2000
    params: {box: [[1], [4]], start: [2], tol: 0.05}
"""


def _run(tmp_path, name, workers=1):
    return run_campaign(parse_text(CAMPAIGN), workers=workers, out_dir=tmp_path / name, echo=None)


def test_outputs_and_ledger(tmp_path):
    res = _run(tmp_path, "a")
    out = tmp_path / "a"
    assert sorted(p.name for p in out.glob("back.*")) == ["back.csv", "back.json"]
    doc = json.loads((out / "back.json").read_text())
    assert len(doc["cells"]) == 2
    assert (out / "back.csv").read_bytes().startswith(b"cell,L_grid,")
    assert len(list((out / "ledger").glob("*.json"))) == 2
    assert res.ok


def test_rerun_and_worker_count_are_bit_identical(tmp_path):
    a = _run(tmp_path, "a")
    b = _run(tmp_path, "b")
    c = _run(tmp_path, "c", workers=2)
    assert a.output_hashes() == b.output_hashes() == c.output_hashes()


def test_report_groups_kinds(tmp_path):
    _run(tmp_path, "a")
    rep = report(tmp_path / "a", tmp_path / "rep")
    assert set(rep.tables) == {"tgamma", "exit-compare"}
    assert not rep.partial
    assert (tmp_path / "rep" / "report-tgamma.csv").exists()


def test_report_skips_corrupted_entry(tmp_path):
    _run(tmp_path, "a")
    (tmp_path / "a" / "back.csv").write_text("tampered")
    warnings = []
    rep = report(tmp_path / "a", warn=warnings.append)
    assert rep.partial and warnings
    assert "back" not in rep.summaries.get("tgamma", {})
    assert main(["report", str(tmp_path / "a")]) == 1


def test_empty_ledger(tmp_path):
    with pytest.raises(EmptyLedger):
        report(tmp_path)


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(CAMPAIGN.replace("kind: tgamma", "kind: tgamma\n    oops: 1"))
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2
    good = tmp_path / "good.yaml"
    good.write_text(CAMPAIGN)
    assert main(["run", str(good), "--out", str(tmp_path / "g")]) == 0
    assert main(["tgamma", "--law", "{family: fixed, kernel: [0.6, 0.4]}", "-n", "500",
                 "--grid", "L_grid=[[2],[3]]", "--out", str(tmp_path / "k")]) == 0
    assert (tmp_path / "k" / "tgamma.csv").exists()
    assert main(["tgamma", "-p", "nonsense", "--out", str(tmp_path / "k")]) == 2
