import itertools
import json
import logging

import pytest

from pidtwin.errors import InputError, PipelineError, UnreadableFile
from pidtwin.pipeline import PipelineConfig, evaluate_dirs, run_eval, run_extract
from pidtwin.synthetic import Connection, LayoutSpec, SymbolSpec, generate_synthetic_plan, write_fixture
from pidtwin.twinexport import read_topology
from tests.helpers import write_topology

OUTPUTS = ["crossings.json", "graph.ttl", "labels.csv", "segments.json", "symbols.json", "topology.json"]


def extract_sample(sample_files, cfg, out, **kw):
    return run_extract(sample_files["plan"], cfg, out, annotations=sample_files["annotations"], **kw)


def test_extract_sample_with_annotations(sample_files, cfg, tmp_path):
    out = tmp_path / "out"
    manifest = extract_sample(sample_files, cfg, out)
    assert sorted(manifest.outputs) == OUTPUTS
    assert (out / "manifest.json").exists()
    topo = read_topology(out / "topology.json")
    assert topo.edges == read_topology(sample_files["truth"]).edges
    assert topo.plan == "sample" and topo.plan_meta["config_hash"] == PipelineConfig.from_config(cfg).digest
    ttl = (out / "graph.ttl").read_text(encoding="utf-8")
    assert "brick:Pump" in ttl and "brick:Valve" in ttl and "brick:Damper" in ttl
    assert (out / "labels.csv").read_text(encoding="utf-8").splitlines()[1] == "Flap-3,B1_H_DA_3,Flap"
    assert manifest.counts == {"tiles": 1, "symbols": 4, "segments": 3, "crossings": 1, "connective_crossings": 1,
                               "edges": 4}


def test_minimal_two_symbol_plan(cfg, tmp_path):
    layout = LayoutSpec(
        width=200, height=100, name="pair",
        symbols=(SymbolSpec("Pump-1", "Pump", (40, 50)), SymbolSpec("Valve-2", "Valve", (160, 50))),
        runs=(((40, 50), (160, 50)),),
        connections=(Connection("Pump-1", "Valve-2"),),
    )
    files = write_fixture(generate_synthetic_plan(layout), tmp_path / "fixtures")
    manifest = run_extract(files["plan"], cfg, tmp_path / "out", annotations=files["annotations"])
    assert read_topology(tmp_path / "out" / "topology.json").edges == (("Pump-1", "Valve-2"),)
    assert manifest.counts["edges"] == 1


def test_stage_dumps_can_be_disabled(sample_files, cfg, tmp_path):
    cfg["debug"]["dump_stages"] = False
    manifest = extract_sample(sample_files, cfg, tmp_path / "out")
    assert "segments.json" not in manifest.outputs
    assert not (tmp_path / "out" / "crossings.json").exists()


def test_stage_timings_add_up(sample_files, cfg, tmp_path):
    manifest = extract_sample(sample_files, cfg, tmp_path / "out")
    assert list(manifest.stage_timings_s) == ["load", "symbols", "lines", "crossings", "connections", "export"]
    assert sum(manifest.stage_timings_s.values()) == pytest.approx(manifest.total_s, abs=1e-4)
    saved = json.loads((tmp_path / "out" / "manifest.json").read_text(encoding="utf-8"))
    assert saved["outputs"] == manifest.outputs


def test_identical_runs_identical_bytes(sample_files, cfg, tmp_path):
    cfg["tiling"].update(tile_size=200, overlap=50)
    runs = [
        run_extract(sample_files["plan"], cfg, tmp_path / f"out{workers}", detector_mode="templates", workers=workers)
        for workers in (1, 4, 4)
    ]
    assert runs[0].counts["tiles"] > 1
    assert runs[0].outputs == runs[1].outputs == runs[2].outputs
    for name in OUTPUTS:
        assert (tmp_path / "out1" / name).read_bytes() == (tmp_path / "out4" / name).read_bytes()


def test_configured_workers_leave_outputs_unchanged(sample_files, cfg, tmp_path):
    serial = extract_sample(sample_files, cfg, tmp_path / "serial")
    cfg["runtime"]["workers"] = 4
    parallel = extract_sample(sample_files, cfg, tmp_path / "parallel")
    assert serial.config_hash == parallel.config_hash
    assert serial.outputs == parallel.outputs
    assert (tmp_path / "serial" / "topology.json").read_bytes() == (tmp_path / "parallel" / "topology.json").read_bytes()


def test_extract_input_errors(sample_files, cfg, tmp_path):
    with pytest.raises(UnreadableFile, match="--annotations"):
        run_extract(sample_files["plan"], cfg, tmp_path / "out")
    with pytest.raises(PipelineError):
        run_extract(sample_files["plan"], cfg, tmp_path / "out", detector_mode="cnn")
    with pytest.raises(UnreadableFile):
        run_extract(tmp_path / "nope.png", cfg, tmp_path / "out", annotations=sample_files["annotations"])


def test_eval_extracted_topology_against_truth(sample_files, cfg, tmp_path):
    extract_sample(sample_files, cfg, tmp_path / "out")
    pred = tmp_path / "pred"
    pred.mkdir()
    (pred / "sample.json").write_bytes((tmp_path / "out" / "topology.json").read_bytes())
    result = evaluate_dirs(pred, sample_files["truth"].parent, "connections")
    assert (result.report.recall, result.report.precision) == (1.0, 1.0)
    assert result.counts.tn == 2
    assert {k: c.fn for k, c in result.by_path.items()} == {"direct": 0, "junction": 0}


def test_eval_symbols_mode(sample_files, tmp_path):
    annotations = sample_files["annotations"].parent
    report, curve = run_eval(annotations, annotations, "symbols", out_dir=tmp_path / "eval")
    assert report.f1 == 1.0 and curve.ap == 1.0
    saved = json.loads((tmp_path / "eval" / "report.json").read_text(encoding="utf-8"))
    assert saved["per_class_ap"]["Valve"] == 1.0
    assert "HeatExchanger" not in saved["per_class_ap"]


def _four_plan_fixture(tmp_path):
    """566 within-plan pairs over plans of 30, 16, 5 and 2 symbols; counts 116/39/11/400."""
    pred, truth = tmp_path / "pred", tmp_path / "truth"
    sizes = {"plan-a": 30, "plan-b": 16, "plan-c": 5, "plan-d": 2}
    for name, n in sizes.items():
        ids = [f"S{k:02d}" for k in range(1, n + 1)]
        pairs = list(itertools.combinations(ids, 2))
        t_edges = pairs[:155] if name == "plan-a" else []
        p_edges = pairs[:116] + pairs[155:166] if name == "plan-a" else []
        write_topology(truth / f"{name}.json", name, ids, t_edges)
        write_topology(pred / f"{name}.json", name, ids, p_edges)
    return pred, truth


def test_eval_reproduces_reference_counts(tmp_path):
    pred, truth = _four_plan_fixture(tmp_path)
    out = tmp_path / "eval"
    report, curve = run_eval(pred, truth, "connections", out_dir=out)
    assert curve is None
    assert [round(v, 4) for v in (report.recall, report.precision, report.accuracy, report.specificity,
                                  report.npv)] == [0.7484, 0.9134, 0.9117, 0.9732, 0.9112]
    saved = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert saved["counts"] == {"tp": 116, "fp": 11, "fn": 39, "tn": 400}
    assert saved["recall_by_path"] == {"direct": 0.748387}
    assert "(total 566)" in (out / "report.txt").read_text(encoding="utf-8")
    assert (out / "pr_curve.csv").read_text(encoding="utf-8") == "threshold,recall,precision\n"


def test_eval_dir_problems(tmp_path, caplog):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    with caplog.at_level(logging.WARNING, logger="pidtwin.pipeline"):
        result = evaluate_dirs(a, b, "connections")
    assert result.report.recall is None
    assert "no plan to evaluate" in caplog.text
    write_topology(a / "x.json", "x", ["A", "B"], [])
    with pytest.raises(InputError, match="only in predictions"):
        evaluate_dirs(a, b, "connections")
    with pytest.raises(InputError):
        evaluate_dirs(a, b, "pixels")
    with pytest.raises(UnreadableFile):
        evaluate_dirs(tmp_path / "missing", b, "connections")


def test_eval_symbol_sets_must_agree(tmp_path):
    write_topology(tmp_path / "p" / "x.json", "x", ["A", "B"], [("A", "B")])
    write_topology(tmp_path / "t" / "x.json", "x", ["A", "C"], [("A", "C")])
    with pytest.raises(PipelineError, match="symbol sets differ"):
        evaluate_dirs(tmp_path / "p", tmp_path / "t", "connections")
