import json

from faultminer.cli import EXIT_ERROR, EXIT_NO_ALARM, EXIT_OK, main
from faultminer.knowledge import KnowledgeBase
from faultminer.simharness import chain_suite, generate_scenario, generate_topology


def _quiet_scenario(tmp_path):
    """A scenario whose window holds no fault at all."""
    names, edges = generate_topology(3, kind="chain")
    scenario = generate_scenario(tmp_path / "calm", "calm", names, edges,
                                 "CPU", target=names[-1], seed=4)
    manifest_path = scenario.directory / "manifest.json"
    data = json.loads(manifest_path.read_text())
    # move the diagnosis window onto the pre-fault half of the timeline
    length = data["window"]["end"] - data["window"]["start"]
    data["window"]["end"] = data["window"]["start"]
    data["window"]["start"] -= length
    manifest_path.write_text(json.dumps(data))
    return scenario.directory


def test_diagnose_scenario_writes_reports(tmp_path, capsys):
    scenario = chain_suite(tmp_path / "suite", length=3, count=1, seed=31)[0]
    out = tmp_path / "out"
    code = main(["diagnose", "--scenario", str(scenario.directory),
                 "--out", str(out)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert f"root cause: {scenario.manifest.target}" in captured.out
    assert "fault type:" in captured.out

    report = json.loads((out / "report.json").read_text())
    assert report["root_cause_service"] == scenario.manifest.target
    assert report["schema_version"] == 1
    markdown = (out / "report.md").read_text()
    assert markdown.startswith("# Diagnosis report")
    assert scenario.manifest.target in markdown
    assert "## Search trace" in markdown


def test_diagnose_explicit_paths(tmp_path, capsys):
    scenario = chain_suite(tmp_path / "suite", length=3, count=1, seed=37)[0]
    m = scenario.manifest
    code = main([
        "diagnose",
        "--metrics", str(scenario.metrics_path),
        "--logs", str(scenario.logs_path),
        "--spans", str(scenario.spans_path),
        "--topology", str(scenario.topology_path),
        "--window-start", str(m.window_start),
        "--window-end", str(m.window_end),
        "--out", str(tmp_path / "out"),
    ])
    assert code == EXIT_OK
    assert f"root cause: {m.target}" in capsys.readouterr().out


def test_diagnose_requires_paths_without_scenario(tmp_path, capsys):
    code = main(["diagnose", "--metrics", "x.csv"])
    captured = capsys.readouterr()
    assert code == EXIT_ERROR
    assert "--logs" in captured.err and "--window-start" in captured.err


def test_diagnose_exits_two_without_alarms(tmp_path, capsys):
    directory = _quiet_scenario(tmp_path)
    code = main(["diagnose", "--scenario", str(directory),
                 "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == EXIT_NO_ALARM
    assert "no alarms; RCA not started" in captured.out
    assert not (tmp_path / "out" / "report.json").exists()


def test_diagnose_surfaces_loader_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("wrong,header\n")
    code = main(["diagnose", "--metrics", str(bad), "--logs", str(bad),
                 "--spans", str(bad), "--window-start", "0",
                 "--window-end", "60"])
    captured = capsys.readouterr()
    assert code == EXIT_ERROR
    assert captured.err.startswith("error:")


def test_simulate_then_evaluate(tmp_path, capsys):
    scenarios = tmp_path / "scenarios"
    code = main(["simulate", "--out", str(scenarios), "--suite", "chains",
                 "--lengths", "3", "--per-length", "1", "--seed", "41"])
    assert code == EXIT_OK
    assert "wrote 1 scenario(s)" in capsys.readouterr().out

    metrics_out = tmp_path / "metrics.json"
    code = main(["evaluate", "--scenarios", str(scenarios),
                 "--baseline", "--out", str(metrics_out)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "FL@1: 1.000" in captured.out
    assert "baseline FL@1:" in captured.out
    payload = json.loads(metrics_out.read_text())
    assert payload["count"] == 1
    assert payload["fl_at_1"] == 1.0
    assert "baseline" in payload


def test_evaluate_errors_on_empty_directory(tmp_path, capsys):
    code = main(["evaluate", "--scenarios", str(tmp_path)])
    assert code == EXIT_ERROR
    assert "no scenario manifests" in capsys.readouterr().err


def test_kb_add_case_and_list(tmp_path, capsys):
    scenario = chain_suite(tmp_path / "suite", length=3, count=1, seed=43)[0]
    out = tmp_path / "out"
    assert main(["diagnose", "--scenario", str(scenario.directory),
                 "--out", str(out)]) == EXIT_OK
    capsys.readouterr()

    kb_path = tmp_path / "kb.json"
    code = main(["kb", "add-case", "--kb", str(kb_path),
                 "--report", str(out / "report.json"),
                 "--solution", "scale up the pod"])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "stored case-0001" in captured.out

    kb = KnowledgeBase.load(kb_path)
    assert len(kb.cases) == 1
    assert kb.cases[0].solution == "scale up the pod"
    assert kb.cases[0].root_cause_service == scenario.manifest.target

    code = main(["kb", "list", "--kb", str(kb_path)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "case-0001" in captured.out
    assert f"root={scenario.manifest.target}" in captured.out

    # duplicate ids are rejected through the CLI as well
    code = main(["kb", "add-case", "--kb", str(kb_path),
                 "--report", str(out / "report.json"),
                 "--case-id", "case-0001"])
    assert code == EXIT_ERROR
    assert "duplicate case id" in capsys.readouterr().err


def test_kb_list_empty(tmp_path, capsys):
    kb_path = tmp_path / "kb.json"
    KnowledgeBase().save(kb_path)
    assert main(["kb", "list", "--kb", str(kb_path)]) == EXIT_OK
    assert "no cases" in capsys.readouterr().out


def test_diagnose_with_kb_match_prints_case(tmp_path, capsys):
    scenario = chain_suite(tmp_path / "suite", length=3, count=1, seed=47)[0]
    out = tmp_path / "out"
    assert main(["diagnose", "--scenario", str(scenario.directory),
                 "--out", str(out)]) == EXIT_OK
    kb_path = tmp_path / "kb.json"
    assert main(["kb", "add-case", "--kb", str(kb_path),
                 "--report", str(out / "report.json"),
                 "--solution", "restart"]) == EXIT_OK
    capsys.readouterr()

    code = main(["diagnose", "--scenario", str(scenario.directory),
                 "--out", str(tmp_path / "out2"), "--kb", str(kb_path)])
    captured = capsys.readouterr()
    assert code == EXIT_OK
    assert "matched case: case-0001" in captured.out
    markdown = (tmp_path / "out2" / "report.md").read_text()
    assert "Matched stored case: case-0001" in markdown
    assert "Suggested solution: restart" in markdown
