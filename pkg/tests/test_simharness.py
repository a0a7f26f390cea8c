import json

import pytest

from faultminer.simharness import (
    FAULT_LABELS,
    FAULT_MINUTES,
    FAULT_TYPES,
    Scenario,
    ScenarioManifest,
    baseline_single_shot,
    chain_suite,
    default_suite,
    evaluate,
    generate_scenario,
    generate_topology,
    quiet_root_suite,
    run_scenario,
    service_name,
)
from faultminer.telemetry import (
    load_logs,
    load_metrics,
    load_spans,
    load_topology,
    pod_service,
)


def test_service_names_are_letter_only_and_unique():
    names = [service_name(i) for i in range(60)]
    assert len(set(names)) == 60
    assert names[0] == "svc-aa" and names[25] == "svc-az" and names[26] == "svc-ba"
    for name in names:
        assert name.startswith("svc-") and name[4:].isalpha()
        # replica suffixes must parse back to the bare service name
        assert pod_service(f"{name}-2") == name
    with pytest.raises(ValueError):
        service_name(26 * 26)


def test_topology_chain_and_dag_shapes():
    names, edges = generate_topology(5, kind="chain")
    assert edges == [(names[i], names[i + 1]) for i in range(4)]

    names, edges = generate_topology(10, seed=3)
    callees = {v for _, v in edges}
    callers = {u for u, _ in edges}
    assert set(names) == callees | callers
    # layered construction is acyclic: no service calls back up
    order = {n: i for i, n in enumerate(names)}
    seen = set()
    for u, v in edges:
        assert u != v
        seen.add((u, v))
        assert (v, u) not in seen
    with pytest.raises(ValueError):
        generate_topology(1)
    with pytest.raises(ValueError):
        generate_topology(4, kind="mesh")


def test_generated_files_parse_with_the_loaders(tmp_path):
    names, edges = generate_topology(4, seed=1, kind="chain")
    scenario = generate_scenario(tmp_path, "s1", names, edges, "CPU",
                                 target=names[-1], seed=5)
    m = scenario.manifest
    window = m.window()
    assert m.fault_type == "CPU" and m.label == FAULT_LABELS["CPU"]
    assert list(m.fault_minutes) == list(FAULT_MINUTES)

    full = type(window)(window.preceding().start, window.end)
    metrics = load_metrics(scenario.metrics_path, full)
    logs = load_logs(scenario.logs_path, full)
    spans = load_spans(scenario.spans_path, full)
    topo = load_topology(scenario.topology_path)
    assert metrics.dropped_rows == 0 and logs.dropped_rows == 0
    assert spans.dropped_rows == 0
    assert set(topo.edges) == set(edges)
    assert {s.service for s in metrics.series} == set(names)
    # five metrics per pod, three pods per service
    per_target = [s for s in metrics.series if s.service == m.target]
    assert len(per_target) == 15

    again = Scenario.load(scenario.directory)
    assert again.manifest == m


def test_generation_is_deterministic(tmp_path):
    names, edges = generate_topology(5, seed=2)
    a = generate_scenario(tmp_path / "a", "s", names, edges, "MEMORY",
                          target=names[-1], seed=9)
    b = generate_scenario(tmp_path / "b", "s", names, edges, "MEMORY",
                          target=names[-1], seed=9)
    for attr in ("metrics_path", "logs_path", "spans_path", "topology_path"):
        assert getattr(a, attr).read_bytes() == getattr(b, attr).read_bytes()


def test_manifest_round_trip():
    manifest = ScenarioManifest(
        name="x", services=["svc-aa"], fault_type="CPU",
        label=FAULT_LABELS["CPU"], target="svc-aa", target_pod="svc-aa-0",
        window_start=0.0, window_end=600.0, fault_minutes=[1, 2], seed=4,
        alarm_overrides={"metric_bounds": [{"metric": "cpu_usage", "max": 1.0}]})
    assert ScenarioManifest.from_dict(manifest.to_dict()) == manifest


def test_alarm_overrides_reach_detector_config(tmp_path):
    names, edges = generate_topology(3, kind="chain")
    scenario = generate_scenario(
        tmp_path, "s", names, edges, "CPU", target=names[-1], seed=1,
        alarm_overrides={"metric_bounds": [{"metric": "cpu_usage", "max": 60.0}]})
    config = scenario.detector_config()
    assert config.alarms.metric_bounds[0].metric == "cpu_usage"
    assert config.alarms.metric_bounds[0].max == 60.0


@pytest.mark.parametrize("fault_type", FAULT_TYPES)
def test_each_fault_type_is_diagnosed(tmp_path, fault_type):
    names, edges = generate_topology(5, seed=8, kind="chain")
    scenario = generate_scenario(tmp_path, f"s-{fault_type}", names, edges,
                                 fault_type, target=names[-1], seed=3)
    result = run_scenario(scenario)
    assert result.triggered
    assert result.report.root_cause_service == scenario.manifest.target
    assert scenario.manifest.label in [t.label
                                       for t in result.report.fault_types]


def test_suites_have_expected_shape(tmp_path):
    suite = default_suite(tmp_path / "default", count=6, seed=7)
    assert len(suite) == 6
    # round-robin over the six fault types
    assert [s.manifest.fault_type for s in suite] == list(FAULT_TYPES)
    for s in suite:
        # every target has at least one caller
        callers = {v: u for u, v in
                   load_topology(s.topology_path).edges}
        assert s.manifest.target in callers

    chains = chain_suite(tmp_path / "chains", length=4, count=2, seed=11)
    assert len(chains) == 2
    for s in chains:
        assert len(s.manifest.services) == 4
        assert s.manifest.fault_type == "CPU"
        assert s.manifest.target == s.manifest.services[-1]

    quiet = quiet_root_suite(tmp_path / "quiet", count=2, seed=13)
    for s in quiet:
        assert s.manifest.alarm_overrides["metric_bounds"]


def test_evaluate_scores_small_suite(tmp_path):
    suite = chain_suite(tmp_path, length=4, count=2, seed=19)
    result = evaluate(suite)
    assert result.count == 2
    assert result.fl_at_1 == 1.0
    assert result.ft_at(1) == 1.0
    assert result.ft_at(1) <= result.ft_at(2) <= result.ft_at(3)
    assert result.atc_seconds > 0.0
    assert result.mtc_chars > 0
    assert result.mtc_token_estimate == result.mtc_chars // 4
    d = result.to_dict()
    assert d["count"] == 2 and len(d["outcomes"]) == 2
    assert d["outcomes"][0]["correct_service"] is True


def test_baseline_runs_and_reports_cost(tmp_path):
    suite = chain_suite(tmp_path, length=4, count=1, seed=23)
    outcome = baseline_single_shot(suite[0])
    assert outcome.triggered
    assert outcome.predicted_service in suite[0].manifest.services
    assert outcome.max_input_chars > 0
