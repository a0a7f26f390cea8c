"""Store a confirmed diagnosis, then watch the re-run short-circuit.

The first diagnosis of an incident walks the search tree normally. Its report
is folded into a case record (root cause, fault type, anomaly fingerprint,
explored services) and added to the knowledge base. When the same incident
recurs, the very first simulation finds the stored case, confirms the match
against the mined evidence, and stops after one iteration with the remembered
solution attached.

Run: python3 demos/knowledge_replay.py
"""

import tempfile

from faultminer.knowledge import KnowledgeBase
from faultminer.pipeline import case_from_report
from faultminer.simharness import (
    baseline_single_shot,
    generate_scenario,
    generate_topology,
    run_scenario,
)


def main():
    workdir = tempfile.mkdtemp(prefix="rca-demo-")
    names, edges = generate_topology(8, seed=5)
    target = sorted({v for _, v in edges})[0]
    scenario = generate_scenario(workdir, "demo-mem", names, edges,
                                 "MEMORY", target, seed=123)
    print(f"topology: {len(names)} services, fault at {target}")

    first = run_scenario(scenario)
    report = first.report
    print(f"\nfirst run: root cause {report.root_cause_service}, "
          f"{report.stats['iterations_used']} iterations, "
          f"{report.stats['services_mined']} services mined")

    kb = KnowledgeBase()
    case = case_from_report(report, kb.next_case_id(),
                            solution="raise the pod memory limit")
    kb.add_case(case)
    print(f"stored {case.case_id}: {case.root_cause_service} / {case.fault_type}")

    second = run_scenario(scenario, kb=kb)
    replay = second.report
    print(f"\nsecond run: root cause {replay.root_cause_service}, "
          f"{replay.stats['iterations_used']} iteration(s)")
    print(f"matched case: {replay.kb_case.case_id}, "
          f"suggested solution: {replay.kb_case.solution}")

    # for contrast, hand the whole incident to one prompt
    baseline = baseline_single_shot(scenario)
    print(f"\nprompt sizes: search {report.stats['max_oracle_input_chars']} chars "
          f"per call vs single-shot {baseline.max_input_chars} chars")


if __name__ == "__main__":
    main()
