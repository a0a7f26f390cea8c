"""End-to-end diagnosis of one simulated incident.

A six-service call chain is generated with a CPU fault injected at the tail.
Every upstream service echoes errors, so the alarm scan lights up the whole
chain. The search walks the fault mining tree from the virtual root, mining
one service per iteration, and settles on the service whose own evidence plus
caller symptoms score highest.

Run: python3 demos/diagnose_simulated_fault.py
"""

import tempfile

from faultminer.cli import render_report_markdown
from faultminer.simharness import generate_scenario, generate_topology, run_scenario


def main():
    workdir = tempfile.mkdtemp(prefix="rca-demo-")
    names, edges = generate_topology(6, kind="chain")
    scenario = generate_scenario(workdir, "demo-cpu", names, edges,
                                 "CPU", names[-1], seed=99, propagation="flat")
    print(f"scenario written under {scenario.directory}")
    print(f"chain: {' -> '.join(names)}, fault injected at {names[-1]}")

    result = run_scenario(scenario)
    report = result.report
    print(f"\nalarmed services: {sorted(report.alarms)}")
    print(f"root cause: {report.root_cause_service}")
    print(f"fault path: {' -> '.join(report.fault_path)}")
    gran = report.granularity
    where = gran.level + (f" ({gran.pod})" if gran.pod else "")
    print(f"granularity: {where}")
    print("fault types:")
    for entry in report.fault_types:
        print(f"  {entry.label}: {entry.count} findings")
    print(f"iterations: {report.stats['iterations_used']}, "
          f"services mined: {report.stats['services_mined']}, "
          f"largest prompt: {report.stats['max_oracle_input_chars']} chars")

    print("\nfirst search iterations:")
    for entry in report.trace[:4]:
        scores = f" child_scores={entry.child_scores}" if entry.child_scores else ""
        print(f"  #{entry.iteration} simulated {entry.simulated} "
              f"reward={entry.reward:.1f}{scores}")

    print("\n" + render_report_markdown(report))


if __name__ == "__main__":
    main()
