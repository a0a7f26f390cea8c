"""Walk through the log route: template extraction, then keyword triage.

Raw lines are grouped into templates with variable fields masked to <*>, the
templates carrying alert keywords are pulled forward, and one pod's retained
templates are folded into findings plus a human-readable summary. When the
keyword pass retains more templates than the budget allows, a second stage
(clustering or known-pattern matching) trims the list; here the budget is
generous so the keyword pass is final.

Run: python3 demos/mine_log_templates.py
"""

import random

from faultminer.config import LogMiningConfig
from faultminer.logmining import drain_parse, keyword_filter, summarize_log_evidence
from faultminer.telemetry import LogRecord


def build_logs(rng):
    records = []
    ts = 0.0
    for i in range(40):
        ts += rng.uniform(1.0, 5.0)
        records.append(LogRecord(ts, "orders", "orders-1",
                                 f"user {rng.randint(100, 999)} fetched cart {i}"))
        records.append(LogRecord(ts + 0.5, "orders", "orders-1",
                                 f"session {rng.randint(1000, 9999)} refreshed ok"))
    # the incident: repeated write failures against one volume
    for i in range(6):
        records.append(LogRecord(300.0 + i * 2.0, "orders", "orders-0",
                                 f"error: disk write failed on volume vol{i % 2}"))
    for i in range(3):
        records.append(LogRecord(310.0 + i * 4.0, "orders", "orders-0",
                                 f"timeout waiting for replica {i}"))
    return sorted(records, key=lambda r: r.timestamp)


def main():
    rng = random.Random(7)
    config = LogMiningConfig()
    logs = build_logs(rng)

    parsed = drain_parse(logs, config)
    print(f"{len(logs)} raw lines -> {len(parsed.templates)} templates")
    for t in sorted(parsed.templates, key=lambda t: -t.count):
        print(f"  [{t.template_id}] x{t.count}  {t.text()}")

    priority, normal = keyword_filter(parsed.templates, config.keywords)
    print(f"\nkeyword pass kept {len(priority)} of {len(parsed.templates)} "
          f"(budget {config.template_budget}, no second stage needed)")
    for t in priority:
        print(f"  kept [{t.template_id}] {t.text()}")

    evidence = summarize_log_evidence("orders", "orders-0", priority, logs,
                                      parsed.assignment, config)
    print(f"\nfindings for pod orders-0:")
    for f in evidence.findings:
        print(f"  {f.kind.value:<9} {f.severity.value:<8} x{int(f.value)} "
              f"template={f.subject}")
    print(f"summary: {evidence.summary}")


if __name__ == "__main__":
    main()
