"""Language-model adapter with a fully deterministic stand-in engine.

Every reasoning exchange is a rendered chat prompt whose answer is read back
from fixed ASCII marker pairs. In deterministic mode a rule engine parses the
machine-readable lines embedded in the prompt and answers in the exact same
marker format, so prompt sizes, transcripts, and parsing behave identically
with or without a live model endpoint.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Sequence

ROOT_SERVICE_MARKERS = ("<root_service_start>", "<root_service_end>")
ROOT_SCORE_MARKERS = ("<root_score_start>", "<root_score_end>")
ROOT_TYPE_MARKERS = ("<root_type_start>", "<root_type_end>")
ROOT_CAUSE_MARKERS = ("<root_cause_start>", "<root_cause_end>")
KB_MATCH_MARKERS = ("<kb_match_start>", "<kb_match_end>")


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise OracleError(f"bad role: {self.role!r}")
        if not self.content:
            raise OracleError("empty message content")


@dataclass
class OracleConfig:
    mode: str = "deterministic"          # "deterministic" | "external"
    endpoint: str | None = None
    model: str | None = None
    timeout: float = 30.0
    max_input_chars: int = 32768
    api_key: str | None = None
    api_key_header: str = "Authorization"
    response_path: str = "choices.0.message.content"
    retries: int = 1

    def __post_init__(self) -> None:
        if self.mode not in ("deterministic", "external"):
            raise OracleError(f"bad oracle mode: {self.mode!r}")
        if self.mode == "external" and not self.endpoint:
            raise OracleError("external mode needs an endpoint")
        if self.max_input_chars < 1:
            raise OracleError("max_input_chars must be >= 1")


@dataclass
class Transcript:
    kind: str
    input_chars: int
    response: str
    trimmed: bool = False
    messages: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_chars": self.input_chars,
                "trimmed": self.trimmed, "response": self.response,
                "messages": self.messages}


def parse_marked(text: str, start: str, end: str) -> list[str]:
    """Extract trimmed payloads of non-overlapping start..end blocks, in order.

    A start without a matching end is skipped.
    """
    out = []
    pos = 0
    while True:
        i = text.find(start, pos)
        if i < 0:
            break
        j = text.find(end, i + len(start))
        if j < 0:
            break
        out.append(text[i + len(start):j].strip())
        pos = j + len(end)
    return out


# ---------------------------------------------------------------------------
# prompt renderers; each embeds #-directive lines the deterministic engine
# and the unit tests can parse back out

def _machine_line(tag: str, payload: dict) -> str:
    return f"#{tag} {json.dumps(payload, sort_keys=True)}"


def render_verifier_prompt(child_stats: Sequence[dict],
                           child_details: dict[str, Sequence[str]]) -> list[ChatMessage]:
    """Scoring prompt for the children of the node being expanded.

    child_stats rows need: service, metric, log, trace, total, rule_bonus.
    """
    system = (
        "You are triaging a live incident in a microservice system. Several "
        "candidate services are listed below with their anomaly evidence. "
        "Give every candidate an integer severity score from 1 to 8: more "
        "metric and log anomalies mean a higher score, and a service showing "
        "both metric and log anomalies must outrank one showing a single "
        "kind. Make the strongest candidate stand out by scoring it at least "
        "2 points above every other. For each candidate reply with its name "
        f"inside {ROOT_SERVICE_MARKERS[0]}...{ROOT_SERVICE_MARKERS[1]} "
        f"followed by its score inside {ROOT_SCORE_MARKERS[0]}..."
        f"{ROOT_SCORE_MARKERS[1]}, then briefly justify the ranking."
    )
    parts = [f"Evidence for {len(child_stats)} candidate service(s):"]
    for stats in child_stats:
        service = stats["service"]
        parts.append(f"--- candidate: {service}")
        parts.append(_machine_line("child", stats))
        for line in child_details.get(service, ()):
            parts.append(f"  {line}")
    return [ChatMessage("system", system), ChatMessage("user", "\n".join(parts))]


def render_simulation_prompt(service: str, own_count: int,
                             caller_counts: dict[str, int],
                             own_details: Sequence[str] = ()) -> list[ChatMessage]:
    system = (
        "Judge how likely the service under inspection is the true root cause "
        "of the incident. Weigh its own anomalies together with the anomalies "
        "of the services that call it: a failing root cause drags its callers "
        "into an abnormal state, so heavier caller anomalies support a higher "
        "likelihood. Reply with an integer score from 1 to 10 inside "
        f"{ROOT_SCORE_MARKERS[0]}...{ROOT_SCORE_MARKERS[1]} and put your "
        f"analysis inside {ROOT_CAUSE_MARKERS[0]}...{ROOT_CAUSE_MARKERS[1]}."
    )
    parts = [f"Service under inspection: {service}"]
    parts.append(_machine_line("own", {"service": service, "count": own_count}))
    for caller, count in sorted(caller_counts.items()):
        parts.append(_machine_line("caller", {"service": caller, "count": count}))
    for line in own_details:
        parts.append(f"  {line}")
    return [ChatMessage("system", system), ChatMessage("user", "\n".join(parts))]


def render_fault_type_prompt(service: str, buckets: Sequence[dict],
                             details: Sequence[str] = ()) -> list[ChatMessage]:
    """Fault-category ranking prompt; buckets rows: label, count."""
    system = (
        "Classify the most probable fault categories for the root-cause "
        "service from its anomaly evidence. Rank categories by how much "
        "evidence supports them and return at most the top three, each as "
        f"{ROOT_TYPE_MARKERS[0]}LABEL | count=N | rationale"
        f"{ROOT_TYPE_MARKERS[1]} on its own line, strongest first."
    )
    parts = [f"Root-cause service: {service}"]
    for b in buckets:
        parts.append(_machine_line("bucket", b))
    for line in details:
        parts.append(f"  {line}")
    return [ChatMessage("system", system), ChatMessage("user", "\n".join(parts))]


def render_case_match_prompt(case, score: float, tau: float,
                             evidence_text: str) -> list[ChatMessage]:
    system = (
        "Decide whether the retrieved historical incident case matches the "
        "anomalies currently observed. Answer yes only when the current "
        "evidence genuinely replays the stored case. Reply with yes or no "
        f"inside {KB_MATCH_MARKERS[0]}...{KB_MATCH_MARKERS[1]}."
    )
    parts = [
        _machine_line("case", {"case_id": case.case_id, "score": round(score, 6),
                               "tau": tau}),
        f"Stored case {case.case_id}: root cause {case.root_cause_service}, "
        f"fault type {case.fault_type}.",
        f"Alignment score against current evidence: {score:.3f} (threshold {tau}).",
        "Current evidence:",
        evidence_text or "(none)",
    ]
    return [ChatMessage("system", system), ChatMessage("user", "\n".join(parts))]


def render_log_summary_prompt(service: str, pod: str,
                              lines: Sequence[str]) -> list[ChatMessage]:
    system = ("Summarize the abnormal log activity of one pod in at most two "
              "sentences for an incident report.")
    body = [f"service: {service}", f"pod: {pod}"]
    body.extend(lines or ["no abnormal logs"])
    return [ChatMessage("system", system), ChatMessage("user", "\n".join(body))]


# ---------------------------------------------------------------------------
# deterministic rule engine

def _parse_machine_lines(text: str, tag: str) -> list[dict]:
    prefix = f"#{tag} "
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith(prefix):
            rows.append(json.loads(line[len(prefix):]))
    return rows


def raw_child_score(metric: int, log: int, trace: int, total: int,
                    rule_bonus: float) -> int:
    """Expansion score before margin enforcement, clamped to [1, 8]."""
    score = 1.0
    if metric > 0:
        score += 2
    if log > 0:
        score += 2
    if metric > 0 and log > 0:
        score += 1
    score += min(total // 5, 2)
    score += rule_bonus
    rounded = int(score + 0.5) if score >= 0 else 0
    return max(1, min(8, rounded))


def simulation_state_score(own: int, caller_total: int) -> int:
    """Rollout score in [1, 10] from own and caller anomaly counts."""
    return max(1, min(10, 1 + min(own, 4) + min(caller_total, 5)))


class DeterministicEngine:
    """Answers any rendered prompt from its machine lines, marker-formatted."""

    def respond(self, messages: Sequence[ChatMessage]) -> str:
        text = "\n".join(m.content for m in messages)
        if "#child " in text:
            return self._verifier(text)
        if "#own " in text:
            return self._simulation(text)
        if "#bucket " in text:
            return self._fault_type(text)
        if "#case " in text:
            return self._case_match(text)
        return "no actionable content"

    def _verifier(self, text: str) -> str:
        out = []
        for row in _parse_machine_lines(text, "child"):
            score = raw_child_score(row["metric"], row["log"], row["trace"],
                                    row["total"], row["rule_bonus"])
            out.append(f"{ROOT_SERVICE_MARKERS[0]}{row['service']}{ROOT_SERVICE_MARKERS[1]}")
            out.append(f"{ROOT_SCORE_MARKERS[0]}{score}{ROOT_SCORE_MARKERS[1]}")
        out.append("Scores follow the evidence volume of each candidate.")
        return "\n".join(out)

    def _simulation(self, text: str) -> str:
        own = _parse_machine_lines(text, "own")[0]
        callers = _parse_machine_lines(text, "caller")
        total = sum(c["count"] for c in callers)
        score = simulation_state_score(own["count"], total)
        analysis = (f"service {own['service']} shows {own['count']} anomalies; "
                    f"callers contribute {total}")
        return (f"{ROOT_SCORE_MARKERS[0]}{score}{ROOT_SCORE_MARKERS[1]}\n"
                f"{ROOT_CAUSE_MARKERS[0]}{analysis}{ROOT_CAUSE_MARKERS[1]}")

    def _fault_type(self, text: str) -> str:
        buckets = _parse_machine_lines(text, "bucket")
        buckets.sort(key=lambda b: (-b["count"], b["label"]))
        out = []
        for b in buckets[:3]:
            rationale = f"{b['count']} finding(s) matched this category"
            out.append(f"{ROOT_TYPE_MARKERS[0]}{b['label']} | count={b['count']} | "
                       f"{rationale}{ROOT_TYPE_MARKERS[1]}")
        return "\n".join(out) if out else (
            f"{ROOT_TYPE_MARKERS[0]}Unknown | count=0 | no categorized evidence"
            f"{ROOT_TYPE_MARKERS[1]}")

    def _case_match(self, text: str) -> str:
        row = _parse_machine_lines(text, "case")[0]
        answer = "yes" if row["score"] >= row["tau"] else "no"
        return f"{KB_MATCH_MARKERS[0]}{answer}{KB_MATCH_MARKERS[1]}"


def _pluck(payload: Any, path: str) -> Any:
    cur = payload
    for part in path.split("."):
        if isinstance(cur, list):
            cur = cur[int(part)]
        elif isinstance(cur, dict):
            cur = cur[part]
        else:
            raise KeyError(path)
    return cur


class OracleAdapter:
    """Single entry point for completions; records transcripts and sizes."""

    def __init__(self, config: OracleConfig | None = None,
                 keep_messages: bool = False) -> None:
        self.config = config or OracleConfig()
        self.keep_messages = keep_messages
        self.transcripts: list[Transcript] = []
        self._engine = DeterministicEngine()

    @property
    def is_external(self) -> bool:
        return self.config.mode == "external"

    @property
    def max_recorded_input(self) -> int:
        return max((t.input_chars for t in self.transcripts), default=0)

    def reset(self) -> None:
        self.transcripts.clear()

    def complete(self, messages: Sequence[ChatMessage], kind: str = "generic") -> str:
        if not messages:
            raise OracleError("no messages to complete")
        total = sum(len(m.content) for m in messages)
        trimmed = False
        if self.is_external and total > self.config.max_input_chars:
            messages = self._head_trim(messages, total - self.config.max_input_chars)
            total = self.config.max_input_chars
            trimmed = True
        if self.is_external:
            response = self._post(messages)
        else:
            response = self._engine.respond(messages)
        self.transcripts.append(Transcript(
            kind=kind, input_chars=total, response=response, trimmed=trimmed,
            messages=[{"role": m.role, "content": m.content} for m in messages]
            if self.keep_messages else []))
        return response

    @staticmethod
    def _head_trim(messages: Sequence[ChatMessage], excess: int) -> list[ChatMessage]:
        """Drop characters from the front of the conversation, keep the tail."""
        out: list[ChatMessage] = []
        for m in messages:
            if excess >= len(m.content):
                excess -= len(m.content)
                continue  # message consumed entirely
            if excess > 0:
                out.append(ChatMessage(m.role, m.content[excess:]))
                excess = 0
            else:
                out.append(m)
        if not out:  # degenerate budget: keep the last message's tail
            last = messages[-1]
            out = [ChatMessage(last.role, last.content[-1:])]
        return out

    def _post(self, messages: Sequence[ChatMessage]) -> str:
        payload = json.dumps({
            "model": self.config.model or "default",
            "messages": [{"role": m.role, "content": m.content} for m in messages],
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers[self.config.api_key_header] = self.config.api_key
        last_err: Exception | None = None
        for _ in range(max(1, self.config.retries + 1)):
            req = urllib.request.Request(self.config.endpoint, data=payload,
                                         headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.config.timeout) as resp:
                    body = json.loads(resp.read().decode("utf-8"))
                return str(_pluck(body, self.config.response_path))
            except (urllib.error.URLError, KeyError, IndexError,
                    json.JSONDecodeError, ValueError) as err:
                last_err = err
        raise OracleError(f"oracle endpoint failed: {last_err}")
