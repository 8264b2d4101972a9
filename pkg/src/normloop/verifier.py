"""Normal-form verification: binary per-form verdicts with monotone failure
propagation and actionable feedback.

One contract, two backends. The deterministic backend composes the 1NF
pattern rules with the FD-theory oracle; the LLM backend prompts a model
for a verdict block and clamps whatever comes back to monotonicity. A FAIL
at NFk always implies FAIL at every higher form, and always comes with at
least one anomaly at or below NFk.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import fd as fd_theory
from .model import NormalForm, Schema, Table, ensure_valid

__all__ = [
    "AnomalyItem",
    "VerificationReport",
    "VerifierReplyError",
    "DeterministicVerifier",
    "LlmVerifier",
    "check_1nf",
    "check_2nf",
    "check_3nf",
    "render_feedback",
    "repeating_group_base",
    "table_fds",
    "verify",
]

KIND_TO_NF = {
    "NON_ATOMIC": NormalForm.NF1,
    "REPEATING_GROUP": NormalForm.NF1,
    "MISSING_PK": NormalForm.NF1,
    "PARTIAL": NormalForm.NF2,
    "TRANSITIVE": NormalForm.NF3,
}
_DEFAULT_KIND = {
    NormalForm.NF1: "MISSING_PK",
    NormalForm.NF2: "PARTIAL",
    NormalForm.NF3: "TRANSITIVE",
}


class VerifierReplyError(Exception):
    """The LLM verifier produced no parseable verdict within the retry cap."""


@dataclass(frozen=True)
class AnomalyItem:
    normal_form: NormalForm
    kind: str
    table: str
    columns: tuple[str, ...]
    explanation: str
    suggested_action: str

    def __post_init__(self):
        expected = KIND_TO_NF.get(self.kind)
        if expected is None:
            raise ValueError(f"unknown anomaly kind {self.kind!r}")
        if expected != self.normal_form:
            raise ValueError(
                f"kind {self.kind} belongs to {expected}, not {self.normal_form}")

    def sort_key(self):
        return (int(self.normal_form), self.table.lower(),
                tuple(c.lower() for c in self.columns))


@dataclass(frozen=True)
class VerificationReport:
    status: dict[NormalForm, str]  # "PASS" | "FAIL", NF1..target
    anomalies: tuple[AnomalyItem, ...]
    backend: str  # DETERMINISTIC | LLM

    def __post_init__(self):
        levels = sorted(self.status)
        failing = [nf for nf in levels if self.status[nf] == "FAIL"]
        if failing:
            first = failing[0]
            for nf in levels:
                if nf > first and self.status[nf] != "FAIL":
                    raise ValueError(f"non-monotone report: {first} FAIL but {nf} PASS")
            if not any(a.normal_form <= first for a in self.anomalies):
                raise ValueError(f"FAIL at {first} without an anomaly at or below it")

    @property
    def passed(self) -> bool:
        return all(v == "PASS" for v in self.status.values())

    def to_dict(self) -> dict:
        return {
            "status": {str(nf): v for nf, v in sorted(self.status.items())},
            "anomalies": [
                {
                    "normal_form": str(a.normal_form),
                    "kind": a.kind,
                    "table": a.table,
                    "columns": list(a.columns),
                    "explanation": a.explanation,
                    "suggested_action": a.suggested_action,
                }
                for a in self.anomalies
            ],
            "backend": self.backend,
        }


def build_report(
    status: dict[NormalForm, str],
    anomalies: list[AnomalyItem],
    backend: str,
    fallback_table: str = "",
) -> VerificationReport:
    """Clamp a raw verdict to the report invariants.

    Failure propagates upward from the first failing form, and a FAIL that
    arrived without any anomaly gets a placeholder item so downstream
    feedback rendering always has something to say.
    """
    status = dict(status)
    failing = sorted(nf for nf, v in status.items() if v == "FAIL")
    items = sorted(anomalies, key=AnomalyItem.sort_key)
    if failing:
        first = failing[0]
        for nf in status:
            if nf > first:
                status[nf] = "FAIL"
        if not any(a.normal_form <= first for a in items):
            kind = _DEFAULT_KIND[first]
            items.insert(0, AnomalyItem(
                normal_form=first, kind=kind, table=fallback_table, columns=(),
                explanation=f"the verifier reported a {first} failure without details",
                suggested_action=f"review the schema against the {first} requirements",
            ))
    return VerificationReport(status=status, anomalies=tuple(items), backend=backend)


def repeating_group_base(name: str) -> str | None:
    """Base of a `<base><sep><index>` column name (sep '' or '_', index 1-9)."""
    if len(name) >= 2 and name[-1] in "123456789":
        base = name[:-1]
        if base.endswith("_"):
            base = base[:-1]
        if base:
            return base
    return None


def _resolve_into_table(schema: Schema, table: Table, attrs, scope) -> frozenset[str] | None:
    """Resolve FD attributes to this table's stored column spellings, or
    None when any attribute lives elsewhere."""
    out = set()
    for attr in attrs:
        if "." in attr:
            tname, _, cname = attr.partition(".")
            if tname.lower() != table.name.lower():
                return None
            col = table.column(cname)
        elif scope is not None:
            col = table.column(attr)
        else:
            hosts = [t for t in schema.tables if t.has_column(attr)]
            if len(hosts) != 1 or hosts[0].name.lower() != table.name.lower():
                return None
            col = table.column(attr)
        if col is None:
            return None
        out.add(col.name)
    return frozenset(out)


def table_fds(schema: Schema, table: Table, include_pk: bool = True) -> list[fd_theory.FD]:
    """The FDs that hold within one table: declared FDs whose attributes all
    resolve here, plus the FD implied by a declared primary key."""
    fds: list[fd_theory.FD] = []
    for f in schema.fds:
        if f.is_trivial:
            continue
        if f.scope is not None and f.scope.lower() != table.name.lower():
            continue
        lhs = _resolve_into_table(schema, table, f.lhs, f.scope)
        rhs = _resolve_into_table(schema, table, f.rhs, f.scope)
        if lhs is None or rhs is None:
            continue  # cross-table dependency: outside per-table checks
        fds.append((lhs, rhs))
    if include_pk and table.primary_key:
        pk_cols = set()
        for p in table.primary_key:
            col = table.column(p)
            if col is not None:
                pk_cols.add(col.name)
        if pk_cols:
            fds.append((frozenset(pk_cols), frozenset(c.name for c in table.columns)))
    return fds


def check_1nf(schema: Schema) -> list[AnomalyItem]:
    """Schema-level 1NF rules: multivalued markers, repeating column groups,
    and missing primary keys. No data rows exist, so atomicity is decided
    from annotations and name patterns only."""
    items: list[AnomalyItem] = []
    for t in schema.tables:
        for c in t.columns:
            if c.is_multivalued:
                items.append(AnomalyItem(
                    normal_form=NormalForm.NF1, kind="NON_ATOMIC", table=t.name,
                    columns=(c.name,),
                    explanation=f"column '{c.name}' is marked multivalued and holds "
                                f"more than one value per row",
                    suggested_action=f"move '{c.name}' to a child table keyed by the "
                                     f"parent key plus '{c.name}'",
                ))

        groups: dict[tuple[str, str], list[str]] = {}
        for c in t.columns:
            base = repeating_group_base(c.name)
            if base:
                groups.setdefault((base.lower(), c.data_type.render()), []).append(c.name)
        for (base, _), members in sorted(groups.items()):
            if len(members) >= 2:
                items.append(AnomalyItem(
                    normal_form=NormalForm.NF1, kind="REPEATING_GROUP", table=t.name,
                    columns=tuple(members),
                    explanation=f"columns {', '.join(members)} repeat the attribute "
                                f"'{base}'",
                    suggested_action=f"replace them with a child table keyed by the "
                                     f"parent key plus a sequence number, holding one "
                                     f"'{base}' per row",
                ))

        if not t.primary_key:
            hint = ""
            if len(t.columns) <= fd_theory.ATTRIBUTE_LIMIT:
                keys = fd_theory.candidate_keys(t, table_fds(schema, t))
                if keys:
                    hint = ", ".join(sorted(keys[0]))
            items.append(AnomalyItem(
                normal_form=NormalForm.NF1, kind="MISSING_PK", table=t.name,
                columns=t.column_names(),
                explanation="the table declares no primary key",
                suggested_action=f"declare PRIMARY KEY ({hint})" if hint
                                 else "declare a primary key",
            ))
    return sorted(items, key=AnomalyItem.sort_key)


def _split_action(v: fd_theory.DependencyViolation) -> str:
    cols = ", ".join(sorted(v.determinant) + [v.dependent])
    det = ", ".join(sorted(v.determinant))
    return f"split {cols} into a table keyed by ({det})"


def check_2nf(schema: Schema) -> list[AnomalyItem]:
    """Partial dependencies: non-prime attributes hanging off a proper
    subset of a candidate key."""
    items = []
    for t in schema.tables:
        for v in fd_theory.partial_dependencies(t, table_fds(schema, t)):
            det = ", ".join(sorted(v.determinant))
            key = ", ".join(sorted(v.witness_key))
            items.append(AnomalyItem(
                normal_form=NormalForm.NF2, kind="PARTIAL", table=t.name,
                columns=tuple(sorted(v.determinant) + [v.dependent]),
                explanation=f"'{v.dependent}' depends on ({det}), a proper subset of "
                            f"candidate key ({key})",
                suggested_action=_split_action(v),
            ))
    return sorted(items, key=AnomalyItem.sort_key)


def check_3nf(schema: Schema) -> list[AnomalyItem]:
    """Transitive dependencies: non-prime attributes determined by a
    non-superkey that is not part of any candidate key."""
    items = []
    for t in schema.tables:
        for v in fd_theory.transitive_dependencies(t, table_fds(schema, t)):
            det = ", ".join(sorted(v.determinant))
            items.append(AnomalyItem(
                normal_form=NormalForm.NF3, kind="TRANSITIVE", table=t.name,
                columns=tuple(sorted(v.determinant) + [v.dependent]),
                explanation=f"'{v.dependent}' depends transitively on the key "
                            f"through ({det})",
                suggested_action=_split_action(v),
            ))
    return sorted(items, key=AnomalyItem.sort_key)


class DeterministicVerifier:
    """Pure-function verification backend over the FD-theory oracle."""

    name = "DETERMINISTIC"

    def verify(self, schema: Schema, target: NormalForm = NormalForm.NF3) -> VerificationReport:
        ensure_valid(schema)
        checks = {
            NormalForm.NF1: check_1nf,
            NormalForm.NF2: check_2nf,
            NormalForm.NF3: check_3nf,
        }
        anomalies: list[AnomalyItem] = []
        status: dict[NormalForm, str] = {}
        for nf in NormalForm:
            if nf > target:
                break
            found = checks[nf](schema)
            anomalies.extend(found)
            status[nf] = "FAIL" if found else "PASS"
        fallback = schema.tables[0].name if schema.tables else ""
        return build_report(status, anomalies, backend=self.name,
                            fallback_table=fallback)


def verify(schema: Schema, target: NormalForm = NormalForm.NF3,
           backend=None) -> VerificationReport:
    """Verify 1NF up to `target` with the given backend (deterministic by
    default). Status is monotone: the first failing form fails everything
    above it."""
    if backend is None:
        backend = DeterministicVerifier()
    return backend.verify(schema, target)


def render_feedback(report: VerificationReport) -> str:
    """Deterministic, numbered anomaly list for the generation module."""
    if report.passed:
        raise ValueError("nothing to render: the report passes every form")
    lines = []
    for i, a in enumerate(sorted(report.anomalies, key=AnomalyItem.sort_key), start=1):
        cols = ", ".join(a.columns)
        lines.append(
            f"{i}. [{a.normal_form}] table '{a.table}', columns ({cols}): "
            f"{a.explanation}; action: {a.suggested_action}")
    return "\n".join(lines)


# -- LLM backend -----------------------------------------------------------

_VERDICT_RE = re.compile(r"^\s*NF([123])\s*[:\-]\s*(PASS|FAIL)\b", re.IGNORECASE)
_ANOMALY_RE = re.compile(r"^\s*ANOMALY\s*:\s*(.+)$", re.IGNORECASE)


class _ReplyFormatError(Exception):
    pass


def parse_verdict_reply(text: str, target: NormalForm,
                        fallback_table: str = "") -> VerificationReport:
    """Parse a verdict block out of a free-text reply and clamp it.

    Tolerates surrounding prose; requires one NFk: PASS|FAIL line for each
    of the three forms. Anomaly lines are pipe-separated; the kind decides
    the normal form when the two disagree.
    """
    status_all: dict[NormalForm, str] = {}
    items: list[AnomalyItem] = []
    for line in text.splitlines():
        m = _VERDICT_RE.match(line)
        if m:
            nf = NormalForm(int(m.group(1)))
            if nf not in status_all:  # first occurrence wins
                status_all[nf] = m.group(2).upper()
            continue
        m = _ANOMALY_RE.match(line)
        if m:
            item = _parse_anomaly_fields(m.group(1))
            if item is not None:
                items.append(item)

    missing = [nf for nf in NormalForm if nf not in status_all]
    if missing:
        raise _ReplyFormatError(
            "verdict block incomplete: no PASS/FAIL line for "
            + ", ".join(str(nf) for nf in missing))

    status = {nf: status_all[nf] for nf in NormalForm if nf <= target}
    return build_report(status, items, backend="LLM", fallback_table=fallback_table)


def _parse_anomaly_fields(body: str) -> AnomalyItem | None:
    fields = [f.strip() for f in body.split("|")]
    fields += [""] * (6 - len(fields))
    nf_text, kind_text, table, columns, explanation, action = fields[:6]

    kind = kind_text.upper().replace(" ", "_")
    nf = None
    m = re.search(r"NF\s*([123])|([123])\s*NF", nf_text.upper())
    if m:
        nf = NormalForm(int(m.group(1) or m.group(2)))
    if kind in KIND_TO_NF:
        nf = KIND_TO_NF[kind]  # the specific kind outranks the stated form
    elif nf is not None:
        kind = _DEFAULT_KIND[nf]
    else:
        return None  # neither field parseable: drop the line
    cols = tuple(c.strip() for c in columns.split(",") if c.strip())
    return AnomalyItem(
        normal_form=nf, kind=kind, table=table, columns=cols,
        explanation=explanation or "reported by the verification model",
        suggested_action=action or "revise the schema for this form",
    )


class LlmVerifier:
    """Verification behind a chat model: prompt, parse, clamp.

    Unparseable verdicts are re-prompted with the format error up to
    `parse_retries` times before VerifierReplyError.
    """

    name = "LLM"

    def __init__(self, client, shot_mode: str = "ZERO",
                 template_dir=None, parse_retries: int = 2):
        self.client = client
        self.shot_mode = shot_mode
        self.template_dir = template_dir
        self.parse_retries = parse_retries
        self.last_prompt_tokens = 0

    def verify(self, schema: Schema, target: NormalForm = NormalForm.NF3) -> VerificationReport:
        from .llm import ChatRequest
        from .prompting import build_prompt, estimate_tokens, load_template

        ensure_valid(schema)
        template = load_template("VERIFICATION", self.shot_mode, self.template_dir)
        prompt = build_prompt(template, schema, None, target)
        messages: list[tuple[str, str]] = [("user", prompt)]
        self.last_prompt_tokens = estimate_tokens(prompt)
        fallback = schema.tables[0].name if schema.tables else ""

        last_error = ""
        for _ in range(self.parse_retries + 1):
            request = ChatRequest(model_id=self.client.config.model_id,
                                  messages=tuple(messages))
            response = self.client.complete(request)
            try:
                return parse_verdict_reply(response.content, target, fallback)
            except _ReplyFormatError as exc:
                last_error = str(exc)
                retry_note = (f"Your reply could not be parsed: {exc}. "
                              f"Reply again with the exact verdict block format.")
                messages.append(("assistant", response.content))
                messages.append(("user", retry_note))
                self.last_prompt_tokens += estimate_tokens(retry_note)
        raise VerifierReplyError(
            f"no parseable verdict after {self.parse_retries} retries: {last_error}")
