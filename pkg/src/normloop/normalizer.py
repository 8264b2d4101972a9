"""Schema generation: produce a normalized schema from an input schema plus
optional verification feedback.

Two interchangeable backends. The deterministic one repairs 1NF defects
(multivalued columns and repeating groups become child tables, missing
primary keys get assigned from candidate keys) and then replaces every
table with its 3NF synthesis, re-targeting foreign keys onto the split
results. The LLM one prompts a chat model and parses fenced DDL out of the
reply, re-prompting on extraction/parse failures up to twice per attempt.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import fd as fd_theory
from .ddl import ExtractionError, ParseError, extract_schema_block, parse_ddl
from .model import (
    Column,
    DataType,
    ForeignKey,
    FunctionalDependency,
    NormalForm,
    Schema,
    SchemaInvalid,
    Table,
    canonicalize,
    ensure_valid,
)
from .verifier import repeating_group_base, table_fds

__all__ = [
    "DeterministicGenerator",
    "GenerationFailed",
    "GenerationOutcome",
    "GenerationRequest",
    "LlmGenerator",
    "deterministic_normalize",
    "llm_generate",
]


class GenerationFailed(Exception):
    """No structurally valid schema came back within the parse-retry cap."""

    def __init__(self, message: str, parse_retries_used: int = 0,
                 raw_reply: str | None = None):
        super().__init__(message)
        self.parse_retries_used = parse_retries_used
        self.raw_reply = raw_reply


@dataclass(frozen=True)
class GenerationRequest:
    schema: Schema
    feedback: str | None = None  # only on refinement attempts >= 2
    target: NormalForm = NormalForm.NF3
    shot_mode: str = "ZERO"


@dataclass(frozen=True)
class GenerationOutcome:
    schema: Schema
    raw_reply: str | None = None
    prompt_tokens_est: int = 0
    parse_retries_used: int = 0
    prompt_text: str | None = None


def _unique_table_name(base: str, taken: set[str]) -> str:
    name = base
    n = 2
    while name.lower() in taken:
        name = f"{base}_{n}"
        n += 1
    taken.add(name.lower())
    return name


def _repair_1nf(schema: Schema) -> Schema:
    """Make every table 1NF: assign missing PKs, hive off multivalued
    columns and repeating groups into child tables with an FK back."""
    taken = {t.name.lower() for t in schema.tables}
    out_tables: list[Table] = []

    for t in schema.tables:
        mv_cols = [c for c in t.columns if c.is_multivalued]
        groups: dict[tuple[str, str], list[Column]] = {}
        for c in t.columns:
            base = repeating_group_base(c.name)
            if base:
                groups.setdefault((base, c.data_type.render()), []).append(c)
        rep_groups = {k: v for k, v in groups.items() if len(v) >= 2}
        problem = {c.name.lower() for c in mv_cols}
        for members in rep_groups.values():
            problem |= {c.name.lower() for c in members}

        pk = t.primary_key
        if not pk:
            # Candidate key over the columns that will stay in the parent.
            clean = Table(name=t.name,
                          columns=tuple(c for c in t.columns
                                        if c.name.lower() not in problem),
                          primary_key=None, foreign_keys=())
            fds = table_fds(schema, clean, include_pk=False)
            keys = (fd_theory.candidate_keys(clean, fds)
                    if len(clean.columns) <= fd_theory.ATTRIBUTE_LIMIT else [])
            pk = tuple(sorted(keys[0])) if keys else clean.column_names()

        pk_cols = tuple(c for c in t.columns if c.name.lower() in
                        {p.lower() for p in pk})
        parent_cols = [c for c in t.columns if c.name.lower() not in problem]
        children: list[Table] = []

        for c in mv_cols:
            atomic = Column(c.name, c.data_type, c.nullable,
                            frozenset(a for a in c.annotations
                                      if a.kind != "MULTIVALUED"))
            name = _unique_table_name(f"{t.name}_{c.name}", taken)
            children.append(Table(
                name=name,
                columns=pk_cols + (atomic,),
                primary_key=tuple(p.name for p in pk_cols) + (atomic.name,),
                foreign_keys=(ForeignKey(tuple(p.name for p in pk_cols),
                                         t.name,
                                         tuple(p.name for p in pk_cols)),),
            ))

        for (base, _), members in sorted(rep_groups.items()):
            taken_cols = {p.name.lower() for p in pk_cols}
            seq_name = "seq" if "seq" not in taken_cols else "seq_no"
            base_name = base if base.lower() not in taken_cols | {seq_name} else f"{base}_value"
            value = Column(base_name, members[0].data_type, members[0].nullable)
            name = _unique_table_name(f"{t.name}_{base}", taken)
            children.append(Table(
                name=name,
                columns=pk_cols + (Column(seq_name, DataType("INT"), False), value),
                primary_key=tuple(p.name for p in pk_cols) + (seq_name,),
                foreign_keys=(ForeignKey(tuple(p.name for p in pk_cols),
                                         t.name,
                                         tuple(p.name for p in pk_cols)),),
            ))

        out_tables.append(Table(name=t.name, columns=tuple(parent_cols),
                                primary_key=tuple(pk), foreign_keys=t.foreign_keys))
        out_tables.extend(children)

    return Schema(name=schema.name, tables=tuple(out_tables), fds=schema.fds)


def _resolvable_in(schema: Schema, table: Table, f: FunctionalDependency) -> bool:
    from .verifier import _resolve_into_table

    if f.scope is not None and f.scope.lower() != table.name.lower():
        return False
    return (_resolve_into_table(schema, table, f.lhs, f.scope) is not None
            and _resolve_into_table(schema, table, f.rhs, f.scope) is not None)


def _retarget_fk(fk: ForeignKey, tables: list[Table]) -> ForeignKey | None:
    """Point an FK at whichever output table carries the referenced key."""
    want = {c.lower() for c in fk.referenced_columns}
    exact, containing = None, None
    for t in sorted(tables, key=lambda t: t.name.lower()):
        cols = {c.lower() for c in t.column_names()}
        if want <= cols:
            if t.primary_key and {p.lower() for p in t.primary_key} == want:
                exact = exact or t
            containing = containing or t
    target = exact or containing
    if target is None:
        return None
    return ForeignKey(fk.columns, target.name, fk.referenced_columns)


def deterministic_normalize(schema: Schema) -> Schema:
    """Oracle normalization: 1NF repairs, then per-table 3NF synthesis.

    The output passes deterministic verification at NF3, keeps every input
    attribute (repeating-group members fold into their base name), and is a
    fixpoint: normalizing the output again changes nothing.
    """
    ensure_valid(schema)
    repaired = _repair_1nf(schema)

    taken: set[str] = set()
    fragments_of: dict[str, list[Table]] = {}
    out_fds: list[FunctionalDependency] = []
    ordered: list[Table] = []

    for t in repaired.tables:
        fds = table_fds(repaired, t)
        frags = fd_theory.synthesize_3nf(t, fds)

        renamed: list[Table] = []
        for f in frags:
            name = _unique_table_name(f.name, taken)
            renamed.append(replace(f, name=name) if name != f.name else f)
        fragments_of[t.name.lower()] = renamed
        ordered.extend(renamed)

        # Keep the non-key-implied cover dependencies declared on their
        # fragment; they are what makes the decomposition verifiable.
        cover = fd_theory.minimal_cover(fds)
        for lhs, rhs in cover:
            for f in renamed:
                fcols = {c.lower() for c in f.column_names()}
                if {a.lower() for a in lhs | rhs} <= fcols:
                    if not f.primary_key or {p.lower() for p in f.primary_key} != {
                        a.lower() for a in lhs
                    }:
                        out_fds.append(FunctionalDependency(lhs, rhs, scope=f.name))
                    break

    # Re-target the original FKs, then link fragments of the same source.
    final_tables: list[Table] = []
    for src in repaired.tables:
        frags = fragments_of[src.name.lower()]
        for f in frags:
            fcols = {c.lower() for c in f.column_names()}
            fks: list[ForeignKey] = []
            for fk in src.foreign_keys:
                if {c.lower() for c in fk.columns} <= fcols:
                    ref_table = repaired.table(fk.referenced_table)
                    ref_frags = (fragments_of.get(fk.referenced_table.lower(), [])
                                 if ref_table is not None else [])
                    moved = _retarget_fk(fk, ref_frags)
                    if moved is not None:
                        fks.append(moved)
            for g in frags:
                if g is f or not g.primary_key:
                    continue
                gpk = {p.lower() for p in g.primary_key}
                if gpk <= fcols and (not f.primary_key
                                     or gpk != {p.lower() for p in f.primary_key}):
                    fks.append(ForeignKey(tuple(g.primary_key), g.name,
                                          tuple(g.primary_key)))
            seen = set()
            unique_fks = []
            for fk in sorted(fks, key=lambda k: (k.referenced_table.lower(),
                                                 tuple(c.lower() for c in k.columns))):
                sig = (tuple(c.lower() for c in fk.columns), fk.referenced_table.lower())
                if sig not in seen:
                    seen.add(sig)
                    unique_fks.append(fk)
            final_tables.append(replace(f, foreign_keys=tuple(unique_fks)))

    draft = Schema(name=schema.name, tables=tuple(final_tables), fds=tuple(out_fds))

    # Cross-table declared FDs never joined a per-table synthesis; keep the
    # ones that still resolve against the split tables, drop the rest.
    from .model import validate_schema

    extra: list[FunctionalDependency] = []
    covered = {(f.lhs, f.rhs, (f.scope or "").lower()) for f in out_fds}
    for f in schema.fds:
        if f.is_trivial or (f.lhs, f.rhs, (f.scope or "").lower()) in covered:
            continue
        in_one_table = any(
            _resolvable_in(repaired, t, f) for t in repaired.tables
        )
        if in_one_table:
            continue  # its content is already in some fragment's cover
        trial = Schema(draft.name, draft.tables, draft.fds + tuple(extra) + (f,))
        if not validate_schema(trial):
            extra.append(f)

    result = Schema(draft.name, draft.tables, draft.fds + tuple(extra))
    return canonicalize(result)


class DeterministicGenerator:
    """Generation backend that runs the oracle normalizer. No prompts."""

    name = "DETERMINISTIC"

    def generate(self, request: GenerationRequest) -> GenerationOutcome:
        return GenerationOutcome(
            schema=deterministic_normalize(request.schema),
            raw_reply=None,
            prompt_tokens_est=0,
            parse_retries_used=0,
            prompt_text=None,
        )


def llm_generate(request: GenerationRequest, backend,
                 template_dir=None, parse_retries: int = 2) -> GenerationOutcome:
    """One generation attempt against a chat backend.

    Builds the prompt (appending feedback verbatim when present), sends one
    completion, extracts and parses the fenced DDL reply. Extraction and
    parse failures are re-prompted with the error message up to
    `parse_retries` times within the attempt; beyond that the attempt is a
    GenerationFailed. Transport errors propagate untouched.
    """
    from .llm import ChatRequest
    from .prompting import build_prompt, estimate_tokens, load_template

    ensure_valid(request.schema)
    template = load_template("GENERATION", request.shot_mode, template_dir)
    prompt = build_prompt(template, request.schema, request.feedback, request.target)
    messages: list[tuple[str, str]] = [("user", prompt)]
    tokens = estimate_tokens(prompt)

    last_reply: str | None = None
    last_error = ""
    for retries_used in range(parse_retries + 1):
        chat = ChatRequest(model_id=backend.config.model_id, messages=tuple(messages))
        response = backend.complete(chat)
        last_reply = response.content
        try:
            block = extract_schema_block(response.content)
            parsed = parse_ddl(block, schema_name=request.schema.name)
            return GenerationOutcome(
                schema=parsed,
                raw_reply=response.content,
                prompt_tokens_est=tokens,
                parse_retries_used=retries_used,
                prompt_text=prompt,
            )
        except (ExtractionError, ParseError, SchemaInvalid) as exc:
            last_error = str(exc)
            note = (f"Your previous reply could not be used: {exc}. "
                    f"Reply again with the complete corrected schema in one "
                    f"fenced code block.")
            messages.append(("assistant", response.content))
            messages.append(("user", note))
            tokens += estimate_tokens(note)
    raise GenerationFailed(
        f"no usable schema after {parse_retries} parse retries: {last_error}",
        parse_retries_used=parse_retries, raw_reply=last_reply)


class LlmGenerator:
    """Generation behind a chat model."""

    name = "LLM"

    def __init__(self, client, shot_mode: str = "ZERO", template_dir=None,
                 parse_retries: int = 2):
        self.client = client
        self.shot_mode = shot_mode
        self.template_dir = template_dir
        self.parse_retries = parse_retries

    def generate(self, request: GenerationRequest) -> GenerationOutcome:
        request = replace(request, shot_mode=self.shot_mode)
        return llm_generate(request, self.client, self.template_dir,
                            self.parse_retries)
