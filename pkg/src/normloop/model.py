"""Immutable data model for relational schemas and functional dependencies.

Everything here is a frozen dataclass: schemas are values that flow through
the generate/verify/refine loop and may be shared freely between threads.
Identifier comparison is case-insensitive throughout (SQL convention) while
the original spelling is preserved for display and round-tripping.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

__all__ = [
    "KNOWN_TYPE_KINDS",
    "Column",
    "ColumnAnnotation",
    "DataType",
    "ForeignKey",
    "FunctionalDependency",
    "NormalForm",
    "Schema",
    "SchemaInvalid",
    "StructuralError",
    "Table",
    "canonicalize",
    "validate_schema",
]


class NormalForm(enum.IntEnum):
    """Normal-form levels, totally ordered NF1 < NF2 < NF3."""

    NF1 = 1
    NF2 = 2
    NF3 = 3

    def __str__(self) -> str:  # "NF1", not "NormalForm.NF1"
        return self.name


# Type kinds the DDL grammar knows how to spell. Anything else is preserved
# verbatim (kind TEXT, raw spelling kept) so parsing stays total.
KNOWN_TYPE_KINDS = frozenset(
    {"INT", "BIGINT", "DECIMAL", "VARCHAR", "TEXT", "DATE", "TIMESTAMP", "BOOLEAN"}
)
_PARAM_ARITY = {"DECIMAL": 2, "VARCHAR": 1}


@dataclass(frozen=True)
class DataType:
    """A column type: a known kind plus optional positive parameters.

    Unknown vendor types survive as ``kind="TEXT"`` with ``raw`` holding the
    original spelling; they compare equal only to the same raw spelling.
    """

    kind: str
    params: tuple[int, ...] = ()
    raw: str | None = None

    def render(self) -> str:
        if self.raw is not None:
            return self.raw
        if self.params:
            return f"{self.kind}({','.join(str(p) for p in self.params)})"
        return self.kind

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class ColumnAnnotation:
    """Column marker: MULTIVALUED, or DERIVED_FROM with source attributes."""

    kind: str  # MULTIVALUED | DERIVED_FROM
    attrs: tuple[str, ...] = ()


MULTIVALUED = ColumnAnnotation("MULTIVALUED")


@dataclass(frozen=True)
class Column:
    name: str
    data_type: DataType
    nullable: bool = True
    annotations: frozenset[ColumnAnnotation] = frozenset()

    @property
    def is_multivalued(self) -> bool:
        return any(a.kind == "MULTIVALUED" for a in self.annotations)


@dataclass(frozen=True)
class ForeignKey:
    columns: tuple[str, ...]
    referenced_table: str
    referenced_columns: tuple[str, ...]


@dataclass(frozen=True)
class FunctionalDependency:
    """Determinant -> dependent attribute sets, scoped to a table or global.

    Attributes may be bare column names (resolved within the scope table, or
    schema-wide when the name is unique) or qualified as ``table.column``.
    """

    lhs: frozenset[str]
    rhs: frozenset[str]
    scope: str | None = None  # table name, or None for schema-global

    @property
    def is_trivial(self) -> bool:
        """lhs ⊇ rhs up to case: the FD carries no information."""
        lo = {a.lower() for a in self.lhs}
        return all(a.lower() in lo for a in self.rhs)


@dataclass(frozen=True)
class Table:
    name: str
    columns: tuple[Column, ...]
    primary_key: tuple[str, ...] | None = None
    foreign_keys: tuple[ForeignKey, ...] = ()

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column(self, name: str) -> Column | None:
        low = name.lower()
        for c in self.columns:
            if c.name.lower() == low:
                return c
        return None

    def has_column(self, name: str) -> bool:
        return self.column(name) is not None


@dataclass(frozen=True)
class Schema:
    name: str
    tables: tuple[Table, ...]
    fds: tuple[FunctionalDependency, ...] = ()

    def table(self, name: str) -> Table | None:
        low = name.lower()
        for t in self.tables:
            if t.name.lower() == low:
                return t
        return None


@dataclass(frozen=True)
class StructuralError:
    """One violated model invariant: which element, which rule, and why."""

    element: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"{self.element}: {self.message} [{self.rule}]"


class SchemaInvalid(Exception):
    """Raised when an operation requires a structurally valid schema."""

    def __init__(self, errors: list[StructuralError]):
        self.errors = errors
        super().__init__("; ".join(str(e) for e in errors))


def _resolve_attr(schema: Schema, attr: str, scope: str | None) -> str | None:
    """Resolve an FD attribute to 'table.column' (lowercased), or None."""
    if "." in attr:
        tname, _, cname = attr.partition(".")
        t = schema.table(tname)
        if t is not None and t.has_column(cname):
            return f"{t.name.lower()}.{cname.lower()}"
        return None
    if scope is not None:
        t = schema.table(scope)
        if t is not None and t.has_column(attr):
            return f"{t.name.lower()}.{attr.lower()}"
        return None
    hits = [t for t in schema.tables if t.has_column(attr)]
    if len(hits) == 1:
        return f"{hits[0].name.lower()}.{attr.lower()}"
    return None


def validate_schema(schema: Schema) -> list[StructuralError]:
    """Check every model invariant; an empty list means the schema is valid."""
    errors: list[StructuralError] = []

    seen_tables: set[str] = set()
    for t in schema.tables:
        low = t.name.lower()
        if low in seen_tables:
            errors.append(
                StructuralError(f"table {t.name}", "unique-table-names",
                                f"duplicate table name {t.name!r}")
            )
        seen_tables.add(low)

        seen_cols: set[str] = set()
        for c in t.columns:
            cl = c.name.lower()
            if cl in seen_cols:
                errors.append(
                    StructuralError(f"{t.name}.{c.name}", "unique-column-names",
                                    f"duplicate column {c.name!r} in table {t.name!r}")
                )
            seen_cols.add(cl)
            if c.data_type.raw is None and any(p <= 0 for p in c.data_type.params):
                errors.append(
                    StructuralError(f"{t.name}.{c.name}", "positive-type-params",
                                    f"non-positive parameter in type {c.data_type}")
                )
            for ann in c.annotations:
                if ann.kind == "DERIVED_FROM":
                    for a in ann.attrs:
                        if _resolve_attr(schema, a, t.name) is None:
                            errors.append(
                                StructuralError(
                                    f"{t.name}.{c.name}", "derived-from-resolves",
                                    f"DERIVED_FROM attribute {a!r} does not resolve")
                            )

        if t.primary_key is not None:
            for pk_col in t.primary_key:
                if not t.has_column(pk_col):
                    errors.append(
                        StructuralError(f"{t.name}", "pk-columns-exist",
                                        f"primary key column {pk_col!r} not in table")
                    )

        for fk in t.foreign_keys:
            if len(fk.columns) != len(fk.referenced_columns):
                errors.append(
                    StructuralError(f"{t.name} FK", "fk-arity",
                                    f"foreign key arity mismatch {fk.columns} vs "
                                    f"{fk.referenced_columns}")
                )
            for col in fk.columns:
                if not t.has_column(col):
                    errors.append(
                        StructuralError(f"{t.name} FK", "fk-local-columns-exist",
                                        f"foreign key column {col!r} not in table")
                    )
            ref = schema.table(fk.referenced_table)
            if ref is None:
                errors.append(
                    StructuralError(f"{t.name} FK", "fk-target-exists",
                                    f"unresolved reference {fk.referenced_table!r}")
                )
            else:
                for col in fk.referenced_columns:
                    if not ref.has_column(col):
                        errors.append(
                            StructuralError(
                                f"{t.name} FK", "fk-target-columns-exist",
                                f"referenced column {fk.referenced_table}.{col!r} "
                                f"does not exist")
                        )

    for fd in schema.fds:
        if not fd.lhs or not fd.rhs:
            errors.append(
                StructuralError("fd", "fd-non-empty", "FD with empty lhs or rhs")
            )
            continue
        if fd.scope is not None and schema.table(fd.scope) is None:
            errors.append(
                StructuralError(f"fd scope {fd.scope}", "fd-scope-exists",
                                f"FD scoped to unknown table {fd.scope!r}")
            )
            continue
        for a in fd.lhs | fd.rhs:
            if _resolve_attr(schema, a, fd.scope) is None:
                errors.append(
                    StructuralError(f"fd {sorted(fd.lhs)}->{sorted(fd.rhs)}",
                                    "fd-attrs-resolve",
                                    f"unresolved FD attribute {a!r}")
                )
        lo = {a.lower() for a in fd.lhs}
        ro = {a.lower() for a in fd.rhs}
        if lo & ro and not ro <= lo:
            errors.append(
                StructuralError(f"fd {sorted(fd.lhs)}->{sorted(fd.rhs)}",
                                "fd-overlap-only-if-trivial",
                                "lhs and rhs overlap but lhs does not cover rhs")
            )

    return errors


def ensure_valid(schema: Schema) -> Schema:
    """Return the schema unchanged, or raise SchemaInvalid."""
    errors = validate_schema(schema)
    if errors:
        raise SchemaInvalid(errors)
    return schema


def _fd_sort_key(fd: FunctionalDependency):
    return (
        (fd.scope or "").lower(),
        tuple(sorted(a.lower() for a in fd.lhs)),
        tuple(sorted(a.lower() for a in fd.rhs)),
    )


def _canonical_table(t: Table) -> Table:
    if not t.primary_key:
        cols = t.columns
    else:
        pk_lower = [p.lower() for p in t.primary_key]
        pk_cols = [t.column(p) for p in t.primary_key]
        rest = [c for c in t.columns if c.name.lower() not in pk_lower]
        cols = tuple([c for c in pk_cols if c is not None] + rest)
    fks = tuple(sorted(
        t.foreign_keys,
        key=lambda fk: (fk.referenced_table.lower(),
                        tuple(c.lower() for c in fk.columns)),
    ))
    return replace(t, columns=cols, foreign_keys=fks)


def canonicalize(schema: Schema) -> Schema:
    """Deterministic ordering: tables by name, PK columns first, FDs sorted.

    Idempotent, and preserves the set of tables, columns, keys, FKs and FDs.
    Requires a structurally valid schema.
    """
    ensure_valid(schema)
    tables = tuple(
        _canonical_table(t)
        for t in sorted(schema.tables, key=lambda t: t.name.lower())
    )
    fds = tuple(sorted(schema.fds, key=_fd_sort_key))
    return Schema(name=schema.name, tables=tables, fds=fds)
