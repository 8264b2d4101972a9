"""Structured interchange: the Schema model as JSON, field for field.

Field names are part of the wire contract: name, tables, columns,
data_type, nullable, annotations, primary_key, foreign_keys, fds, lhs,
rhs, scope. Dumps are deterministic (stable key order, sorted sets) so
that identical schemas serialize to identical bytes.
"""

from __future__ import annotations

import json
from typing import Any

from .model import (
    Column,
    ColumnAnnotation,
    DataType,
    ForeignKey,
    FunctionalDependency,
    Schema,
    Table,
)

__all__ = ["schema_to_dict", "schema_from_dict", "dumps_schema", "loads_schema"]


def _annotation_to_dict(ann: ColumnAnnotation) -> dict[str, Any]:
    if ann.kind == "DERIVED_FROM":
        return {"kind": ann.kind, "attrs": list(ann.attrs)}
    return {"kind": ann.kind}


def schema_to_dict(schema: Schema) -> dict[str, Any]:
    return {
        "name": schema.name,
        "tables": [
            {
                "name": t.name,
                "columns": [
                    {
                        "name": c.name,
                        "data_type": c.data_type.render(),
                        "nullable": c.nullable,
                        "annotations": [
                            _annotation_to_dict(a)
                            for a in sorted(c.annotations, key=lambda a: (a.kind, a.attrs))
                        ],
                    }
                    for c in t.columns
                ],
                "primary_key": list(t.primary_key) if t.primary_key is not None else None,
                "foreign_keys": [
                    {
                        "columns": list(fk.columns),
                        "referenced_table": fk.referenced_table,
                        "referenced_columns": list(fk.referenced_columns),
                    }
                    for fk in t.foreign_keys
                ],
            }
            for t in schema.tables
        ],
        "fds": [
            {"lhs": sorted(fd.lhs), "rhs": sorted(fd.rhs), "scope": fd.scope}
            for fd in schema.fds
        ],
    }


def _parse_type(text: str) -> DataType:
    # Reuse the DDL type rules without a parser round-trip for common shapes.
    from .model import KNOWN_TYPE_KINDS

    base, sep, rest = text.partition("(")
    kind = base.strip().upper()
    if not sep:
        if kind in KNOWN_TYPE_KINDS and kind not in ("DECIMAL", "VARCHAR"):
            return DataType(kind)
        return DataType("TEXT", raw=text)
    try:
        params = tuple(int(p.strip()) for p in rest.rstrip(") ").split(","))
    except ValueError:
        return DataType("TEXT", raw=text)
    arity_ok = (kind == "VARCHAR" and len(params) == 1) or (
        kind == "DECIMAL" and len(params) in (1, 2))
    if kind in KNOWN_TYPE_KINDS and arity_ok:
        return DataType(kind, params=params)
    return DataType("TEXT", raw=text)


def schema_from_dict(data: dict[str, Any]) -> Schema:
    tables = []
    for t in data.get("tables", []):
        columns = []
        for c in t.get("columns", []):
            anns = frozenset(
                ColumnAnnotation(a["kind"], tuple(a.get("attrs", ())))
                for a in c.get("annotations", [])
            )
            columns.append(
                Column(
                    name=c["name"],
                    data_type=_parse_type(c["data_type"]),
                    nullable=bool(c.get("nullable", True)),
                    annotations=anns,
                )
            )
        pk = t.get("primary_key")
        fks = tuple(
            ForeignKey(
                columns=tuple(fk["columns"]),
                referenced_table=fk["referenced_table"],
                referenced_columns=tuple(fk["referenced_columns"]),
            )
            for fk in t.get("foreign_keys", [])
        )
        tables.append(
            Table(
                name=t["name"],
                columns=tuple(columns),
                primary_key=tuple(pk) if pk is not None else None,
                foreign_keys=fks,
            )
        )
    fds = tuple(
        FunctionalDependency(
            lhs=frozenset(fd["lhs"]), rhs=frozenset(fd["rhs"]), scope=fd.get("scope")
        )
        for fd in data.get("fds", [])
    )
    return Schema(name=data.get("name", "schema"), tables=tuple(tables), fds=fds)


def dumps_schema(schema: Schema) -> str:
    return json.dumps(schema_to_dict(schema), indent=2) + "\n"


def loads_schema(text: str) -> Schema:
    return schema_from_dict(json.loads(text))
