"""SQL-DDL subset codec: CREATE TABLE statements plus annotation directives.

Grammar (the only statements the loop exchanges):

    CREATE TABLE name ( col_def {, col_def}
                        [, PRIMARY KEY (cols)]
                        {, FOREIGN KEY (cols) REFERENCES name (cols)} ) ;

Comment directives carry what SQL cannot express:

    -- @fd <table>: a, b -> c, d      functional dependency (table scope)
    -- @fd *: t.a -> t.b              schema-global functional dependency
    -- @multivalued <table>.<column>  non-atomic column marker
    -- @derived <table>.<column>: a, b

`parse_ddl` is total: every input yields a Schema or raises ParseError (or
SchemaInvalid when the text parses but breaks a model invariant). Unknown
data types are preserved verbatim (TEXT-kind) with a logged warning rather
than rejected, because model replies drift in type vocabulary.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass

from .model import (
    KNOWN_TYPE_KINDS,
    Column,
    ColumnAnnotation,
    DataType,
    ForeignKey,
    FunctionalDependency,
    Schema,
    Table,
    canonicalize,
    ensure_valid,
)

__all__ = [
    "DdlDocument",
    "ExtractionError",
    "ParseError",
    "emit_ddl",
    "extract_schema_block",
    "parse_ddl",
]

log = logging.getLogger(__name__)

_KEYWORDS = {"CREATE", "TABLE", "PRIMARY", "KEY", "FOREIGN", "REFERENCES", "NOT", "NULL"}
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")

_FD_DIRECTIVE = re.compile(
    r"^--\s*@fd\s+(\*|[A-Za-z_]\w*)\s*:\s*(.+?)\s*->\s*(.+?)\s*$")
_MV_DIRECTIVE = re.compile(
    r"^--\s*@multivalued\s+([A-Za-z_]\w*)\.([A-Za-z_]\w*)\s*$")
_DERIVED_DIRECTIVE = re.compile(
    r"^--\s*@derived\s+([A-Za-z_]\w*)\.([A-Za-z_]\w*)\s*:\s*(.+?)\s*$")


class ParseError(Exception):
    """Syntax error with a 1-based source position."""

    def __init__(self, line: int, column: int, message: str, expected: str = ""):
        self.line = line
        self.column = column
        self.message = message
        self.expected = expected
        loc = f"line {line}, column {column}: {message}"
        if expected:
            loc += f" (expected {expected})"
        super().__init__(loc)


class ExtractionError(Exception):
    """The reply contains no recognizable DDL block."""


@dataclass(frozen=True)
class DdlDocument:
    """A parsed source: original text, the schema, and its directives."""

    source_text: str
    schema: Schema
    annotations: tuple[str, ...]  # directive lines, as written


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT | KEYWORD | NUMBER | punctuation | EOF
    value: str
    line: int
    column: int


def _tokenize(text: str) -> tuple[list[_Token], list[tuple[int, str]]]:
    """Split into tokens, collecting directive comment lines separately."""
    tokens: list[_Token] = []
    directives: list[tuple[int, str]] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("--", i):
            end = text.find("\n", i)
            if end == -1:
                end = n
            comment = text[i:end].rstrip()
            if comment[2:].lstrip().startswith("@"):
                directives.append((line, comment))
            col += end - i
            i = end
            continue
        if ch in "(),;":
            kind = {"(": "LPAREN", ")": "RPAREN", ",": "COMMA", ";": "SEMI"}[ch]
            tokens.append(_Token(kind, ch, line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit():
            m = re.match(r"\d+", text[i:])
            assert m is not None
            tokens.append(_Token("NUMBER", m.group(0), line, col))
            i += len(m.group(0))
            col += len(m.group(0))
            continue
        m = _IDENT_RE.match(text, i)
        if m:
            word = m.group(0)
            kind = "KEYWORD" if word.upper() in _KEYWORDS else "IDENT"
            tokens.append(_Token(kind, word, line, col))
            i += len(word)
            col += len(word)
            continue
        raise ParseError(line, col, f"unexpected character {ch!r}")
    tokens.append(_Token("EOF", "", line, col))
    return tokens, directives


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def error(self, expected: str) -> ParseError:
        tok = self.peek()
        got = repr(tok.value) if tok.kind != "EOF" else "end of input"
        return ParseError(tok.line, tok.column, f"unexpected {got}", expected)

    def expect_kind(self, kind: str, expected: str) -> _Token:
        if self.peek().kind != kind:
            raise self.error(expected)
        return self.advance()

    def expect_keyword(self, word: str) -> _Token:
        tok = self.peek()
        if tok.kind != "KEYWORD" or tok.value.upper() != word:
            raise self.error(f"'{word}'")
        return self.advance()

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "KEYWORD" and tok.value.upper() == word

    def ident(self, what: str) -> str:
        return self.expect_kind("IDENT", what).value

    def ident_list(self) -> list[str]:
        self.expect_kind("LPAREN", "'('")
        names = [self.ident("column name")]
        while self.peek().kind == "COMMA":
            self.advance()
            names.append(self.ident("column name"))
        self.expect_kind("RPAREN", "')'")
        return names

    def data_type(self) -> DataType:
        tok = self.peek()
        if tok.kind not in ("IDENT", "KEYWORD"):
            raise self.error("a data type")
        self.advance()
        base = tok.value
        params: list[int] = []
        raw_params = ""
        if self.peek().kind == "LPAREN":
            self.advance()
            parts = [self.expect_kind("NUMBER", "a numeric type parameter").value]
            while self.peek().kind == "COMMA":
                self.advance()
                parts.append(self.expect_kind("NUMBER", "a numeric type parameter").value)
            self.expect_kind("RPAREN", "')'")
            params = [int(p) for p in parts]
            raw_params = f"({','.join(parts)})"

        kind = base.upper()
        if kind in KNOWN_TYPE_KINDS:
            lo, hi = {"DECIMAL": (1, 2), "VARCHAR": (1, 1)}.get(kind, (0, 0))
            if lo <= len(params) <= hi:
                return DataType(kind, params=tuple(params))
        # Vocabulary drift (JSONB, bare DECIMAL, INT(11), ...) is preserved
        # verbatim instead of rejected, so parsing stays total.
        spelled = base + raw_params
        log.warning("unknown data type %r preserved verbatim", spelled)
        return DataType("TEXT", raw=spelled)

    def table_stmt(self) -> Table:
        self.expect_keyword("CREATE")
        self.expect_keyword("TABLE")
        name = self.ident("table name")
        self.expect_kind("LPAREN", "'('")

        columns: list[Column] = []
        primary_key: tuple[str, ...] | None = None
        fks: list[ForeignKey] = []
        while True:
            if self.at_keyword("PRIMARY"):
                tok = self.advance()
                self.expect_keyword("KEY")
                if primary_key is not None:
                    raise ParseError(tok.line, tok.column,
                                     "duplicate PRIMARY KEY clause")
                primary_key = tuple(self.ident_list())
            elif self.at_keyword("FOREIGN"):
                self.advance()
                self.expect_keyword("KEY")
                local = self.ident_list()
                self.expect_keyword("REFERENCES")
                target = self.ident("referenced table name")
                remote = self.ident_list()
                fks.append(ForeignKey(tuple(local), target, tuple(remote)))
            else:
                cname = self.ident("a column definition, PRIMARY KEY, or FOREIGN KEY")
                dtype = self.data_type()
                nullable = True
                if self.at_keyword("NOT"):
                    self.advance()
                    self.expect_keyword("NULL")
                    nullable = False
                elif self.at_keyword("NULL"):
                    self.advance()
                columns.append(Column(cname, dtype, nullable=nullable))
            if self.peek().kind == "COMMA":
                self.advance()
                continue
            break
        self.expect_kind("RPAREN", "',' or ')'")
        self.expect_kind("SEMI", "';'")
        return Table(name=name, columns=tuple(columns),
                     primary_key=primary_key, foreign_keys=tuple(fks))

    def script(self) -> list[Table]:
        tables = []
        while self.peek().kind != "EOF":
            tables.append(self.table_stmt())
        return tables


def _split_attrs(text: str, line: int) -> frozenset[str]:
    attrs = []
    for part in text.split(","):
        part = part.strip()
        if not part or not re.fullmatch(r"[A-Za-z_]\w*(\.[A-Za-z_]\w*)?", part):
            raise ParseError(line, 1, f"bad attribute {part!r} in directive")
        attrs.append(part)
    return frozenset(attrs)


def _apply_directives(
    tables: list[Table], directives: list[tuple[int, str]]
) -> tuple[list[Table], list[FunctionalDependency]]:
    fds: list[FunctionalDependency] = []
    # (table_lower, column_lower) -> annotations to add
    extra: dict[tuple[str, str], list[ColumnAnnotation]] = {}
    by_name = {t.name.lower(): t for t in tables}

    def locate(tname: str, cname: str, line: int) -> tuple[str, str]:
        t = by_name.get(tname.lower())
        if t is None or not t.has_column(cname):
            raise ParseError(line, 1,
                             f"directive targets unknown column {tname}.{cname}")
        return (tname.lower(), cname.lower())

    for line, text in directives:
        m = _FD_DIRECTIVE.match(text)
        if m:
            scope = None if m.group(1) == "*" else m.group(1)
            fds.append(FunctionalDependency(
                lhs=_split_attrs(m.group(2), line),
                rhs=_split_attrs(m.group(3), line),
                scope=scope,
            ))
            continue
        m = _MV_DIRECTIVE.match(text)
        if m:
            key = locate(m.group(1), m.group(2), line)
            extra.setdefault(key, []).append(ColumnAnnotation("MULTIVALUED"))
            continue
        m = _DERIVED_DIRECTIVE.match(text)
        if m:
            key = locate(m.group(1), m.group(2), line)
            attrs = tuple(sorted(_split_attrs(m.group(3), line)))
            extra.setdefault(key, []).append(ColumnAnnotation("DERIVED_FROM", attrs))
            continue
        raise ParseError(line, 1, f"unrecognized directive {text!r}",
                         "@fd, @multivalued, or @derived")

    if not extra:
        return tables, fds
    out = []
    for t in tables:
        cols = []
        for c in t.columns:
            added = extra.get((t.name.lower(), c.name.lower()))
            if added:
                cols.append(Column(c.name, c.data_type, c.nullable,
                                   c.annotations | frozenset(added)))
            else:
                cols.append(c)
        out.append(Table(t.name, tuple(cols), t.primary_key, t.foreign_keys))
    return out, fds


def parse_ddl(text: str, schema_name: str = "schema") -> Schema:
    """Parse DDL text into a validated Schema.

    Raises ParseError on malformed syntax and SchemaInvalid when the parsed
    schema violates model invariants.
    """
    tokens, directives = _tokenize(text)
    tables = _Parser(tokens).script()
    tables, fds = _apply_directives(tables, directives)
    return ensure_valid(Schema(name=schema_name, tables=tuple(tables), fds=tuple(fds)))


def parse_document(text: str, schema_name: str = "schema") -> DdlDocument:
    """Like parse_ddl but keeps the source and raw directive lines."""
    tokens, directives = _tokenize(text)
    tables = _Parser(tokens).script()
    tables, fds = _apply_directives(tables, directives)
    schema = ensure_valid(
        Schema(name=schema_name, tables=tuple(tables), fds=tuple(fds)))
    return DdlDocument(source_text=text, schema=schema,
                       annotations=tuple(d for _, d in directives))


def _emit_column(col: Column) -> str:
    parts = [col.name, col.data_type.render()]
    if not col.nullable:
        parts.append("NOT NULL")
    return " ".join(parts)


def emit_ddl(schema: Schema) -> str:
    """Deterministic DDL for a valid schema, in canonical order.

    parse_ddl(emit_ddl(s)) equals canonicalize(s); emitting twice yields
    byte-identical text.
    """
    schema = canonicalize(schema)
    chunks: list[str] = []
    for t in schema.tables:
        lines = [f"CREATE TABLE {t.name} ("]
        items = [f"    {_emit_column(c)}" for c in t.columns]
        if t.primary_key:
            items.append(f"    PRIMARY KEY ({', '.join(t.primary_key)})")
        for fk in t.foreign_keys:
            items.append(
                f"    FOREIGN KEY ({', '.join(fk.columns)}) "
                f"REFERENCES {fk.referenced_table} ({', '.join(fk.referenced_columns)})"
            )
        lines.append(",\n".join(items))
        lines.append(");")
        chunks.append("\n".join(lines))

    directives: list[str] = []
    for fd in schema.fds:
        scope = fd.scope if fd.scope is not None else "*"
        directives.append(
            f"-- @fd {scope}: {', '.join(sorted(fd.lhs))} -> {', '.join(sorted(fd.rhs))}"
        )
    mv_lines = []
    derived_lines = []
    for t in schema.tables:
        for c in t.columns:
            for ann in sorted(c.annotations, key=lambda a: (a.kind, a.attrs)):
                if ann.kind == "MULTIVALUED":
                    mv_lines.append(f"-- @multivalued {t.name}.{c.name}")
                elif ann.kind == "DERIVED_FROM":
                    derived_lines.append(
                        f"-- @derived {t.name}.{c.name}: {', '.join(ann.attrs)}")
    directives.extend(sorted(mv_lines))
    directives.extend(sorted(derived_lines))
    if directives:
        chunks.append("\n".join(directives))
    return "\n\n".join(chunks) + "\n"


_FENCE_RE = re.compile(r"```[^\n`]*\n(.*?)```", re.DOTALL)


def extract_schema_block(llm_reply: str) -> str:
    """Pull the DDL out of a free-text model reply.

    Returns the contents of the first fenced code block; with no fence,
    falls back to the longest contiguous run of DDL lines (lines opening a
    CREATE TABLE statement or a `--` comment, plus the lines inside an
    unclosed statement). Raises ExtractionError when neither exists.
    """
    m = _FENCE_RE.search(llm_reply)
    if m:
        return m.group(1)

    lines = llm_reply.splitlines()
    best: list[str] = []
    current: list[str] = []
    depth = 0

    def flush():
        nonlocal best, current, depth
        if len("\n".join(current).strip()) > len("\n".join(best).strip()):
            best = current
        current = []
        depth = 0

    for raw in lines:
        stripped = raw.strip()
        starts = stripped.upper().startswith("CREATE TABLE") or stripped.startswith("--")
        if depth > 0 or starts:
            current.append(raw)
            depth += raw.count("(") - raw.count(")")
            depth = max(depth, 0)
        elif not stripped and current:
            current.append(raw)  # blank lines separate statements, not runs
        elif current:
            flush()
    flush()

    text = "\n".join(best).strip()
    if not text or "CREATE TABLE" not in text.upper():
        raise ExtractionError("no fenced code block or CREATE TABLE run in reply")
    return text + "\n"
