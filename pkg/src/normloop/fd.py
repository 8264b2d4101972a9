"""Classical functional-dependency algorithms.

This is the deterministic ground truth behind verification and the split
engine behind normalization. Functions here are pure and case-sensitive:
callers hand in attribute names in a consistent casing (the verifier layer
casefolds schema names before calling in).

Relations are small by construction (hard cap of 16 attributes per table),
so the 2NF/3NF checks are defined by direct enumeration over attribute
subsets rather than by cover-based shortcuts: correctness beats asymptotics
for an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .model import Table

__all__ = [
    "ATTRIBUTE_LIMIT",
    "AttributeLimitExceeded",
    "DependencyViolation",
    "FD",
    "candidate_keys",
    "chase_lossless",
    "closure",
    "is_superkey",
    "minimal_cover",
    "partial_dependencies",
    "prime_attributes",
    "project_fds",
    "synthesize_3nf",
    "transitive_dependencies",
]

ATTRIBUTE_LIMIT = 16

# Plain (lhs, rhs) frozenset pairs; scope resolution happens upstream.
FD = tuple[frozenset[str], frozenset[str]]


class AttributeLimitExceeded(Exception):
    """Subset enumeration refused: more than ATTRIBUTE_LIMIT attributes."""


@dataclass(frozen=True)
class DependencyViolation:
    """A 2NF or 3NF defect: `dependent` hangs off `determinant` instead of a key.

    kind is PARTIAL when the determinant is a proper subset of the witness
    candidate key, TRANSITIVE otherwise.
    """

    kind: str  # PARTIAL | TRANSITIVE
    table: str
    determinant: frozenset[str]
    dependent: str
    witness_key: frozenset[str]

    def sort_key(self):
        return (self.table, tuple(sorted(self.determinant)), self.dependent)


def _nontrivial(fds: list[FD]) -> list[tuple[frozenset[str], frozenset[str]]]:
    out = []
    for lhs, rhs in fds:
        rest = rhs - lhs
        if lhs and rest:
            out.append((lhs, rest))
    return out


def closure(x: frozenset[str], fds: list[FD]) -> frozenset[str]:
    """Least fixpoint of x under the FDs: extensive, monotone, idempotent."""
    result = set(x)
    useful = _nontrivial(fds)
    changed = True
    while changed:
        changed = False
        remaining = []
        for lhs, rhs in useful:
            if lhs <= result:
                if not rhs <= result:
                    result |= rhs
                    changed = True
            else:
                remaining.append((lhs, rhs))
        useful = remaining
    return frozenset(result)


def _check_limit(n: int) -> None:
    if n > ATTRIBUTE_LIMIT:
        raise AttributeLimitExceeded(
            f"{n} attributes exceeds the enumeration cap of {ATTRIBUTE_LIMIT}"
        )


def _table_attrs(table: Table) -> frozenset[str]:
    return frozenset(c.name for c in table.columns)


def is_superkey(x: frozenset[str], table: Table, fds: list[FD]) -> bool:
    cols = _table_attrs(table)
    if not x <= cols:
        raise ValueError(f"attributes {sorted(x - cols)} are not columns of {table.name!r}")
    return cols <= closure(x, fds)


def candidate_keys(table: Table, fds: list[FD]) -> list[frozenset[str]]:
    """All minimal superkeys, sorted by (size, lexicographic attribute tuple).

    Breadth-first over subset sizes, seeded with the attributes that appear
    on no FD right-hand side (those belong to every key).
    """
    cols = _table_attrs(table)
    _check_limit(len(cols))
    if not cols:
        return []

    local = [(lhs & cols, rhs & cols) for lhs, rhs in _nontrivial(fds)]
    local = [(lhs, rhs) for lhs, rhs in local if lhs and rhs]
    core = cols - frozenset().union(*(rhs for _, rhs in local)) if local else cols

    if cols <= closure(core, local):
        return [frozenset(core)]

    extras = sorted(cols - core)
    keys: list[frozenset[str]] = []
    for size in range(1, len(extras) + 1):
        for combo in combinations(extras, size):
            cand = core | frozenset(combo)
            if any(k <= cand for k in keys):
                continue
            if cols <= closure(cand, local):
                keys.append(cand)
    return sorted(keys, key=lambda k: (len(k), tuple(sorted(k))))


def prime_attributes(table: Table, fds: list[FD]) -> frozenset[str]:
    """Union of all candidate keys."""
    keys = candidate_keys(table, fds)
    out: set[str] = set()
    for k in keys:
        out |= k
    return frozenset(out)


def _split_rhs(fds: list[FD]) -> list[tuple[frozenset[str], str]]:
    out = []
    for lhs, rhs in fds:
        for a in sorted(rhs):
            if a not in lhs:
                out.append((lhs, a))
    return out


def minimal_cover(fds: list[FD]) -> list[FD]:
    """Canonical cover: singleton RHS, no extraneous LHS attributes, no
    redundant FDs. Closure-equivalent to the input over every attribute set.

    Reduction order is fixed (sorted) so the result is deterministic.
    """
    work = sorted(set(_split_rhs(fds)), key=lambda f: (tuple(sorted(f[0])), f[1]))

    # Drop extraneous LHS attributes (w.r.t. the full current set).
    reduced: list[tuple[frozenset[str], str]] = []
    all_fds = [(lhs, frozenset({a})) for lhs, a in work]
    for lhs, a in work:
        lhs_min = set(lhs)
        for attr in sorted(lhs):
            if len(lhs_min) == 1:
                break
            trial = frozenset(lhs_min - {attr})
            if a in closure(trial, all_fds):
                lhs_min.discard(attr)
        reduced.append((frozenset(lhs_min), a))
    reduced = sorted(set(reduced), key=lambda f: (tuple(sorted(f[0])), f[1]))

    # Drop redundant FDs one at a time.
    kept = list(reduced)
    for fd_ in list(reduced):
        trial = [f for f in kept if f != fd_]
        if fd_[1] in closure(fd_[0], [(l, frozenset({a})) for l, a in trial]):
            kept = trial
    return [(lhs, frozenset({a})) for lhs, a in kept]


def project_fds(fds: list[FD], cols: frozenset[str]) -> list[FD]:
    """All nontrivial X -> A implied on `cols`, minimized via minimal_cover."""
    _check_limit(len(cols))
    attrs = sorted(cols)
    found: list[FD] = []
    for size in range(1, len(attrs) + 1):
        for combo in combinations(attrs, size):
            x = frozenset(combo)
            cl = closure(x, fds)
            for a in cols & cl:
                if a not in x:
                    found.append((x, frozenset({a})))
    return minimal_cover(found)


def _minimal_violation_pairs(
    table: Table, fds: list[FD]
) -> list[tuple[frozenset[str], str, bool, frozenset[str]]]:
    """Minimal (determinant, dependent) defect pairs for one table.

    A pair qualifies when the dependent is non-prime, sits in the closure of
    the determinant, and the determinant is not a superkey; only inclusion-
    minimal determinants per dependent are kept. The boolean marks whether
    the determinant is a proper subset of some candidate key (PARTIAL); the
    last element is the witness key used for reporting.
    """
    cols = _table_attrs(table)
    _check_limit(len(cols))
    keys = candidate_keys(table, fds)
    primes = frozenset().union(*keys) if keys else frozenset()
    local = [(lhs & cols, rhs & cols) for lhs, rhs in _nontrivial(fds)]
    local = [(lhs, rhs) for lhs, rhs in local if lhs and rhs]

    non_prime = sorted(cols - primes)
    if not non_prime:
        return []

    attrs = sorted(cols)
    out: list[tuple[frozenset[str], str, bool, frozenset[str]]] = []
    for a in non_prime:
        minimal: list[frozenset[str]] = []
        pool = [c for c in attrs if c != a]
        for size in range(1, len(pool) + 1):
            for combo in combinations(pool, size):
                x = frozenset(combo)
                if any(m <= x for m in minimal):
                    continue
                if a not in closure(x, local):
                    continue
                if cols <= closure(x, local):  # superkeys determine everything
                    continue
                minimal.append(x)
        for x in sorted(minimal, key=lambda m: (len(m), tuple(sorted(m)))):
            partial_keys = [k for k in keys if x < k]
            if partial_keys:
                out.append((x, a, True, partial_keys[0]))
            else:
                out.append((x, a, False, keys[0] if keys else frozenset()))
    return out


def partial_dependencies(table: Table, fds: list[FD]) -> list[DependencyViolation]:
    """2NF defects: non-prime attributes determined by a proper candidate-key
    subset. Deduplicated to minimal determinants per dependent attribute."""
    out = [
        DependencyViolation("PARTIAL", table.name, x, a, witness)
        for x, a, is_partial, witness in _minimal_violation_pairs(table, fds)
        if is_partial
    ]
    return sorted(out, key=DependencyViolation.sort_key)


def transitive_dependencies(table: Table, fds: list[FD]) -> list[DependencyViolation]:
    """3NF defects: nontrivial X -> A with X neither a superkey nor a proper
    key subset (those are 2NF's to report) and A non-prime."""
    out = [
        DependencyViolation("TRANSITIVE", table.name, x, a, witness)
        for x, a, is_partial, witness in _minimal_violation_pairs(table, fds)
        if not is_partial
    ]
    return sorted(out, key=DependencyViolation.sort_key)


def _unique_name(base: str, taken: set[str]) -> str:
    name = base
    n = 2
    while name.lower() in taken:
        name = f"{base}_{n}"
        n += 1
    taken.add(name.lower())
    return name


def synthesize_3nf(table: Table, fds: list[FD]) -> list[Table]:
    """Bernstein-style 3NF synthesis.

    Groups a minimal cover by determinant (one table per group, determinant
    as primary key), drops column-subsumed tables, and appends a key table
    when no group holds a candidate key of the input. The result is
    dependency-preserving and lossless, and every output table passes the
    partial/transitive checks; `chase_lossless` can confirm the join.
    """
    cols = _table_attrs(table)
    _check_limit(len(cols))
    local = [(lhs & cols, rhs & cols) for lhs, rhs in _nontrivial(fds)]
    local = [(lhs, rhs) for lhs, rhs in local if lhs and rhs]
    keys = candidate_keys(table, local)
    first_key = keys[0] if keys else cols

    def pk_tuple(pk: frozenset[str]) -> tuple[str, ...]:
        # Reuse the declared column order when the key is the declared PK,
        # so normal tables come back byte-identical.
        if table.primary_key and {p.lower() for p in table.primary_key} == {
            a.lower() for a in pk
        }:
            by_low = {a.lower(): a for a in pk}
            return tuple(by_low[p.lower()] for p in table.primary_key)
        return tuple(sorted(pk))

    cover = minimal_cover(local)
    groups: dict[frozenset[str], set[str]] = {}
    for lhs, rhs in cover:
        groups.setdefault(lhs, set()).update(rhs)

    if not groups:
        return [Table(name=table.name, columns=table.columns,
                      primary_key=pk_tuple(first_key) if cols else None,
                      foreign_keys=())]

    frags: list[tuple[frozenset[str], frozenset[str]]] = []  # (pk, columns)
    for lhs in sorted(groups, key=lambda s: (len(s), tuple(sorted(s)))):
        frags.append((lhs, lhs | frozenset(groups[lhs])))

    # Drop fragments whose columns another fragment subsumes (first wins).
    kept: list[tuple[frozenset[str], frozenset[str]]] = []
    for pk, fcols in frags:
        if any(fcols <= ocols for _, ocols in kept):
            continue
        kept = [(opk, ocols) for opk, ocols in kept if not ocols < fcols]
        kept.append((pk, fcols))

    if not any(any(k <= fcols for k in keys) for _, fcols in kept):
        kept.append((first_key, first_key))

    # The first fragment keyed by a superkey inherits the original table
    # name; at least one exists (the appended key table qualifies).
    by_name = {c.name: c for c in table.columns}
    col_order = {c.name: i for i, c in enumerate(table.columns)}
    taken: set[str] = set()
    named: list[Table] = []
    original_used = False
    for pk, fcols in kept:
        if not original_used and cols <= closure(pk, local):
            name = _unique_name(table.name, taken)
            original_used = True
        else:
            name = _unique_name(f"{table.name}_{'_'.join(sorted(pk))}", taken)
        pk_ordered = pk_tuple(pk)
        rest = sorted(fcols - pk, key=lambda c: col_order.get(c, 0))
        columns = tuple(by_name[c] for c in list(pk_ordered) + rest)
        named.append(Table(name=name, columns=columns,
                           primary_key=pk_ordered, foreign_keys=()))
    return named


def chase_lossless(
    tables: list[Table], universe: frozenset[str], fds: list[FD]
) -> bool:
    """Standard chase tableau: True iff the decomposition joins losslessly."""
    _check_limit(len(universe))
    attrs = sorted(universe)
    for t in tables:
        extra = _table_attrs(t) - universe
        if extra:
            raise ValueError(f"table {t.name!r} has attributes outside the universe: "
                             f"{sorted(extra)}")

    # Cell values: 0 = distinguished, (i+1) = subscript of row i.
    rows: list[dict[str, int]] = []
    for i, t in enumerate(tables):
        have = {c.name for c in t.columns}
        rows.append({a: 0 if a in have else i + 1 for a in attrs})

    useful = _nontrivial(fds)
    changed = True
    while changed:
        changed = False
        for lhs, rhs in useful:
            if not lhs <= universe or not rhs <= universe:
                continue
            for i in range(len(rows)):
                for j in range(i + 1, len(rows)):
                    if all(rows[i][a] == rows[j][a] for a in lhs):
                        for b in rhs:
                            vi, vj = rows[i][b], rows[j][b]
                            if vi == vj:
                                continue
                            lo, hi = min(vi, vj), max(vi, vj)
                            for row in rows:
                                if row[b] == hi:
                                    row[b] = lo
                            changed = True
    return any(all(v == 0 for v in row.values()) for row in rows)


def preserves_dependencies(tables: list[Table], fds: list[FD]) -> bool:
    """True iff each cover FD is derivable from the per-table projections."""
    projected: list[FD] = []
    for t in tables:
        projected.extend(project_fds(fds, _table_attrs(t)))
    for lhs, rhs in minimal_cover(fds):
        if not rhs <= closure(lhs, projected):
            return False
    return True
