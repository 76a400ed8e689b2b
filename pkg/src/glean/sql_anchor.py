"""SQL-subset parser, simple-query classifier, gold-SQL execution bridge,
denotation comparison, and the oracle accounting report.

Execution always delegates to the embedded SQLite engine; the module's own
WHERE evaluator exists only to extract matching row ids for simple queries,
and it reproduces the engine's NUMERIC-affinity semantics exactly (numeric
conversion of well-formed literals, class ordering number < text, binary
text collation, ASCII-case-insensitive LIKE) so the two routes agree.
"""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass, field

from .errors import GleanError, SqlSyntaxError
from .table_core import GroundingConfig, DEFAULT_GROUNDING, Table, normalize, values_match

AGGREGATES = ("COUNT", "SUM", "AVG", "MIN", "MAX")

_KEYWORDS = {
    "select", "from", "where", "and", "or", "not", "in", "like", "between",
    "group", "order", "by", "asc", "desc", "limit", "distinct", "join",
    "union", "case", "exists", "having", "as", "offset", "intersect",
    "except", "is", "null",
    "count", "sum", "avg", "min", "max",
}

_UNSUPPORTED_KEYWORDS = {
    "join", "union", "case", "exists", "having", "intersect", "except",
    "distinct", "offset", "as", "is", "null",
}


class UnknownColumn(GleanError):
    pass


class _Unsupported(Exception):
    """Internal: query is beyond the modeled subset but may still execute."""


# --------------------------------------------------------------------------
# lexer
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Tok:
    kind: str  # ident | kw | num | str | op | punct | eof
    value: object
    pos: int


_NUM_RE = re.compile(r"\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+")
_IDENT_RE = re.compile(r"[A-Za-z_]\w*")


def _lex(raw: str) -> list[_Tok]:
    toks: list[_Tok] = []
    i = 0
    n = len(raw)
    while i < n:
        ch = raw[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise SqlSyntaxError(i, "unterminated string literal")
                if raw[j] == "'":
                    if j + 1 < n and raw[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(raw[j])
                j += 1
            toks.append(_Tok("str", "".join(buf), i))
            i = j + 1
            continue
        if ch == '"':
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise SqlSyntaxError(i, "unterminated quoted identifier")
                if raw[j] == '"':
                    if j + 1 < n and raw[j + 1] == '"':
                        buf.append('"')
                        j += 2
                        continue
                    break
                buf.append(raw[j])
                j += 1
            toks.append(_Tok("ident", "".join(buf), i))
            i = j + 1
            continue
        m = _NUM_RE.match(raw, i)
        if m and (ch.isdigit() or (ch == "." and m.end() > i + 1)):
            text = m.group(0)
            value = int(text) if re.fullmatch(r"\d+", text) else float(text)
            toks.append(_Tok("num", value, i))
            i = m.end()
            continue
        m = _IDENT_RE.match(raw, i)
        if m:
            word = m.group(0)
            kind = "kw" if word.lower() in _KEYWORDS else "ident"
            toks.append(_Tok(kind, word.lower() if kind == "kw" else word, i))
            i = m.end()
            continue
        for op in ("<=", ">=", "!=", "<>"):
            if raw.startswith(op, i):
                toks.append(_Tok("op", "!=" if op == "<>" else op, i))
                i += 2
                break
        else:
            if ch in "=<>":
                toks.append(_Tok("op", ch, i))
                i += 1
            elif ch in "(),*;+-.":
                # a bare '.' is a qualified-name dot; the parser flags those
                # as beyond the subset rather than failing the lex
                toks.append(_Tok("punct", ch, i))
                i += 1
            else:
                raise SqlSyntaxError(i, f"illegal character {ch!r}")
    toks.append(_Tok("eof", None, n))
    return toks


# --------------------------------------------------------------------------
# AST
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Star:
    def to_sql(self) -> str:
        return "*"


@dataclass(frozen=True)
class ColumnRef:
    name: str

    def to_sql(self) -> str:
        return '"' + self.name.replace('"', '""') + '"'


@dataclass(frozen=True)
class Aggregate:
    func: str  # COUNT | SUM | AVG | MIN | MAX
    arg: ColumnRef | Star

    def to_sql(self) -> str:
        return f"{self.func}({self.arg.to_sql()})"


@dataclass(frozen=True)
class Literal:
    value: object  # int | float | str
    is_string: bool

    def to_sql(self) -> str:
        if self.is_string:
            return "'" + str(self.value).replace("'", "''") + "'"
        return repr(self.value)


@dataclass(frozen=True)
class Comparison:
    op: str  # = != < <= > >=
    left: object
    right: object

    def to_sql(self) -> str:
        return f"{self.left.to_sql()} {self.op} {self.right.to_sql()}"


@dataclass(frozen=True)
class LikePred:
    operand: object
    pattern: Literal
    negated: bool = False

    def to_sql(self) -> str:
        neg = "NOT " if self.negated else ""
        return f"{self.operand.to_sql()} {neg}LIKE {self.pattern.to_sql()}"


@dataclass(frozen=True)
class InPred:
    operand: object
    values: tuple[Literal, ...]
    negated: bool = False

    def to_sql(self) -> str:
        neg = "NOT " if self.negated else ""
        inner = ", ".join(v.to_sql() for v in self.values)
        return f"{self.operand.to_sql()} {neg}IN ({inner})"


@dataclass(frozen=True)
class BetweenPred:
    operand: object
    low: Literal
    high: Literal
    negated: bool = False

    def to_sql(self) -> str:
        neg = "NOT " if self.negated else ""
        return f"{self.operand.to_sql()} {neg}BETWEEN {self.low.to_sql()} AND {self.high.to_sql()}"


@dataclass(frozen=True)
class NotExpr:
    operand: object

    def to_sql(self) -> str:
        return f"NOT ({self.operand.to_sql()})"


@dataclass(frozen=True)
class BoolExpr:
    op: str  # AND | OR
    left: object
    right: object

    def to_sql(self) -> str:
        return f"({self.left.to_sql()} {self.op} {self.right.to_sql()})"


@dataclass(frozen=True)
class SqlQuery:
    raw: str = field(compare=False)
    select_items: tuple = ()
    from_table: str | None = None
    where: object = None
    group_by: tuple[ColumnRef, ...] = ()
    order_by: tuple[tuple[ColumnRef, str], ...] = ()
    limit: int | None = None
    complex_opaque: bool = False
    opaque_reason: str = field(default="", compare=False)

    def to_sql(self) -> str:
        """Canonical spelling; parsing it again yields an equal AST."""
        if self.complex_opaque:
            return self.raw
        parts = ["SELECT", ", ".join(it.to_sql() for it in self.select_items)]
        parts += ["FROM", '"' + (self.from_table or "t").replace('"', '""') + '"']
        if self.where is not None:
            parts += ["WHERE", self.where.to_sql()]
        if self.group_by:
            parts += ["GROUP BY", ", ".join(c.to_sql() for c in self.group_by)]
        if self.order_by:
            parts += ["ORDER BY", ", ".join(f"{c.to_sql()} {d}" for c, d in self.order_by)]
        if self.limit is not None:
            parts += ["LIMIT", str(self.limit)]
        return " ".join(parts)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

class _Parser:
    def __init__(self, toks: list[_Tok]):
        self.toks = toks
        self.i = 0

    def cur(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        tok = self.toks[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def accept_kw(self, word: str) -> bool:
        if self.cur().kind == "kw" and self.cur().value == word:
            self.advance()
            return True
        return False

    def expect_kw(self, word: str):
        if not self.accept_kw(word):
            raise _Unsupported(f"expected {word.upper()} at offset {self.cur().pos}")

    def accept_punct(self, ch: str) -> bool:
        if self.cur().kind == "punct" and self.cur().value == ch:
            self.advance()
            return True
        return False

    def guard(self):
        tok = self.cur()
        if tok.kind == "kw" and tok.value in _UNSUPPORTED_KEYWORDS:
            raise _Unsupported(f"{str(tok.value).upper()} is outside the subset")

    def parse_query(self) -> SqlQuery:
        self.expect_kw("select")
        self.guard()
        items = self.parse_select_items()
        self.expect_kw("from")
        table = self.parse_table_ref()
        where = None
        if self.accept_kw("where"):
            where = self.parse_or()
        group_by: tuple = ()
        if self.accept_kw("group"):
            self.expect_kw("by")
            group_by = tuple(self.parse_column_list())
        order_by = []
        if self.accept_kw("order"):
            self.expect_kw("by")
            while True:
                col = self.parse_column()
                direction = "ASC"
                if self.accept_kw("asc"):
                    direction = "ASC"
                elif self.accept_kw("desc"):
                    direction = "DESC"
                order_by.append((col, direction))
                if not self.accept_punct(","):
                    break
        limit = None
        if self.accept_kw("limit"):
            tok = self.advance()
            if tok.kind != "num" or not isinstance(tok.value, int):
                raise _Unsupported("LIMIT expects an integer")
            limit = tok.value
        self.accept_punct(";")
        if self.cur().kind != "eof":
            raise _Unsupported(f"trailing tokens at offset {self.cur().pos}")
        return SqlQuery(
            raw="",
            select_items=tuple(items),
            from_table=table,
            where=where,
            group_by=group_by,
            order_by=tuple(order_by),
            limit=limit,
        )

    def parse_select_items(self) -> list:
        items = []
        while True:
            self.guard()
            tok = self.cur()
            if tok.kind == "punct" and tok.value == "*":
                self.advance()
                items.append(Star())
            elif tok.kind == "kw" and tok.value in ("count", "sum", "avg", "min", "max"):
                self.advance()
                if not self.accept_punct("("):
                    raise _Unsupported("aggregate without parentheses")
                if self.accept_punct("*"):
                    arg: ColumnRef | Star = Star()
                else:
                    self.guard()
                    arg = self.parse_column()
                if not self.accept_punct(")"):
                    raise _Unsupported("unclosed aggregate")
                items.append(Aggregate(str(tok.value).upper(), arg))
            else:
                items.append(self.parse_column())
            if not self.accept_punct(","):
                return items

    def parse_table_ref(self) -> str:
        self.guard()
        tok = self.advance()
        if tok.kind != "ident":
            raise _Unsupported(f"unsupported FROM clause at offset {tok.pos}")
        if self.accept_punct(","):
            raise _Unsupported("multiple FROM tables")
        self.guard()
        return str(tok.value)

    def parse_column(self) -> ColumnRef:
        self.guard()
        tok = self.advance()
        if tok.kind != "ident":
            raise _Unsupported(f"expected column name at offset {tok.pos}")
        return ColumnRef(str(tok.value))

    def parse_column_list(self) -> list[ColumnRef]:
        cols = [self.parse_column()]
        while self.accept_punct(","):
            cols.append(self.parse_column())
        return cols

    def parse_or(self):
        node = self.parse_and()
        while self.accept_kw("or"):
            node = BoolExpr("OR", node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_not()
        while self.accept_kw("and"):
            node = BoolExpr("AND", node, self.parse_not())
        return node

    def parse_not(self):
        if self.accept_kw("not"):
            return NotExpr(self.parse_not())
        return self.parse_atom()

    def parse_atom(self):
        if self.accept_punct("("):
            if self.cur().kind == "kw" and self.cur().value == "select":
                raise _Unsupported("subqueries are outside the subset")
            node = self.parse_or()
            if not self.accept_punct(")"):
                raise _Unsupported("unclosed parenthesis in WHERE")
            return node
        operand = self.parse_operand()
        negated = self.accept_kw("not")
        if self.accept_kw("like"):
            pat = self.parse_literal()
            if not pat.is_string:
                raise _Unsupported("LIKE expects a string pattern")
            return LikePred(operand, pat, negated)
        if self.accept_kw("in"):
            if not self.accept_punct("("):
                raise _Unsupported("IN expects a value list")
            if self.cur().kind == "kw" and self.cur().value == "select":
                raise _Unsupported("subqueries are outside the subset")
            values = [self.parse_literal()]
            while self.accept_punct(","):
                values.append(self.parse_literal())
            if not self.accept_punct(")"):
                raise _Unsupported("unclosed IN list")
            return InPred(operand, tuple(values), negated)
        if self.accept_kw("between"):
            low = self.parse_literal()
            self.expect_kw("and")
            high = self.parse_literal()
            return BetweenPred(operand, low, high, negated)
        if negated:
            raise _Unsupported("NOT without LIKE/IN/BETWEEN")
        tok = self.advance()
        if tok.kind != "op":
            raise _Unsupported(f"expected comparison operator at offset {tok.pos}")
        right = self.parse_operand()
        return Comparison(str(tok.value), operand, right)

    def parse_operand(self):
        self.guard()
        tok = self.cur()
        if tok.kind == "ident":
            self.advance()
            if self.accept_punct("("):
                raise _Unsupported("function calls in WHERE are outside the subset")
            return ColumnRef(str(tok.value))
        return self.parse_literal()

    def parse_literal(self) -> Literal:
        self.guard()
        tok = self.advance()
        if tok.kind == "punct" and tok.value == "-":
            num = self.advance()
            if num.kind != "num":
                raise _Unsupported("expected number after unary minus")
            return Literal(-num.value, False)
        if tok.kind == "punct" and tok.value == "+":
            num = self.advance()
            if num.kind != "num":
                raise _Unsupported("expected number after unary plus")
            return Literal(num.value, False)
        if tok.kind == "num":
            return Literal(tok.value, False)
        if tok.kind == "str":
            return Literal(str(tok.value), True)
        raise _Unsupported(f"expected literal at offset {tok.pos}")


def parse_sql(raw: str) -> SqlQuery:
    """Parse into the subset AST.

    Queries outside the subset (joins, subqueries, aggregal modifiers, ...)
    come back flagged complex-opaque with raw preserved for the execution
    bridge. Only inputs that are not a SELECT at all raise SqlSyntaxError.
    """
    toks = _lex(raw)
    first = toks[0]
    if not (first.kind == "kw" and first.value == "select"):
        raise SqlSyntaxError(first.pos, "statement must start with SELECT")
    try:
        q = _Parser(toks).parse_query()
    except _Unsupported as e:
        return SqlQuery(raw=raw, complex_opaque=True, opaque_reason=str(e))
    return SqlQuery(
        raw=raw,
        select_items=q.select_items,
        from_table=q.from_table,
        where=q.where,
        group_by=q.group_by,
        order_by=q.order_by,
        limit=q.limit,
    )


def classify_simple(q: SqlQuery) -> bool:
    """Plain column/star projection, no grouping, single table, inside the
    subset. ORDER BY and LIMIT are permitted: they do not affect which rows
    the WHERE clause selects."""
    if q.complex_opaque or q.group_by:
        return False
    return all(isinstance(it, (ColumnRef, Star)) for it in q.select_items)


# --------------------------------------------------------------------------
# engine-equivalent value model
# --------------------------------------------------------------------------

_SQLITE_NUM_RE = re.compile(r"\s*[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?\s*")
_INT_RE = re.compile(r"\s*[+-]?\d+\s*")
_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


def sqlite_value(raw: str):
    """NUMERIC-affinity conversion of a text value, mirroring the engine:
    well-formed numeric literals become int (or float when they cannot be
    represented exactly as a 64-bit integer); everything else stays text."""
    if _INT_RE.fullmatch(raw):
        v = int(raw)
        if _I64_MIN <= v <= _I64_MAX:
            return v
        return float(raw)
    if _SQLITE_NUM_RE.fullmatch(raw):
        f = float(raw)
        if f == int(f) and _I64_MIN <= f < 2**63:
            return int(f)
        return f
    return raw


def _is_num(v) -> bool:
    return isinstance(v, (int, float))


def _value_to_text(v) -> str:
    if isinstance(v, bool):  # never produced, guard anyway
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return "%.15g" % v
    return v


_ASCII_LOWER = str.maketrans({chr(c): chr(c + 32) for c in range(ord("A"), ord("Z") + 1)})


def _like_match(text: str, pattern: str) -> bool:
    # ASCII-only case folding, matching the engine's default LIKE
    regex = []
    for ch in pattern.translate(_ASCII_LOWER):
        if ch == "%":
            regex.append(".*")
        elif ch == "_":
            regex.append(".")
        else:
            regex.append(re.escape(ch))
    p = "".join(regex)
    return re.fullmatch(p, text.translate(_ASCII_LOWER), flags=re.DOTALL) is not None


class _RowEvaluator:
    """Evaluates a WHERE tree against one table row with engine semantics."""

    def __init__(self, t: Table):
        self.table = t
        self.header_index = {h.casefold(): j for j, h in enumerate(t.headers)}
        self.mixed_comparisons = 0

    def column_index(self, name: str) -> int:
        m = re.fullmatch(r"[cC](\d+)", name)
        if m:
            j = int(m.group(1)) - 1
            if 0 <= j < self.table.n_cols:
                return j
        j = self.header_index.get(name.casefold())
        if j is None:
            raise UnknownColumn(f"no such column: {name}")
        return j

    def operand_value(self, node, row: tuple):
        if isinstance(node, ColumnRef):
            return sqlite_value(row[self.column_index(node.name)].raw), True
        if isinstance(node, Literal):
            return node.value, False
        raise UnknownColumn(f"unsupported operand {node!r}")

    def compare(self, op: str, lv, l_col: bool, rv, r_col: bool) -> bool:
        # text operand facing a numeric-affinity column gets converted
        if l_col and not r_col and isinstance(rv, str):
            rv = sqlite_value(rv)
        if r_col and not l_col and isinstance(lv, str):
            lv = sqlite_value(lv)
        ln, rn = _is_num(lv), _is_num(rv)
        if ln != rn:
            self.mixed_comparisons += 1
            # class ordering: numbers sort before text, never equal
            if op == "=":
                return False
            if op == "!=":
                return True
            left_smaller = ln
            if op in ("<", "<="):
                return left_smaller
            return not left_smaller
        if op == "=":
            return lv == rv
        if op == "!=":
            return lv != rv
        if op == "<":
            return lv < rv
        if op == "<=":
            return lv <= rv
        if op == ">":
            return lv > rv
        return lv >= rv

    def eval(self, node, row: tuple) -> bool:
        if isinstance(node, BoolExpr):
            if node.op == "AND":
                return self.eval(node.left, row) and self.eval(node.right, row)
            return self.eval(node.left, row) or self.eval(node.right, row)
        if isinstance(node, NotExpr):
            return not self.eval(node.operand, row)
        if isinstance(node, Comparison):
            lv, l_col = self.operand_value(node.left, row)
            rv, r_col = self.operand_value(node.right, row)
            return self.compare(node.op, lv, l_col, rv, r_col)
        if isinstance(node, LikePred):
            v, _ = self.operand_value(node.operand, row)
            hit = _like_match(_value_to_text(v), str(node.pattern.value))
            return hit != node.negated
        if isinstance(node, InPred):
            v, is_col = self.operand_value(node.operand, row)
            hit = any(
                self.compare("=", v, is_col, lit.value, False) for lit in node.values
            )
            return hit != node.negated
        if isinstance(node, BetweenPred):
            v, is_col = self.operand_value(node.operand, row)
            hit = self.compare(">=", v, is_col, node.low.value, False) and self.compare(
                "<=", v, is_col, node.high.value, False
            )
            return hit != node.negated
        raise UnknownColumn(f"unsupported predicate node {node!r}")


def eval_where(q: SqlQuery, t: Table) -> tuple[set[int], int]:
    """Row indices matching the WHERE clause (all rows when absent), plus a
    count of comparisons that mixed numeric and text operands."""
    if q.where is None:
        return set(range(t.n_rows)), 0
    ev = _RowEvaluator(t)
    matched = {i for i, row in enumerate(t.rows) if ev.eval(q.where, row)}
    return matched, ev.mixed_comparisons


# --------------------------------------------------------------------------
# execution bridge
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleResult:
    status: str  # ok | exec_error
    denotation: tuple[str, ...] = ()
    error_msg: str | None = None


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def build_database(t: Table, table_name: str = "t") -> sqlite3.Connection:
    """In-memory database with columns c1..cN of NUMERIC affinity, rows in
    table order. A fresh connection per example; never shared across workers."""
    conn = sqlite3.connect(":memory:")
    cols = ", ".join(f'"c{j + 1}" NUMERIC' for j in range(t.n_cols))
    conn.execute(f"CREATE TABLE {_quote_ident(table_name)} ({cols})")
    placeholders = ", ".join("?" for _ in range(t.n_cols))
    if t.n_cols:
        conn.executemany(
            f"INSERT INTO {_quote_ident(table_name)} VALUES ({placeholders})",
            t.raw_rows(),
        )
    conn.commit()
    return conn


_FROM_RE = re.compile(r'\bfrom\s+("(?:[^"]|"")+"|[A-Za-z_]\w*)', re.IGNORECASE)


def table_name_from_raw(raw: str) -> str:
    m = _FROM_RE.search(raw)
    if not m:
        return "t"
    name = m.group(1)
    if name.startswith('"'):
        return name[1:-1].replace('""', '"')
    return name


def _render(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bytes):
        return value.decode("utf-8", errors="replace")
    if isinstance(value, float):
        return _value_to_text(int(value) if value == int(value) and abs(value) < 1e16 else value)
    return str(value)


def execute_gold(conn: sqlite3.Connection, q: SqlQuery) -> OracleResult:
    """Run the raw query and flatten the result cells row-major."""
    try:
        rows = conn.execute(q.raw).fetchall()
    except sqlite3.Error as e:
        return OracleResult(status="exec_error", error_msg=str(e))
    denotation = tuple(_render(v) for row in rows for v in row)
    return OracleResult(status="ok", denotation=denotation)


# --------------------------------------------------------------------------
# denotation comparison
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchVerdict:
    exact: bool
    soft: bool
    category: str  # exact | normalization_format | multi_value | empty_sql | other


def _soft_hit(oracle: list[str], gold: list[str], cfg: GroundingConfig, policy: str) -> bool:
    o_norm = [normalize(o, cfg) for o in oracle]
    g_norm = [normalize(g, cfg) for g in gold]
    if not o_norm or not g_norm:
        return False
    if policy == "any-element":
        return any(values_match(o, g, cfg) for o in o_norm for g in g_norm)
    return all(any(values_match(o, g, cfg) for g in g_norm) for o in o_norm) and all(
        any(values_match(o, g, cfg) for o in o_norm) for g in g_norm
    )


def compare_denotation(
    oracle: list[str], gold: list[str], cfg: GroundingConfig = DEFAULT_GROUNDING
) -> MatchVerdict:
    """Exact is an order-insensitive multiset compare of trimmed strings;
    soft applies normalize + values_match under the configured multivalue
    policy. Category precedence: empty_sql > multi_value > normalization_format
    > other, so the mismatch table is a deterministic partition."""
    exact = sorted(s.strip() for s in oracle) == sorted(s.strip() for s in gold)
    soft = exact or _soft_hit(oracle, gold, cfg, cfg.multivalue_policy)
    if exact:
        return MatchVerdict(True, True, "exact")
    if not oracle:
        return MatchVerdict(False, soft, "empty_sql")
    if len(oracle) != len(gold) and _soft_hit(oracle, gold, cfg, "any-element"):
        return MatchVerdict(False, soft, "multi_value")
    if soft and len(oracle) == len(gold):
        return MatchVerdict(False, True, "normalization_format")
    return MatchVerdict(False, soft, "other")


DEFAULT_TOLERANCE_CONFIGS = {
    "strict": (1e-6, 0.0),
    "default": (1e-3, 0.01),
    "loose": (1e-2, 0.05),
}


def tolerance_ablation(
    pairs: list[tuple[list[str], list[str]]],
    configs: dict[str, tuple[float, float]] | None = None,
    base_cfg: GroundingConfig = DEFAULT_GROUNDING,
) -> dict[str, float]:
    """Fraction of exact-mismatch (oracle, gold) pairs soft-resolved under
    each numeric tolerance setting."""
    if configs is None:
        configs = DEFAULT_TOLERANCE_CONFIGS
    if not pairs:
        raise ValueError("pairs must be nonempty")
    out = {}
    for name, (abs_tol, rel_tol) in configs.items():
        cfg = GroundingConfig(
            casefold=base_cfg.casefold,
            strip_punct=base_cfg.strip_punct,
            substring_text_match=base_cfg.substring_text_match,
            numeric_abs_tol=abs_tol,
            numeric_rel_tol=rel_tol,
            multivalue_policy=base_cfg.multivalue_policy,
        )
        resolved = sum(1 for oracle, gold in pairs if compare_denotation(oracle, gold, cfg).soft)
        out[name] = resolved / len(pairs)
    return out


# --------------------------------------------------------------------------
# accounting
# --------------------------------------------------------------------------

MISMATCH_CATEGORIES = ("normalization_format", "multi_value", "empty_sql", "other")


@dataclass(frozen=True)
class AccountingReport:
    total: int
    executable: int
    exact_matches: int
    mismatches: int
    soft_resolved: int
    category_counts: dict

    @property
    def execution_rate(self) -> float:
        return self.executable / self.total if self.total else 0.0

    @property
    def exact_rate(self) -> float | None:
        return self.exact_matches / self.executable if self.executable else None

    @property
    def soft_resolution_rate(self) -> float | None:
        return self.soft_resolved / self.mismatches if self.mismatches else None

    def category_shares(self) -> dict:
        if not self.mismatches:
            return {k: None for k in MISMATCH_CATEGORIES}
        return {k: self.category_counts.get(k, 0) / self.mismatches for k in MISMATCH_CATEGORIES}

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "executable": self.executable,
            "execution_rate": self.execution_rate,
            "exact_matches": self.exact_matches,
            "exact_rate": self.exact_rate,
            "mismatches": self.mismatches,
            "soft_resolved": self.soft_resolved,
            "soft_resolution_rate": self.soft_resolution_rate,
            "category_shares": self.category_shares(),
        }


def accounting(results: list[tuple[str, MatchVerdict | None]]) -> AccountingReport:
    """Counts and rates over per-example (status, verdict) pairs. A verdict
    is required exactly when status is ok."""
    if not results:
        raise ValueError("results must be nonempty")
    executable = 0
    exact = 0
    soft_resolved = 0
    categories: dict[str, int] = {}
    for status, verdict in results:
        if status != "ok":
            continue
        executable += 1
        if verdict is None:
            raise ValueError("executable result without a verdict")
        if verdict.exact:
            exact += 1
        else:
            categories[verdict.category] = categories.get(verdict.category, 0) + 1
            if verdict.soft:
                soft_resolved += 1
    return AccountingReport(
        total=len(results),
        executable=executable,
        exact_matches=exact,
        mismatches=executable - exact,
        soft_resolved=soft_resolved,
        category_counts=categories,
    )
