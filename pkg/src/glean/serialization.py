"""Parse and emit the six table serializations used by the format sweep.

All emitters are byte-stable so downstream prompting and golden-file tests
are reproducible. Each parser is the exact inverse of its emitter (modulo
format escaping) and raises MalformedInput rather than silently dropping
rows.

Dialects fixed here:
  csv       RFC-4180-style quoting, '"' doubled inside quoted cells
  tsv       backslash escapes for tab/newline/CR/backslash; no quoting
  markdown  pipe table, header separator row of dashes; backslash escapes
  json      {"headers": [...], "rows": [[...]]}, single line, key order fixed
  html      table/tr/th/td subset, attributes ignored, entities escaped
  kv        one line per row: "row i: header = value; header = value"
"""

from __future__ import annotations

import json as _json
import re

from .errors import MalformedInput
from .table_core import Table

FORMATS = ("markdown", "csv", "tsv", "json", "html", "kv")


def emit(t: Table, fmt: str) -> str:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    return _EMITTERS[fmt](t)


def parse(s: str, fmt: str, table_id: str = "parsed") -> Table:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}")
    headers, rows = _PARSERS[fmt](s)
    return Table.from_strings(table_id, headers, rows)


# --------------------------------------------------------------------------
# csv
# --------------------------------------------------------------------------

def _csv_cell(cell: str, sep: str) -> str:
    if any(ch in cell for ch in (sep, '"', "\n", "\r")):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def _emit_csv(t: Table, sep: str = ",") -> str:
    lines = [sep.join(_csv_cell(h, sep) for h in t.headers)]
    for row in t.raw_rows():
        lines.append(sep.join(_csv_cell(c, sep) for c in row))
    return "\n".join(lines) + "\n"


def _parse_csv(s: str, sep: str = ",", fmt: str = "csv") -> tuple[list[str], list[list[str]]]:
    rows: list[list[str]] = []
    field = []
    row: list[str] = []
    in_quotes = False
    after_quotes = False
    line_no = 1
    i = 0
    n = len(s)
    started = n > 0

    def end_field():
        nonlocal after_quotes
        row.append("".join(field))
        field.clear()
        after_quotes = False

    def end_row():
        end_field()
        rows.append(list(row))
        row.clear()

    while i < n:
        ch = s[i]
        if in_quotes:
            if ch == '"':
                if i + 1 < n and s[i + 1] == '"':
                    field.append('"')
                    i += 2
                    continue
                in_quotes = False
                after_quotes = True
            else:
                if ch == "\n":
                    line_no += 1
                field.append(ch)
            i += 1
            continue
        if ch == '"':
            if field or after_quotes:
                raise MalformedInput(fmt, line_no, "quote inside unquoted field")
            in_quotes = True
            i += 1
            continue
        if ch == sep:
            end_field()
            i += 1
            continue
        if ch == "\n" or (ch == "\r" and i + 1 < n and s[i + 1] == "\n"):
            end_row()
            i += 2 if ch == "\r" else 1
            line_no += 1
            # trailing newline terminates the document
            if i == n:
                started = False
            continue
        if after_quotes:
            raise MalformedInput(fmt, line_no, "data after closing quote")
        field.append(ch)
        i += 1
    if in_quotes:
        raise MalformedInput(fmt, line_no, "unterminated quoted field")
    if started:
        end_row()
    if not rows:
        raise MalformedInput(fmt, 1, "empty document")
    headers = rows[0]
    width = len(headers)
    body = []
    for r_i, r in enumerate(rows[1:], start=2):
        if len(r) != width:
            raise MalformedInput(fmt, r_i, f"expected {width} fields, got {len(r)}")
        body.append(r)
    return headers, body


def _emit_tsv(t: Table) -> str:
    def esc(cell: str) -> str:
        return (
            cell.replace("\\", "\\\\")
            .replace("\t", "\\t")
            .replace("\n", "\\n")
            .replace("\r", "\\r")
        )

    lines = ["\t".join(esc(h) for h in t.headers)]
    for row in t.raw_rows():
        lines.append("\t".join(esc(c) for c in row))
    return "\n".join(lines) + "\n"


_TSV_UNESCAPE = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def _tsv_unescape(field: str, line_no: int) -> str:
    out = []
    i = 0
    while i < len(field):
        ch = field[i]
        if ch == "\\":
            if i + 1 >= len(field) or field[i + 1] not in _TSV_UNESCAPE:
                raise MalformedInput("tsv", line_no, "bad escape sequence")
            out.append(_TSV_UNESCAPE[field[i + 1]])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _parse_tsv(s: str) -> tuple[list[str], list[list[str]]]:
    if not s:
        raise MalformedInput("tsv", 1, "empty document")
    lines = s.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedInput("tsv", 1, "empty document")
    table = [
        [_tsv_unescape(f, i) for f in line.split("\t")]
        for i, line in enumerate(lines, start=1)
    ]
    headers = table[0]
    width = len(headers)
    for i, r in enumerate(table[1:], start=2):
        if len(r) != width:
            raise MalformedInput("tsv", i, f"expected {width} fields, got {len(r)}")
    return headers, table[1:]


# --------------------------------------------------------------------------
# markdown
# --------------------------------------------------------------------------

def _md_escape(cell: str) -> str:
    return (
        cell.replace("\\", "\\\\")
        .replace("|", "\\|")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


_MD_UNESCAPE = {"\\": "\\", "|": "|", "n": "\n", "r": "\r"}

_MD_SEP_CELL = re.compile(r"\s*:?-{3,}:?\s*")


def _emit_markdown(t: Table) -> str:
    lines = ["|" + "|".join(_md_escape(h) for h in t.headers) + "|"]
    lines.append("|" + "|".join("---" for _ in t.headers) + "|")
    for row in t.raw_rows():
        lines.append("|" + "|".join(_md_escape(c) for c in row) + "|")
    return "\n".join(lines) + "\n"


def _md_split_row(line: str, line_no: int) -> list[str]:
    if not line.startswith("|") or not line.endswith("|") or len(line) < 2:
        raise MalformedInput("markdown", line_no, "row must be pipe-delimited")
    body = line[1:-1]
    cells = []
    cur: list[str] = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            if i + 1 >= len(body) or body[i + 1] not in _MD_UNESCAPE:
                raise MalformedInput("markdown", line_no, "bad escape sequence")
            cur.append(_MD_UNESCAPE[body[i + 1]])
            i += 2
        elif ch == "|":
            cells.append("".join(cur))
            cur = []
            i += 1
        else:
            cur.append(ch)
            i += 1
    cells.append("".join(cur))
    return cells


def _parse_markdown(s: str) -> tuple[list[str], list[list[str]]]:
    lines = [ln for ln in s.split("\n") if ln != ""]
    if len(lines) < 2:
        raise MalformedInput("markdown", 1, "need a header row and a separator row")
    headers = _md_split_row(lines[0], 1)
    sep_cells = lines[1][1:-1].split("|") if lines[1].startswith("|") and lines[1].endswith("|") else None
    if sep_cells is None or not all(_MD_SEP_CELL.fullmatch(c) for c in sep_cells):
        raise MalformedInput("markdown", 2, "missing or invalid separator row")
    if len(sep_cells) != len(headers):
        raise MalformedInput("markdown", 2, "separator width differs from header")
    rows = []
    for i, line in enumerate(lines[2:], start=3):
        cells = _md_split_row(line, i)
        if len(cells) != len(headers):
            raise MalformedInput("markdown", i, f"expected {len(headers)} cells, got {len(cells)}")
        rows.append(cells)
    return headers, rows


# --------------------------------------------------------------------------
# json
# --------------------------------------------------------------------------

def _emit_json(t: Table) -> str:
    doc = {"headers": list(t.headers), "rows": t.raw_rows()}
    return _json.dumps(doc, ensure_ascii=False, separators=(",", ":")) + "\n"


def _parse_json(s: str) -> tuple[list[str], list[list[str]]]:
    try:
        doc = _json.loads(s)
    except _json.JSONDecodeError as e:
        raise MalformedInput("json", e.lineno, e.msg) from e
    if not isinstance(doc, dict) or "headers" not in doc or "rows" not in doc:
        raise MalformedInput("json", 1, "expected object with headers and rows")
    headers = doc["headers"]
    rows = doc["rows"]
    if not isinstance(headers, list) or not all(isinstance(h, str) for h in headers):
        raise MalformedInput("json", 1, "headers must be a list of strings")
    if not isinstance(rows, list):
        raise MalformedInput("json", 1, "rows must be a list")
    for i, r in enumerate(rows):
        if not isinstance(r, list) or not all(isinstance(c, str) for c in r):
            raise MalformedInput("json", 1, f"row {i} must be a list of strings")
        if len(r) != len(headers):
            raise MalformedInput("json", 1, f"row {i} has {len(r)} cells, expected {len(headers)}")
    return headers, rows


# --------------------------------------------------------------------------
# html
# --------------------------------------------------------------------------

def _html_escape(cell: str) -> str:
    return cell.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _html_unescape(cell: str) -> str:
    return cell.replace("&lt;", "<").replace("&gt;", ">").replace("&amp;", "&")


def _emit_html(t: Table) -> str:
    lines = ["<table>"]
    lines.append("<tr>" + "".join(f"<th>{_html_escape(h)}</th>" for h in t.headers) + "</tr>")
    for row in t.raw_rows():
        lines.append("<tr>" + "".join(f"<td>{_html_escape(c)}</td>" for c in row) + "</tr>")
    lines.append("</table>")
    return "\n".join(lines) + "\n"


_HTML_TAG = re.compile(r"<(/?)(table|tr|th|td)(\s[^>]*)?>", re.IGNORECASE)


def _parse_html(s: str) -> tuple[list[str], list[list[str]]]:
    # Subset scanner: only table/tr/th/td are structural, attributes ignored,
    # no nested cells. Text is significant only inside th/td.
    pos = 0
    in_table = False
    cur_row: list[str] | None = None
    cell_tag: str | None = None
    cell_start = 0
    header_rows: list[list[str]] = []
    data_rows: list[list[str]] = []
    row_kinds: list[str] = []
    cur_kind = ""

    def line_of(p: int) -> int:
        return s.count("\n", 0, p) + 1

    for m in _HTML_TAG.finditer(s):
        closing, tag = bool(m.group(1)), m.group(2).lower()
        if cell_tag is not None:
            if closing and tag == cell_tag:
                cur_row.append(_html_unescape(s[cell_start:m.start()]))
                cell_tag = None
            elif tag in ("td", "th"):
                raise MalformedInput("html", line_of(m.start()), "nested cell tag")
            pos = m.end()
            continue
        if tag == "table":
            if not closing and in_table:
                raise MalformedInput("html", line_of(m.start()), "nested table")
            in_table = not closing
        elif tag == "tr":
            if not in_table:
                raise MalformedInput("html", line_of(m.start()), "tr outside table")
            if closing:
                if cur_row is None:
                    raise MalformedInput("html", line_of(m.start()), "unmatched </tr>")
                (header_rows if cur_kind == "th" else data_rows).append(cur_row)
                row_kinds.append(cur_kind)
                cur_row = None
            else:
                cur_row = []
                cur_kind = ""
        elif tag in ("th", "td"):
            if closing:
                raise MalformedInput("html", line_of(m.start()), f"unmatched </{tag}>")
            if cur_row is None:
                raise MalformedInput("html", line_of(m.start()), f"{tag} outside tr")
            if cur_kind == "":
                cur_kind = tag
            elif cur_kind != tag:
                raise MalformedInput("html", line_of(m.start()), "mixed th/td in one row")
            cell_tag = tag
            cell_start = m.end()
        pos = m.end()
    if in_table or cur_row is not None or cell_tag is not None:
        raise MalformedInput("html", line_of(pos), "unterminated structure")
    if len(header_rows) != 1 or (row_kinds and row_kinds[0] != "th"):
        raise MalformedInput("html", 1, "expected exactly one leading th header row")
    headers = header_rows[0]
    for i, r in enumerate(data_rows):
        if len(r) != len(headers):
            raise MalformedInput("html", 1, f"row {i} has {len(r)} cells, expected {len(headers)}")
    return headers, data_rows


# --------------------------------------------------------------------------
# kv
# --------------------------------------------------------------------------

_KV_UNESCAPE = {"\\": "\\", ";": ";", "=": "=", "n": "\n", "r": "\r"}

_KV_PREFIX = re.compile(r"row (\d+): ")


def _kv_escape(s: str) -> str:
    return (
        s.replace("\\", "\\\\")
        .replace(";", "\\;")
        .replace("=", "\\=")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _emit_kv(t: Table) -> str:
    lines = []
    for i, row in enumerate(t.raw_rows(), start=1):
        pairs = "; ".join(
            f"{_kv_escape(h)} = {_kv_escape(c)}" for h, c in zip(t.headers, row)
        )
        lines.append(f"row {i}: {pairs}")
    return "\n".join(lines) + "\n" if lines else ""


def _kv_split_pairs(body: str, line_no: int) -> list[tuple[str, str]]:
    pairs = []
    cur: list[str] = []
    parts: list[str] = []
    i = 0
    while i <= len(body):
        if i == len(body):
            parts.append("".join(cur))
            pairs.append(parts)
            break
        ch = body[i]
        if ch == "\\":
            if i + 1 >= len(body) or body[i + 1] not in _KV_UNESCAPE:
                raise MalformedInput("kv", line_no, "bad escape sequence")
            cur.append(_KV_UNESCAPE[body[i + 1]])
            i += 2
        elif body.startswith(" = ", i) and not parts:
            parts.append("".join(cur))
            cur = []
            i += 3
        elif body.startswith("; ", i):
            parts.append("".join(cur))
            if len(parts) != 2:
                raise MalformedInput("kv", line_no, "pair without ' = ' separator")
            pairs.append(parts)
            parts = []
            cur = []
            i += 2
        else:
            cur.append(ch)
            i += 1
    out = []
    for p in pairs:
        if len(p) != 2:
            raise MalformedInput("kv", line_no, "pair without ' = ' separator")
        out.append((p[0], p[1]))
    return out


def _parse_kv(s: str) -> tuple[list[str], list[list[str]]]:
    lines = s.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedInput("kv", 1, "empty document carries no header information")
    headers: list[str] | None = None
    rows = []
    for i, line in enumerate(lines, start=1):
        m = _KV_PREFIX.match(line)
        if m is None:
            raise MalformedInput("kv", i, "line must start with 'row N: '")
        if int(m.group(1)) != i:
            raise MalformedInput("kv", i, f"row index {m.group(1)} out of sequence")
        pairs = _kv_split_pairs(line[m.end():], i)
        line_headers = [h for h, _ in pairs]
        if headers is None:
            headers = line_headers
        elif line_headers != headers:
            raise MalformedInput("kv", i, "headers differ from first row")
        rows.append([v for _, v in pairs])
    return headers, rows


_EMITTERS = {
    "markdown": _emit_markdown,
    "csv": lambda t: _emit_csv(t, ","),
    "tsv": _emit_tsv,
    "json": _emit_json,
    "html": _emit_html,
    "kv": _emit_kv,
}

_PARSERS = {
    "markdown": _parse_markdown,
    "csv": lambda s: _parse_csv(s, ",", "csv"),
    "tsv": _parse_tsv,
    "json": _parse_json,
    "html": _parse_html,
    "kv": _parse_kv,
}
