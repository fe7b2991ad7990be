"""Line-oriented POMDP text format.

A document is a header followed by table entries::

    # comment
    states: s1 s2 s3
    actions: a1 a2
    observations: z1
    start: s1
    T: a1 : s1 : s2 0.5
    O: s1 : z1 1
    R: a1 : s2 1

Header lines must precede every table entry. Omitted table entries are 0.
Probability rows within 1e-9 of summing to one are accepted; rows whose
residual is above 1e-12 are then rescaled once so they sum to one.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .model import PROB_TOL, Pomdp, ValidationError, validate_pomdp

RENORMALIZE_ABOVE = 1e-12

_HEADERS = ("states", "actions", "observations", "start")
_TOKEN = re.compile(r"\S+")


class ParseError(ValueError):
    """Syntax or reference error, positioned at 1-based line/column."""

    def __init__(self, message: str, line: int, column: int, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        text = f"line {line}, column {column}: {message}"
        if self.expected:
            shown = list(self.expected[:8])
            more = "" if len(self.expected) <= 8 else f", ... ({len(self.expected)} total)"
            text += f" (expected one of: {', '.join(shown)}{more})"
        super().__init__(text)


@dataclass(frozen=True)
class Entry:
    kind: str
    key: tuple
    value: float
    line: int
    column: int


@dataclass(frozen=True)
class PomdpDocument:
    """Raw text plus the source position of every header and table entry."""

    text: str
    header: dict
    header_positions: dict
    entries: tuple[Entry, ...]

    def position_of(self, kind: str, key: tuple) -> tuple[int, int] | None:
        for e in self.entries:
            if e.kind == kind and e.key == key:
                return e.line, e.column
        return None


def _tokens(line: str):
    return [(m.group(), m.start() + 1) for m in _TOKEN.finditer(line)]


def _parse_number(tok: str, lineno: int, col: int) -> float:
    try:
        value = float(tok)
    except ValueError:
        raise ParseError(f"invalid number {tok!r}", lineno, col, ("<number>",)) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite number {tok!r}", lineno, col, ("<number>",))
    return value


def _split_fields(line: str, lineno: int, start_col: int, n_fields: int):
    """Split ``id : id : ... id number`` into ``n_fields`` ids plus a number."""
    toks = _tokens(line[start_col - 1:])
    toks = [(t, c + start_col - 1) for t, c in toks]
    # normalize "a:b" style into separate tokens while keeping columns
    flat = []
    for t, c in toks:
        pos = 0
        for part in re.split(r"(:)", t):
            if part:
                flat.append((part, c + pos))
            pos += len(part)
    ids = []
    i = 0
    for f in range(n_fields):
        if i >= len(flat):
            col = len(line) + 1
            raise ParseError("unexpected end of line", lineno, col, ("<id>",))
        tok, col = flat[i]
        if tok == ":":
            raise ParseError("missing identifier", lineno, col, ("<id>",))
        ids.append((tok, col))
        i += 1
        if f < n_fields - 1:
            if i >= len(flat) or flat[i][0] != ":":
                col = flat[i][1] if i < len(flat) else len(line) + 1
                raise ParseError("expected ':'", lineno, col, (":",))
            i += 1
    if i >= len(flat):
        raise ParseError("missing value", lineno, len(line) + 1, ("<number>",))
    tok, col = flat[i]
    value = _parse_number(tok, lineno, col)
    if i + 1 < len(flat):
        tok, col = flat[i + 1]
        raise ParseError(f"unexpected token {tok!r}", lineno, col, ("<end of line>",))
    return ids, (value, col)


def parse_document(text: str) -> PomdpDocument:
    header: dict = {}
    header_pos: dict = {}
    entries: list[Entry] = []
    seen: dict = {}
    lookup: dict = {}

    def resolve(kind, tok, lineno, col):
        table = lookup[kind]
        if tok not in table:
            raise ParseError(f"unknown {kind[:-1]} {tok!r}", lineno, col, tuple(table))
        return table[tok]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        stripped = line.lstrip()
        col0 = len(line) - len(stripped) + 1
        m = re.match(r"([A-Za-z]+)\s*:", stripped)
        if not m:
            raise ParseError("expected a section keyword", lineno, col0,
                             _HEADERS + ("T", "O", "R"))
        kw = m.group(1)
        rest_col = col0 + m.end()
        if kw in _HEADERS:
            if entries:
                raise ParseError(f"header {kw!r} after table entries", lineno, col0,
                                 ("T", "O", "R"))
            if kw in header:
                raise ParseError(f"duplicate header {kw!r}", lineno, col0)
            toks = _tokens(line[rest_col - 1:])
            if not toks:
                raise ParseError(f"empty {kw!r} header", lineno, len(line) + 1, ("<id>",))
            ids = [t for t, _ in toks]
            if kw == "start":
                if len(ids) != 1:
                    raise ParseError("start takes exactly one state", lineno,
                                     toks[1][1] + rest_col - 1, ("<end of line>",))
                header[kw] = ids[0]
            else:
                dup = [t for t, c in toks if ids.count(t) > 1]
                if dup:
                    c = [c for t, c in toks if t == dup[0]][1] + rest_col - 1
                    raise ParseError(f"duplicate id {dup[0]!r}", lineno, c)
                header[kw] = tuple(ids)
            header_pos[kw] = (lineno, col0)
            continue

        if kw not in ("T", "O", "R"):
            raise ParseError(f"unknown section {kw!r}", lineno, col0,
                             _HEADERS + ("T", "O", "R"))
        if not lookup:
            missing = [h for h in _HEADERS if h not in header]
            if missing:
                raise ParseError(f"table entry before header {missing[0]!r}", lineno, col0,
                                 tuple(missing))
            lookup = {
                "states": {s: i for i, s in enumerate(header["states"])},
                "actions": {a: i for i, a in enumerate(header["actions"])},
                "observations": {z: i for i, z in enumerate(header["observations"])},
            }
            if header["start"] not in lookup["states"]:
                ln, c = header_pos["start"]
                raise ParseError(f"unknown state {header['start']!r}", ln, c,
                                 tuple(lookup["states"]))

        if kw == "T":
            ids, (value, vcol) = _split_fields(line, lineno, rest_col, 3)
            key = (resolve("actions", ids[0][0], lineno, ids[0][1]),
                   resolve("states", ids[1][0], lineno, ids[1][1]),
                   resolve("states", ids[2][0], lineno, ids[2][1]))
        elif kw == "O":
            ids, (value, vcol) = _split_fields(line, lineno, rest_col, 2)
            key = (resolve("states", ids[0][0], lineno, ids[0][1]),
                   resolve("observations", ids[1][0], lineno, ids[1][1]))
        else:
            ids, (value, vcol) = _split_fields(line, lineno, rest_col, 2)
            key = (resolve("actions", ids[0][0], lineno, ids[0][1]),
                   resolve("states", ids[1][0], lineno, ids[1][1]))
        if kw in ("T", "O") and value < 0:
            raise ParseError(f"negative probability {value!r}", lineno, vcol)
        if (kw, key) in seen:
            prev = seen[(kw, key)]
            raise ParseError(f"duplicate {kw} entry (first defined on line {prev})",
                             lineno, col0)
        seen[(kw, key)] = lineno
        entries.append(Entry(kw, key, value, lineno, col0))

    if not lookup:
        missing = [h for h in _HEADERS if h not in header]
        if missing:
            n = len(text.splitlines()) + 1
            raise ParseError(f"missing header {missing[0]!r}", n, 1, tuple(missing))
        if header["start"] not in header["states"]:
            ln, c = header_pos["start"]
            raise ParseError(f"unknown state {header['start']!r}", ln, c, header["states"])
    return PomdpDocument(text, header, header_pos, tuple(entries))


def _renormalize(rows: np.ndarray) -> np.ndarray:
    flat = rows.reshape(-1, rows.shape[-1])
    for i in range(flat.shape[0]):
        total = math.fsum(flat[i].tolist())
        if total > 0 and RENORMALIZE_ABOVE < abs(total - 1.0) <= PROB_TOL:
            flat[i] /= total
    return flat.reshape(rows.shape)


def document_to_pomdp(doc: PomdpDocument) -> Pomdp:
    h = doc.header
    S, A, Z = len(h["states"]), len(h["actions"]), len(h["observations"])
    P = np.zeros((S, A, S))
    O = np.zeros((S, Z))
    R = np.zeros((S, A))
    for e in doc.entries:
        if e.kind == "T":
            a, s, s2 = e.key
            P[s, a, s2] = e.value
        elif e.kind == "O":
            O[e.key] = e.value
        else:
            a, s = e.key
            R[s, a] = e.value
    P = _renormalize(P)
    O = _renormalize(O)
    return Pomdp(h["states"], h["start"], h["actions"], P, h["observations"], O, R)


def parse_pomdp(text: str) -> Pomdp:
    """Parse and validate. Raises :class:`ParseError` or :class:`ValidationError`."""
    doc = parse_document(text)
    model = document_to_pomdp(doc)
    report = validate_pomdp(model)
    if not report.ok:
        raise ValidationError(report)
    return model


def _fmt(x: float) -> str:
    # repr is the shortest string that round-trips
    x = float(x)
    if x == int(x) and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


_BAD_ID = re.compile(r"[\s:#]")


def serialize_pomdp(model: Pomdp) -> str:
    """Deterministic text for ``model``; ``parse_pomdp`` inverts it exactly."""
    for ids in (model.states, model.actions, model.observations):
        for name in ids:
            if not name or _BAD_ID.search(name):
                raise ValueError(f"identifier {name!r} cannot be written in the text format")
    lines = [
        "states: " + " ".join(model.states),
        "actions: " + " ".join(model.actions),
        "observations: " + " ".join(model.observations),
        "start: " + model.initial_state,
    ]
    P, O, R = model.transition, model.observation, model.reward
    for a, an in enumerate(model.actions):
        for s, sn in enumerate(model.states):
            for s2 in np.flatnonzero(P[s, a]):
                lines.append(f"T: {an} : {sn} : {model.states[s2]} {_fmt(P[s, a, s2])}")
    for s, sn in enumerate(model.states):
        for z in np.flatnonzero(O[s]):
            lines.append(f"O: {sn} : {model.observations[z]} {_fmt(O[s, z])}")
    for a, an in enumerate(model.actions):
        for s, sn in enumerate(model.states):
            if R[s, a] != 0:
                lines.append(f"R: {an} : {sn} {_fmt(R[s, a])}")
    return "\n".join(lines) + "\n"


def load_pomdp(path) -> Pomdp:
    with open(path, encoding="utf-8") as fh:
        return parse_pomdp(fh.read())


def save_pomdp(model: Pomdp, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_pomdp(model))
