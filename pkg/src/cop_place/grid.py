"""Grid topology, case-file parsing and the constant matrices of the
Cartesian power-flow model.

A grid is a plain Pi-model network: every line ``{n, m}`` carries a series
admittance ``Y_nm`` and a per-end shunt admittance ``Ybar_nm``.  Bus indices
are 0-based internally; case files use arbitrary bus ids which are mapped to
``0..N-1`` in ascending id order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CaseParseError",
    "GridValidationError",
    "Line",
    "Grid",
    "ConstantMatrixSet",
    "parse_case",
    "load_case",
    "build_admittance",
    "build_constant_matrices",
    "BUILTIN_CASES",
]

BUILTIN_CASES = ("ieee14", "ieee30", "ieee118", "two_bus")


class CaseParseError(ValueError):
    """Malformed case file content."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class GridValidationError(ValueError):
    """Structurally valid case that does not describe an estimable grid."""


@dataclass(frozen=True)
class Line:
    """Undirected line ``{from_bus, to_bus}`` with ``from_bus < to_bus``."""

    from_bus: int
    to_bus: int
    series_admittance: complex
    shunt_admittance: complex = 0j


@dataclass(frozen=True, eq=False)
class Grid:
    n_buses: int
    lines: tuple[Line, ...]
    bus_ids: tuple = field(default=None)
    name: str = ""

    def __post_init__(self):
        if self.n_buses < 1:
            raise GridValidationError("a grid needs at least one bus")
        lines = tuple(sorted(self.lines, key=lambda ln: (ln.from_bus, ln.to_bus)))
        seen = set()
        for ln in lines:
            if ln.from_bus == ln.to_bus:
                raise GridValidationError(f"self-loop at bus {ln.from_bus}")
            if not (0 <= ln.from_bus < ln.to_bus < self.n_buses):
                raise GridValidationError(
                    f"line ({ln.from_bus}, {ln.to_bus}) must satisfy 0 <= from < to < {self.n_buses}"
                )
            key = (ln.from_bus, ln.to_bus)
            if key in seen:
                raise GridValidationError(f"duplicate line {key}")
            seen.add(key)
        object.__setattr__(self, "lines", lines)
        if self.bus_ids is None:
            object.__setattr__(self, "bus_ids", tuple(range(1, self.n_buses + 1)))

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @cached_property
    def directed_lines(self) -> tuple[tuple[int, int], ...]:
        """Both orientations of every line, sorted by ``(n, m)``.

        Current and flow measurements are indexed in this order.
        """
        pairs = []
        for ln in self.lines:
            pairs.append((ln.from_bus, ln.to_bus))
            pairs.append((ln.to_bus, ln.from_bus))
        return tuple(sorted(pairs))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs = [[] for _ in range(self.n_buses)]
        for n, m in self.directed_lines:
            nbrs[n].append(m)
        return tuple(tuple(x) for x in nbrs)

    def line(self, n: int, m: int) -> Line:
        a, b = min(n, m), max(n, m)
        return self._line_index[(a, b)]

    @cached_property
    def _line_index(self):
        return {(ln.from_bus, ln.to_bus): ln for ln in self.lines}

    def is_connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            n = stack.pop()
            for m in self.neighbors[n]:
                if m not in seen:
                    seen.add(m)
                    stack.append(m)
        return len(seen) == self.n_buses

    def validate(self) -> "Grid":
        if not self.is_connected():
            raise GridValidationError(
                f"grid '{self.name or '?'}' is disconnected; the state is not estimable"
            )
        return self

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "n_buses": self.n_buses,
            "bus_ids": list(self.bus_ids),
            "lines": [
                {
                    "from": self.bus_ids[ln.from_bus],
                    "to": self.bus_ids[ln.to_bus],
                    "y": [ln.series_admittance.real, ln.series_admittance.imag],
                    "shunt": [ln.shunt_admittance.real, ln.shunt_admittance.imag],
                }
                for ln in self.lines
            ],
        }


# ---------------------------------------------------------------------------
# parsing

_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[")


def _strip_comment(line):
    i = line.find("%")
    return line if i < 0 else line[:i]


def _parse_matpower_tables(text):
    """Numeric ``mpc.<name> = [...]`` tables as lists of ``(lineno, row)``.

    Rows end at ``;`` or at a line break, as in MATLAB matrix literals.
    """
    tables = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        match = _MATRIX_RE.search(raw)
        if not match:
            i += 1
            continue
        name, start = match.group(1), i + 1
        rest = raw[match.end():]
        rows = []
        while True:
            closed = "]" in rest
            if closed:
                rest = rest[: rest.index("]")]
            for piece in rest.split(";"):
                tokens = piece.replace(",", " ").split()
                if not tokens:
                    continue
                try:
                    rows.append((i + 1, [float(t) for t in tokens]))
                except ValueError:
                    bad = next(t for t in tokens if not _is_float(t))
                    raise CaseParseError(f"non-numeric entry {bad!r} in mpc.{name}", i + 1) from None
            if closed:
                break
            i += 1
            if i >= len(lines):
                raise CaseParseError(f"unterminated table mpc.{name}", start)
            rest = _strip_comment(lines[i])
        tables[name] = rows
        i += 1
    return tables


def _is_float(token):
    try:
        float(token)
    except ValueError:
        return False
    return True


def _grid_from_matpower(text, name=""):
    tables = _parse_matpower_tables(text)
    if "bus" not in tables:
        raise CaseParseError("missing mpc.bus table")
    if "branch" not in tables:
        raise CaseParseError("missing mpc.branch table")
    bus_ids = []
    for lineno, row in tables["bus"]:
        if len(row) < 1:
            raise CaseParseError("empty bus row", lineno)
        bus_ids.append(int(row[0]))
    if len(set(bus_ids)) != len(bus_ids):
        raise CaseParseError("duplicate bus id in mpc.bus")
    raw_lines = []
    for lineno, row in tables["branch"]:
        if len(row) < 5:
            raise CaseParseError(
                f"branch row needs at least 5 columns (fbus tbus r x b), got {len(row)}", lineno
            )
        if len(row) >= 11 and row[10] == 0:
            continue
        f, t, r, x, b = int(row[0]), int(row[1]), row[2], row[3], row[4]
        for bus in (f, t):
            if bus not in bus_ids:
                raise CaseParseError(f"branch references unknown bus {bus}", lineno)
        if r == 0 and x == 0:
            raise CaseParseError("branch with zero impedance", lineno)
        raw_lines.append((lineno, f, t, 1.0 / complex(r, x), 0.5j * b))
    return _assemble(bus_ids, raw_lines, name)


def _grid_from_json(doc, name=""):
    try:
        lines = doc["lines"]
        if "bus_ids" in doc:
            bus_ids = [int(b) for b in doc["bus_ids"]]
        else:
            bus_ids = list(range(1, int(doc["n_buses"]) + 1))
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseParseError(f"invalid JSON grid: {exc}") from None
    if "n_buses" in doc and int(doc["n_buses"]) != len(bus_ids):
        raise CaseParseError("n_buses does not match bus_ids")
    raw_lines = []
    for k, entry in enumerate(lines):
        try:
            f, t = int(entry["from"]), int(entry["to"])
            if "y" in entry:
                y = complex(*entry["y"])
            else:
                y = 1.0 / complex(float(entry["r"]), float(entry["x"]))
            if "shunt" in entry:
                ybar = complex(*entry["shunt"])
            else:
                ybar = 0.5j * float(entry.get("b", 0.0))
        except (KeyError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise CaseParseError(f"invalid line entry #{k}: {exc}") from None
        for bus in (f, t):
            if bus not in bus_ids:
                raise CaseParseError(f"line entry #{k} references unknown bus {bus}")
        raw_lines.append((k, f, t, y, ybar))
    return _assemble(bus_ids, raw_lines, doc.get("name", name))


def _assemble(bus_ids, raw_lines, name):
    order = sorted(bus_ids)
    index = {bid: i for i, bid in enumerate(order)}
    merged = {}
    for lineno, f, t, y, ybar in raw_lines:
        n, m = index[f], index[t]
        if n == m:
            raise CaseParseError(f"self-loop at bus {f}", lineno)
        key = (min(n, m), max(n, m))
        if key in merged:
            # parallel circuits collapse into one equivalent Pi section
            y0, ybar0 = merged[key]
            merged[key] = (y0 + y, ybar0 + ybar)
        else:
            merged[key] = (y, ybar)
    lines = tuple(Line(n, m, complex(y), complex(ybar)) for (n, m), (y, ybar) in merged.items())
    grid = Grid(n_buses=len(order), lines=lines, bus_ids=tuple(order), name=name)
    return grid.validate()


def parse_case(text: str, name: str = "") -> Grid:
    """Parse a MATPOWER ``.m`` case or a native JSON grid document.

    Branch impedances become series admittances ``1/(r + ix)`` and the total
    line charging ``b`` is split evenly as ``i*b/2`` per line end.  Transformer
    taps, phase shifts and bus shunts are ignored.
    """
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CaseParseError(exc.msg, exc.lineno) from None
        return _grid_from_json(doc, name)
    return _grid_from_matpower(text, name)


def load_case(case: str | Path) -> Grid:
    """Load a built-in case by name (``ieee14``...) or a case file by path."""
    key = str(case)
    if key in BUILTIN_CASES:
        suffix = ".json" if key == "two_bus" else ".m"
        text = resources.files("cop_place.cases").joinpath(key + suffix).read_text()
        return parse_case(text, name=key)
    path = Path(case)
    return parse_case(path.read_text(), name=path.stem)


# ---------------------------------------------------------------------------
# admittance and constant matrices


def build_admittance(grid: Grid) -> np.ndarray:
    """Bus admittance matrix: ``-Y_nm`` off the diagonal, ``sum(Y_nm + Ybar_nm)`` on it."""
    N = grid.n_buses
    Y = np.zeros((N, N), dtype=complex)
    for ln in grid.lines:
        n, m, y, ybar = ln.from_bus, ln.to_bus, ln.series_admittance, ln.shunt_admittance
        Y[n, m] -= y
        Y[m, n] -= y
        Y[n, n] += y + ybar
        Y[m, m] += y + ybar
    return Y


def _real_pair(G, B, pattern):
    """2x2 block assembly of two NxN real matrices."""
    if pattern == "P":
        return sp.bmat([[G, -B], [B, G]], format="csr")
    if pattern == "Q":
        return -sp.bmat([[B, G], [-G, B]], format="csr")
    if pattern == "CI":
        return sp.bmat([[G, None], [None, -B]], format="csr")
    if pattern == "CJ":
        return sp.bmat([[B, None], [None, G]], format="csr")
    raise ValueError(pattern)


@dataclass(frozen=True, eq=False)
class ConstantMatrixSet:
    """Sparse 2N x 2N matrices turning the state into measurements.

    ``N_P[n]``, ``N_Q[n]`` give injections at bus ``n``; ``E_P[k]``,
    ``E_Q[k]``, ``C_I[k]``, ``C_J[k]`` belong to directed line
    ``grid.directed_lines[k]``.  ``H_I[n]``, ``H_J[n]`` are the ``L_n x 2N``
    current rows of a PMU at bus ``n``.
    """

    grid: Grid
    Y: np.ndarray
    N_P: tuple
    N_Q: tuple
    E_P: tuple
    E_Q: tuple
    C_I: tuple
    C_J: tuple
    H_I: tuple
    H_J: tuple

    @property
    def dim(self) -> int:
        return 2 * self.grid.n_buses

    def selector(self, n: int) -> sp.csr_matrix:
        """``S_n = I_{L_n} kron (1_2 kron e_n)^T``."""
        N = self.grid.n_buses
        row = np.zeros(2 * N)
        row[n] = row[N + n] = 1.0
        return sp.kron(sp.identity(len(self.grid.neighbors[n])), sp.csr_matrix(row), format="csr")

    @cached_property
    def current_rows(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """Stacked real and imaginary current rows, one per directed line."""
        I_rows = sp.vstack([self._bus_row(k) @ self.C_I[k] for k in range(len(self.C_I))], format="csr")
        J_rows = sp.vstack([self._bus_row(k) @ self.C_J[k] for k in range(len(self.C_J))], format="csr")
        return I_rows, J_rows

    def _bus_row(self, k):
        n = self.grid.directed_lines[k][0]
        N = self.grid.n_buses
        row = np.zeros(2 * N)
        row[n] = row[N + n] = 1.0
        return sp.csr_matrix(row)

    @cached_property
    def quadratic_forms(self) -> tuple:
        """Symmetrised forms ``A + A^T`` in measurement order.

        Order: P_n (N), Q_n (N), P_nm (2L), Q_nm (2L).
        """
        mats = list(self.N_P) + list(self.N_Q) + list(self.E_P) + list(self.E_Q)
        return tuple((A + A.T).tocsr() for A in mats)

    @cached_property
    def stacked_forms(self) -> sp.csr_matrix:
        """All symmetrised forms stacked vertically, ``(K*2N) x 2N``."""
        return sp.vstack(self.quadratic_forms, format="csr")


def build_constant_matrices(grid: Grid, Y: np.ndarray | None = None) -> ConstantMatrixSet:
    if Y is None:
        Y = build_admittance(grid)
    N = grid.n_buses
    N_P, N_Q = [], []
    for n in range(N):
        Yn = sp.csr_matrix((Y[n], (np.full(N, n), np.arange(N))), shape=(N, N))
        Yn.eliminate_zeros()
        G, B = Yn.real, Yn.imag
        N_P.append(_real_pair(G, B, "P"))
        N_Q.append(_real_pair(G, B, "Q"))
    E_P, E_Q, C_I, C_J = [], [], [], []
    for n, m in grid.directed_lines:
        ln = grid.line(n, m)
        y, ybar = ln.series_admittance, ln.shunt_admittance
        Ynm = sp.csr_matrix(([y + ybar, -y], ([n, n], [n, m])), shape=(N, N))
        G, B = Ynm.real, Ynm.imag
        E_P.append(_real_pair(G, B, "P"))
        E_Q.append(_real_pair(G, B, "Q"))
        C_I.append(_real_pair(G, B, "CI"))
        C_J.append(_real_pair(G, B, "CJ"))
    # per-bus PMU current rows, neighbours in directed-line order
    H_I, H_J = [], []
    k_of = {pair: k for k, pair in enumerate(grid.directed_lines)}
    for n in range(N):
        ks = [k_of[(n, m)] for m in grid.neighbors[n]]
        if not ks:
            H_I.append(sp.csr_matrix((0, 2 * N)))
            H_J.append(sp.csr_matrix((0, 2 * N)))
            continue
        row = np.zeros(2 * N)
        row[n] = row[N + n] = 1.0
        S_n = sp.kron(sp.identity(len(ks)), sp.csr_matrix(row), format="csr")
        H_I.append((S_n @ sp.vstack([C_I[k] for k in ks])).tocsr())
        H_J.append((S_n @ sp.vstack([C_J[k] for k in ks])).tocsr())
    return ConstantMatrixSet(
        grid=grid,
        Y=Y,
        N_P=tuple(N_P),
        N_Q=tuple(N_Q),
        E_P=tuple(E_P),
        E_Q=tuple(E_Q),
        C_I=tuple(C_I),
        C_J=tuple(C_J),
        H_I=tuple(H_I),
        H_J=tuple(H_J),
    )
