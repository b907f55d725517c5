"""Grid geometry, request types, and arrival/weight models.

Locations are row-major integer indices into a ``rows x cols`` grid.  A
request type is an ordered ``(origin, destination)`` pair of locations;
self-pairs ``(u, u)`` are stored like any other pair.  An arrival model
assigns each request type a per-round probability ``p`` and a profit
weight ``w``; leftover probability mass means "no request this round".
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import SchemaError

#: Absolute tolerance used when validating floating-point probability mass.
PROB_TOL = 1e-12

#: Compass directions in clockwise order starting from North.
DIRECTIONS = ("N", "E", "S", "W")

#: (row, col) offset per direction; row 0 is the northernmost row.
OFFSETS = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}


@dataclass(frozen=True)
class Grid:
    """A rows x cols rectangular grid with 4-neighborhoods.

    Neighbor tuples are precomputed in clockwise order from North, which
    downstream tie-breaking rules rely on.
    """

    rows: int
    cols: int
    _nbrs: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid dimensions must be positive, got {self.rows}x{self.cols}")
        nbrs = []
        for u in range(self.rows * self.cols):
            r, c = divmod(u, self.cols)
            out = []
            for dr, dc in OFFSETS.values():
                rr, cc = r + dr, c + dc
                if 0 <= rr < self.rows and 0 <= cc < self.cols:
                    out.append(rr * self.cols + cc)
            nbrs.append(tuple(out))
        object.__setattr__(self, "_nbrs", tuple(nbrs))

    @property
    def n(self) -> int:
        """Number of locations."""
        return self.rows * self.cols

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError(f"cell ({row},{col}) outside {self.rows}x{self.cols} grid")
        return row * self.cols + col

    def coords(self, u: int) -> tuple[int, int]:
        self.check_location(u)
        return divmod(u, self.cols)

    def check_location(self, u: int) -> None:
        if not (0 <= u < self.n):
            raise ValueError(f"location {u} outside grid with {self.n} cells")

    def neighbors(self, u: int) -> tuple[int, ...]:
        """In-grid locations at Manhattan distance exactly 1, clockwise from North."""
        self.check_location(u)
        return self._nbrs[u]

    def closed_neighborhood(self, u: int) -> tuple[int, ...]:
        """``u`` followed by its in-grid neighbors."""
        return (u,) + self.neighbors(u)

    def neighbor_toward(self, u: int, direction: str) -> int | None:
        """Neighbor of ``u`` in the given compass direction, or None if off-grid."""
        self.check_location(u)
        dr, dc = OFFSETS[direction]
        r, c = divmod(u, self.cols)
        rr, cc = r + dr, c + dc
        if 0 <= rr < self.rows and 0 <= cc < self.cols:
            return rr * self.cols + cc
        return None

    def direction_between(self, u: int, v: int) -> str:
        """Compass direction of adjacent ``v`` as seen from ``u``."""
        ru, cu = self.coords(u)
        rv, cv = self.coords(v)
        for name, (dr, dc) in OFFSETS.items():
            if (ru + dr, cu + dc) == (rv, cv):
                return name
        raise ValueError(f"locations {u} and {v} are not grid-adjacent")

    def manhattan(self, u: int, v: int) -> int:
        ru, cu = self.coords(u)
        rv, cv = self.coords(v)
        return abs(ru - rv) + abs(cu - cv)


def build_grid(rows: int, cols: int) -> Grid:
    """Construct a grid, validating positive dimensions."""
    return Grid(int(rows), int(cols))


def manhattan_distance(grid: Grid, u: int, v: int) -> int:
    return grid.manhattan(u, v)


def distance_weights(grid: Grid) -> np.ndarray:
    """Weight matrix w[u, v] = Manhattan distance (so self-pairs weigh 0)."""
    n = grid.n
    w = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            w[u, v] = grid.manhattan(u, v)
    return w


def _total(values) -> Fraction | float:
    tot = 0
    for v in values:
        tot = tot + v
    return tot


@dataclass(frozen=True)
class RequestModel:
    """Per-round arrival probabilities and profit weights, indexed origin x destination.

    ``p`` and ``w`` are dense (n, n) arrays.  Entries may be floats or exact
    ``fractions.Fraction`` objects (object dtype); exact entries propagate
    through the pure-Python analysis paths unchanged.
    """

    grid: Grid
    p: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        p = np.asarray(self.p)
        w = np.asarray(self.w)
        if p.shape != (n, n) or w.shape != (n, n):
            raise ValueError(f"p and w must have shape ({n},{n})")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "w", w)
        flat_p = p.ravel().tolist()
        flat_w = w.ravel().tolist()
        if any(v < 0 for v in flat_p):
            raise ValueError("arrival probabilities must be nonnegative")
        if any(v < 0 for v in flat_w):
            raise ValueError("weights must be nonnegative")
        tot = _total(flat_p)
        if float(tot) > 1.0 + PROB_TOL:
            raise ValueError(f"arrival probabilities sum to {float(tot)} > 1")
        if p.dtype.kind == "f" and not np.isfinite(p).all():
            raise ValueError("arrival probabilities must be finite")
        if w.dtype.kind == "f" and not np.isfinite(w).all():
            raise ValueError("weights must be finite")

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def total_mass(self) -> Fraction | float:
        """Total per-round arrival probability; 1 - total_mass is the idle chance."""
        return _total(self.p.ravel().tolist())

    @property
    def w_max(self) -> float:
        flat = self.w.ravel().tolist()
        return max(flat) if flat else 0.0

    @property
    def sum_w(self) -> Fraction | float:
        return _total(self.w.ravel().tolist())

    @property
    def exact(self) -> bool:
        """True when entries are stored as exact rationals."""
        return self.p.dtype.kind == "O"

    def pairs(self) -> Iterator[tuple[int, int]]:
        """Ordered pairs with nonzero arrival probability."""
        n = self.n
        for u in range(n):
            for v in range(n):
                if self.p[u, v] != 0:
                    yield (u, v)

    def to_csv(self, path: str | Path) -> None:
        """Write rows ``origin,dest,p,w`` for pairs with nonzero p or w."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["origin", "dest", "p", "w"])
            for u in range(self.n):
                for v in range(self.n):
                    if self.p[u, v] != 0 or self.w[u, v] != 0:
                        writer.writerow([u, v, f"{float(self.p[u, v]):.17g}", f"{float(self.w[u, v]):.17g}"])

    @classmethod
    def from_csv(cls, path: str | Path, grid: Grid) -> "RequestModel":
        n = grid.n
        p = np.zeros((n, n))
        w = np.zeros((n, n))
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"origin", "dest", "p", "w"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise SchemaError(f"{path}: expected columns origin,dest,p,w")
            for row in reader:
                try:
                    u, v = int(row["origin"]), int(row["dest"])
                    pv, wv = float(row["p"]), float(row["w"])
                except (TypeError, ValueError) as exc:
                    raise SchemaError(f"{path}: malformed row {row}") from exc
                grid.check_location(u)
                grid.check_location(v)
                p[u, v] = pv
                w[u, v] = wv
        return cls(grid, p, w)


def _as_weight_matrix(grid: Grid, weights) -> np.ndarray:
    n = grid.n
    if weights is None:
        return distance_weights(grid)
    if isinstance(weights, Mapping):
        w = np.zeros((n, n))
        for (u, v), val in weights.items():
            w[u, v] = val
        return w
    arr = np.asarray(weights)
    if arr.ndim == 0:
        if isinstance(weights, Fraction):
            w = np.empty((n, n), dtype=object)
            w[:] = weights
            return w
        return np.full((n, n), float(weights))
    return arr


def uniform_request_model(grid: Grid, p, weights=None) -> RequestModel:
    """Model with the same arrival probability on all n^2 ordered pairs.

    ``weights`` may be None (Manhattan-distance weights, so self-pairs weigh
    zero), a scalar, a mapping, or a full matrix.
    """
    n = grid.n
    total = p * (n * n)
    if float(total) > 1.0 + PROB_TOL:
        raise ValueError(f"uniform rate {p} puts total mass {float(total)} > 1 on {n * n} pairs")
    if p < 0:
        raise ValueError("arrival probability must be nonnegative")
    if isinstance(p, Fraction):
        pm = np.empty((n, n), dtype=object)
        pm[:] = p
    else:
        pm = np.full((n, n), float(p))
    return RequestModel(grid, pm, _as_weight_matrix(grid, weights))


def request_model_from_pairs(grid: Grid, p_pairs: Mapping, weights=None) -> RequestModel:
    """Model from a mapping ``(origin, dest) -> probability``."""
    n = grid.n
    exact = any(isinstance(v, Fraction) for v in p_pairs.values())
    pm = np.empty((n, n), dtype=object) if exact else np.zeros((n, n))
    if exact:
        pm[:] = Fraction(0)
    for (u, v), val in p_pairs.items():
        grid.check_location(u)
        grid.check_location(v)
        pm[u, v] = val
    return RequestModel(grid, pm, _as_weight_matrix(grid, weights))


def check_hotspot(model: RequestModel) -> int | None:
    """Lowest-index location exchanging positive mass with every other location.

    Returns ``u*`` such that p[u*, u] > 0 and p[u, u*] > 0 for every other
    location u, or None when no location qualifies.
    """
    n = model.n
    for u_star in range(n):
        if all(model.p[u_star, u] > 0 and model.p[u, u_star] > 0 for u in range(n) if u != u_star):
            return u_star
    return None
