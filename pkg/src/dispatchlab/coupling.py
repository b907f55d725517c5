"""Identity-coupling contraction checks for the feasibility chain.

Two copies of the chain watch the same request stream; each round both
apply the identical request under the feasibility rule (move one driver
from the request origin to its destination iff the origin is occupied and
the destination is below capacity).  On state pairs one driver move apart,
the expected count distance after one coupled round contracts, which
certifies the mixing rate; this module verifies that contraction
exhaustively and exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .errors import ContractionFailure, OutOfScopeError
from .grid import Grid, RequestModel, uniform_request_model
from .states import StateSpace, neighbor_pairs


def pair_distance(x: Sequence[int], y: Sequence[int]) -> int:
    """Count metric: total drivers that would have to move to turn x into y."""
    if len(x) != len(y):
        raise ValueError("states live on different location sets")
    return sum(abs(int(a) - int(b)) for a, b in zip(x, y))


def apply_request(counts: tuple, a: int, b: int, c: int) -> tuple:
    """One feasibility-rule round: move a driver a -> b when legal, else no change."""
    if a == b or counts[a] < 1 or counts[b] >= c:
        return counts
    out = list(counts)
    out[a] -= 1
    out[b] += 1
    return tuple(out)


def coupled_step_distribution(x, y, model: RequestModel, c: int) -> dict:
    """Joint one-round law of two copies driven by the same request draw.

    Only defined on pairs one driver move apart (the pairs contraction is
    stated over).  Returns {(x', y'): probability}; any idle mass stays put.
    """
    x = tuple(int(v) for v in x)
    y = tuple(int(v) for v in y)
    if pair_distance(x, y) != 2:
        raise ValueError(f"{x} and {y} are not one driver move apart")
    n = model.n
    out: dict = {}
    total = Fraction(0) if model.exact else 0.0
    for a in range(n):
        for b in range(n):
            pr = model.p[a, b]
            if pr == 0:
                continue
            key = (apply_request(x, a, b, c), apply_request(y, a, b, c))
            out[key] = out.get(key, 0) + pr
            total = total + pr
    idle = (Fraction(1) if model.exact else 1.0) - total
    if idle != 0:
        key = (x, y)
        out[key] = out.get(key, 0) + idle
    return out


@dataclass
class PairRecord:
    """Contraction bookkeeping for one coupled state pair."""

    x: int
    y: int
    expected_distance: Fraction
    ratio: Fraction


@dataclass
class CouplingReport:
    """Exhaustive contraction summary over all one-move state pairs.

    worst_beta is the largest one-round ratio E[d']/d; with ratios at most
    1 - 1/n^2 the chain forgets its start no slower than that geometric
    rate, and tau_bound converts it into a mixing-time bound via the
    diameter 2m of the count metric.
    """

    n: int
    m: int
    c: int
    p: Fraction
    records: list[PairRecord]
    worst_beta: Fraction
    target: Fraction
    diameter: int

    @property
    def pair_count(self) -> int:
        return len(self.records)

    def worst_pairs(self) -> list[PairRecord]:
        return [r for r in self.records if r.ratio == self.worst_beta]

    def tau_bound(self, eps: float) -> float:
        """Mixing rounds guaranteed by the contraction: ln(D/eps)/(1 - beta)."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        return math.log(self.diameter / eps) / (1.0 - float(self.worst_beta))


def verify_contraction(grid: Grid, m: int, c: int, eps: float = 0.01) -> CouplingReport:
    """Check every one-move pair contracts under the identity coupling.

    Uses the uniform unit-mass request model (rate 1/n^2 on every ordered
    pair) in exact rationals.  Capacities above 2 are outside the regime
    the contraction argument covers and are refused; any pair whose ratio
    exceeds 1 - 1/n^2 raises a contraction failure listing the offenders.
    """
    if c not in (1, 2):
        raise OutOfScopeError(f"contraction argument covers capacities 1 and 2, got c={c}")
    n = grid.n
    p = Fraction(1, n * n)
    model = uniform_request_model(grid, p, weights=Fraction(1))
    space = StateSpace(grid, m, c)
    arr = space.as_array()
    target = 1 - Fraction(1, n * n)
    records: list[PairRecord] = []
    offenders: list[PairRecord] = []
    worst = Fraction(0)
    for pair in neighbor_pairs(space):
        x = tuple(int(v) for v in arr[pair.x])
        y = tuple(int(v) for v in arr[pair.y])
        joint = coupled_step_distribution(x, y, model, c)
        expected = Fraction(0)
        for (xn, yn), prob in joint.items():
            expected += prob * pair_distance(xn, yn)
        ratio = expected / 2
        rec = PairRecord(pair.x, pair.y, expected, ratio)
        records.append(rec)
        if ratio > worst:
            worst = ratio
        if ratio > target:
            offenders.append(rec)
    if offenders:
        raise ContractionFailure(
            f"{len(offenders)} pair(s) exceed the contraction target {target}",
            pairs=offenders,
        )
    return CouplingReport(
        n=n, m=m, c=c, p=p, records=records, worst_beta=worst, target=target, diameter=2 * m
    )
