"""Dispatch policies: probing rules, single-request outcomes, and exact per-state profit.

All policies see a request ``(u, v)`` and pick a serving location near the
origin ``u``.  A dispatch from serving location ``k`` succeeds when ``k``
holds a driver and the destination has spare capacity; a dispatch whose
serving location *is* the destination leaves every count unchanged, so the
capacity check is vacuous there and a driver at ``v`` suffices.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .grid import DIRECTIONS, Grid, RequestModel

#: The clockwise direction order, the default neighbor scan for rand.
PHI_CLOCKWISE = DIRECTIONS

#: All 24 direction orders accepted by the rand policy.
ALL_PHIS = tuple(itertools.permutations(DIRECTIONS))

_KINDS = ("nadap", "rand", "greedy")
_BOUNDARY_MODES = ("renormalize", "lost")


@dataclass(frozen=True)
class PolicySpec:
    """A parsed policy: kind plus its parameters.

    boundary controls how nadap spreads its neighbor-probe mass at grid
    edges: "renormalize" (default) splits 1 - alpha over the in-grid
    neighbors, "lost" gives each of the four compass directions
    (1 - alpha) / 4 and discards off-grid draws as rejections.
    origin_first controls whether greedy always tries the request origin
    before count-sorted neighbors (default) or pools the origin into the
    count-sorted candidate list.
    """

    kind: str
    alpha: float | None = None
    phi: tuple[str, str, str, str] = PHI_CLOCKWISE
    boundary: str = "renormalize"
    origin_first: bool = True

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.kind == "nadap":
            if self.alpha is None or not (0 < float(self.alpha) <= 1):
                raise ValueError(f"nadap needs alpha in (0, 1], got {self.alpha}")
            if self.boundary not in _BOUNDARY_MODES:
                raise ValueError(f"boundary must be one of {_BOUNDARY_MODES}")
        if self.kind == "rand":
            if tuple(self.phi) not in ALL_PHIS:
                raise ValueError(f"phi must be a permutation of {DIRECTIONS}, got {self.phi}")
        object.__setattr__(self, "phi", tuple(self.phi))

    def label(self) -> str:
        if self.kind == "nadap":
            base = f"nadap:{float(self.alpha):g}"
            return base if self.boundary == "renormalize" else base + ":lost"
        if self.kind == "rand":
            return "rand:" + "".join(self.phi)
        return "greedy" if self.origin_first else "greedy:pool"


def parse_policy(text: str) -> PolicySpec:
    """Parse ``nadap:0.8``, ``rand:NESW``, or ``greedy`` (see PolicySpec for suffixes)."""
    parts = text.strip().split(":")
    kind = parts[0].lower()
    if kind == "nadap":
        if len(parts) < 2:
            raise ValueError("nadap needs an alpha, e.g. nadap:0.8")
        alpha = float(parts[1])
        boundary = "renormalize"
        if len(parts) == 3:
            boundary = {"lost": "lost", "renorm": "renormalize", "renormalize": "renormalize"}.get(parts[2])
            if boundary is None:
                raise ValueError(f"unknown nadap boundary mode {parts[2]!r}")
        elif len(parts) > 3:
            raise ValueError(f"malformed policy {text!r}")
        return PolicySpec("nadap", alpha=alpha, boundary=boundary)
    if kind == "rand":
        if len(parts) != 2 or len(parts[1]) != 4:
            raise ValueError("rand needs a 4-letter direction order, e.g. rand:NESW")
        phi = tuple(parts[1].upper())
        return PolicySpec("rand", phi=phi)
    if kind == "greedy":
        if len(parts) == 1:
            return PolicySpec("greedy")
        if len(parts) == 2 and parts[1] == "pool":
            return PolicySpec("greedy", origin_first=False)
        raise ValueError(f"malformed policy {text!r}")
    raise ValueError(f"unknown policy {text!r}")


@dataclass(frozen=True)
class DispatchOutcome:
    """Result of offering one request to a policy in one state."""

    chosen: int | None
    success: bool
    profit: float


def can_serve(counts: Sequence[int], serving: int, dest: int, c: int) -> bool:
    """Feasibility of dispatching a driver at ``serving`` to ``dest``.

    A self-dispatch (serving == dest) moves nothing, so only driver
    presence matters; otherwise the destination must be below capacity.
    """
    return counts[serving] >= 1 and (serving == dest or counts[dest] < c)


def nadap_probe_weights(grid: Grid, origin: int, alpha, boundary: str = "renormalize"):
    """Candidate serving locations and their probe probabilities for nadap.

    Returns a list of ``(location, weight)``; a ``None`` location collects
    the mass that draws an off-grid direction (rejected outright).  Exact
    inputs (Fraction alpha) produce exact weights.
    """
    nbrs = grid.neighbors(origin)
    one = Fraction(1) if isinstance(alpha, Fraction) else 1.0
    rest = one - alpha
    out = [(origin, alpha)]
    if boundary == "renormalize":
        if nbrs:
            share = rest / len(nbrs)
            out.extend((k, share) for k in nbrs)
        elif rest != 0:
            out.append((None, rest))
    else:
        share = rest / 4
        out.extend((k, share) for k in nbrs)
        lost = rest - share * len(nbrs)
        if lost != 0:
            out.append((None, lost))
    return out


def dispatch_nadap(
    state: Sequence[int],
    request: tuple[int, int],
    model: RequestModel,
    alpha: float,
    rng: np.random.Generator,
    c: int,
    boundary: str = "renormalize",
) -> DispatchOutcome:
    """Probe the origin with probability alpha, else one neighbor; no fallback.

    One uniform draw decides the candidate.  In "lost" mode the four
    compass directions get (1 - alpha) / 4 each and off-grid draws reject.
    """
    u, v = request
    grid = model.grid
    draw = rng.random()
    if draw < alpha or alpha >= 1:
        cand = u
    else:
        frac = (draw - alpha) / (1 - alpha)
        if boundary == "renormalize":
            nbrs = grid.neighbors(u)
            if not nbrs:
                return DispatchOutcome(None, False, 0.0)
            cand = nbrs[min(int(frac * len(nbrs)), len(nbrs) - 1)]
        else:
            direction = DIRECTIONS[min(int(frac * 4), 3)]
            cand = grid.neighbor_toward(u, direction)
            if cand is None:
                return DispatchOutcome(None, False, 0.0)
    ok = can_serve(state, cand, v, c)
    return DispatchOutcome(cand, ok, model.w[u, v] if ok else 0.0)


def rand_scan_order(grid: Grid, origin: int, phi: Sequence[str]) -> list[int]:
    """In-grid neighbors of ``origin`` in phi order (off-grid directions skipped)."""
    out = []
    for direction in phi:
        k = grid.neighbor_toward(origin, direction)
        if k is not None:
            out.append(k)
    return out


def dispatch_rand(
    state: Sequence[int],
    request: tuple[int, int],
    model: RequestModel,
    phi: Sequence[str],
    c: int,
) -> DispatchOutcome:
    """Serve from the origin if occupied, else the first occupied neighbor in phi order."""
    u, v = request
    chosen = None
    if state[u] >= 1:
        chosen = u
    else:
        for k in rand_scan_order(model.grid, u, phi):
            if state[k] >= 1:
                chosen = k
                break
    if chosen is None:
        return DispatchOutcome(None, False, 0.0)
    ok = can_serve(state, chosen, v, c)
    return DispatchOutcome(chosen, ok, model.w[u, v] if ok else 0.0)


def greedy_candidates(grid: Grid, state: Sequence[int], origin: int, origin_first: bool = True) -> list[int]:
    """Candidate order for greedy: origin first, then neighbors by falling count.

    Count ties break clockwise from North (the grid's neighbor order).
    With origin_first=False the origin joins the count-sorted pool and wins
    ties.
    """
    nbrs = grid.neighbors(origin)
    if origin_first:
        ranked = sorted(range(len(nbrs)), key=lambda i: (-state[nbrs[i]], i))
        return [origin] + [nbrs[i] for i in ranked]
    pool = [(origin, -1)] + [(k, i) for i, k in enumerate(nbrs)]
    pool.sort(key=lambda item: (-state[item[0]], item[1]))
    return [k for k, _ in pool]


def dispatch_greedy(
    state: Sequence[int],
    request: tuple[int, int],
    model: RequestModel,
    c: int,
    origin_first: bool = True,
) -> DispatchOutcome:
    """Serve from the first occupied candidate in greedy order; no fallback on full destination."""
    u, v = request
    chosen = None
    for k in greedy_candidates(model.grid, state, u, origin_first):
        if state[k] >= 1:
            chosen = k
            break
    if chosen is None:
        return DispatchOutcome(None, False, 0.0)
    ok = can_serve(state, chosen, v, c)
    return DispatchOutcome(chosen, ok, model.w[u, v] if ok else 0.0)


def dispatch(
    state: Sequence[int],
    request: tuple[int, int],
    model: RequestModel,
    policy: PolicySpec,
    c: int,
    rng: np.random.Generator | None = None,
) -> DispatchOutcome:
    """Offer one request to ``policy``; nadap needs a randomness source."""
    if policy.kind == "nadap":
        if rng is None:
            raise ValueError("nadap dispatch needs a randomness source")
        return dispatch_nadap(state, request, model, policy.alpha, rng, c, policy.boundary)
    if policy.kind == "rand":
        return dispatch_rand(state, request, model, policy.phi, c)
    return dispatch_greedy(state, request, model, c, policy.origin_first)


def serving_location(state: Sequence[int], request: tuple[int, int], policy: PolicySpec, grid: Grid):
    """Deterministic serving location for rand/greedy (None when all candidates empty)."""
    u, _ = request
    if policy.kind == "rand":
        if state[u] >= 1:
            return u
        for k in rand_scan_order(grid, u, policy.phi):
            if state[k] >= 1:
                return k
        return None
    if policy.kind == "greedy":
        for k in greedy_candidates(grid, state, u, policy.origin_first):
            if state[k] >= 1:
                return k
        return None
    raise ValueError("nadap has no deterministic serving location")


def expected_step_profit(state: Sequence[int], model: RequestModel, policy: PolicySpec, c: int):
    """Exact expected profit of one round in ``state``: E[sum_r p_r w_r success_r].

    Averages over the request draw and, for nadap, the probe coin.  Exact
    (Fraction) model entries keep the result exact.
    """
    grid = model.grid
    n = grid.n
    total = 0
    for u in range(n):
        row_p = model.p[u]
        row_w = model.w[u]
        if policy.kind == "nadap":
            cands = nadap_probe_weights(grid, u, policy.alpha, policy.boundary)
            for v in range(n):
                pv = row_p[v]
                if pv == 0 or row_w[v] == 0:
                    continue
                prob = 0
                for k, wgt in cands:
                    if k is not None and can_serve(state, k, v, c):
                        prob = prob + wgt
                total = total + pv * row_w[v] * prob
        else:
            chosen = serving_location(state, (u, u), policy, grid)
            if chosen is None:
                continue
            for v in range(n):
                pv = row_p[v]
                if pv == 0 or row_w[v] == 0:
                    continue
                if can_serve(state, chosen, v, c):
                    total = total + pv * row_w[v]
    return total
