"""Exact dispatch chains: transition matrices, stationary analysis, mixing, and bounds.

Chains live on the driver-count state space; one round offers at most one
request and moves at most one driver, so every off-diagonal transition
connects states one driver move apart.  Rejected and absent requests fold
into the diagonal, which keeps every row stochastic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import HorizonTooShortError, IterationLimitError, SizeLimitError
from .grid import Grid, RequestModel
from .policies import (
    PolicySpec,
    can_serve,
    nadap_probe_weights,
    rand_scan_order,
    serving_location,
)
from .states import StateSpace, neighbor_pairs

#: At or below this many states, stationary solves are direct (elimination).
DENSE_SOLVE_LIMIT = 2000

#: At or below this many states, worst-case mixing curves cover every start.
MIXING_SIZE_LIMIT = 2000

ROW_SUM_TOL = 1e-12
MONOTONE_SLACK = 1e-10


@dataclass
class TransitionMatrix:
    """Sparse row-major transition kernel over a driver-count state space.

    rows[i] maps destination rank -> probability (diagonal included).
    Entries may be exact Fractions; ``exact`` records that.
    """

    space: StateSpace
    rows: list[dict]
    policy: PolicySpec | None = None
    exact: bool = False

    @property
    def size(self) -> int:
        return self.space.size

    def entry(self, x: int, y: int):
        return self.rows[x].get(y, Fraction(0) if self.exact else 0.0)

    def diagonal(self) -> np.ndarray:
        return np.array([float(self.rows[i].get(i, 0)) for i in range(self.size)])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        for i, row in enumerate(self.rows):
            for j, val in row.items():
                out[i, j] = float(val)
        return out

    def to_csr(self) -> sp.csr_array:
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for row in self.rows:
            for j in sorted(row):
                indices.append(j)
                data.append(float(row[j]))
            indptr.append(len(indices))
        return sp.csr_array(
            (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
            shape=(self.size, self.size),
        )

    def row_sum_error(self) -> float:
        worst = 0.0
        for row in self.rows:
            total = sum(row.values())
            worst = max(worst, abs(float(total) - 1.0))
        return worst


def _zero_one(exact: bool):
    return (Fraction(0), Fraction(1)) if exact else (0.0, 1.0)


def _finish_rows(space: StateSpace, off_rows: list[dict], exact: bool) -> list[dict]:
    """Attach the mass-conserving diagonal to per-state off-diagonal rows."""
    zero, one = _zero_one(exact)
    rows = []
    for i, off in enumerate(off_rows):
        row = {j: val for j, val in off.items() if val != 0}
        total = zero
        for val in row.values():
            total = total + val
        row[i] = one - total
        rows.append(row)
    return rows


def probe_rate_matrix(grid: Grid, model: RequestModel, alpha, boundary: str = "renormalize"):
    """Per-round rate q[u, v] of a successful probe moving a driver from u to v.

    A driver at u is asked to serve destination v when the request (u, v)
    arrives and the origin probe fires, or when a request (k, v) arrives at
    a neighbor k of u and the neighbor probe lands on u.  The landing
    weight is (1 - alpha) split over k's in-grid neighbors (renormalize
    boundary) or (1 - alpha)/4 per compass direction (lost boundary).
    """
    n = grid.n
    exact = model.exact and isinstance(alpha, Fraction)
    zero, one = _zero_one(exact)
    rest = one - alpha
    q = [[zero] * n for _ in range(n)]
    for u in range(n):
        for v in range(n):
            acc = alpha * model.p[u, v]
            for k in grid.neighbors(u):
                wgt = rest / len(grid.neighbors(k)) if boundary == "renormalize" else rest / 4
                acc = acc + wgt * model.p[k, v]
            q[u][v] = acc
    return q


def build_transition_nadap(
    space: StateSpace, model: RequestModel, alpha, boundary: str = "renormalize"
) -> TransitionMatrix:
    """Exact chain of the origin-probing policy, assembled from per-pair probe rates.

    Probe rates are state-independent, so the off-diagonal entry of every
    feasible one-move pair (x, y) via u -> v is exactly q[u, v].
    """
    if not (0 < float(alpha) <= 1):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    exact = model.exact and isinstance(alpha, Fraction)
    q = probe_rate_matrix(space.grid, model, alpha, boundary)
    off_rows: list[dict] = [{} for _ in range(space.size)]
    for pair in neighbor_pairs(space):
        val = q[pair.u][pair.v]
        if val != 0:
            off_rows[pair.x][pair.y] = val
    spec = PolicySpec("nadap", alpha=float(alpha), boundary=boundary)
    return TransitionMatrix(space, _finish_rows(space, off_rows, exact), spec, exact)


def build_transition_rand(space: StateSpace, model: RequestModel, phi) -> TransitionMatrix:
    """Exact chain of the fixed-scan policy via its supportive-origin mass.

    The entry of a one-move pair (x, y) via u -> v collects the request
    mass the scan is certain to route through u: requests originating at u
    itself (u is occupied in x by construction) plus requests from each
    empty neighbor k of u whose scan reaches u before any other occupied
    location.
    """
    phi = tuple(phi)
    grid = space.grid
    exact = model.exact
    zero, _ = _zero_one(exact)
    scan = [rand_scan_order(grid, k, phi) for k in range(grid.n)]
    arr = space.as_array()
    off_rows: list[dict] = [{} for _ in range(space.size)]
    for pair in neighbor_pairs(space):
        x = arr[pair.x]
        u, v = pair.u, pair.v
        mass = model.p[u, v]
        for k in grid.neighbors(u):
            if x[k] != 0:
                continue
            routed = True
            for ahead in scan[k]:
                if ahead == u:
                    break
                if x[ahead] >= 1:
                    routed = False
                    break
            if routed:
                mass = mass + model.p[k, v]
        if mass != 0:
            off_rows[pair.x][pair.y] = mass
    spec = PolicySpec("rand", phi=phi)
    return TransitionMatrix(space, _finish_rows(space, off_rows, exact), spec, exact)


def build_transition_from_policy(space: StateSpace, model: RequestModel, policy: PolicySpec) -> TransitionMatrix:
    """Definitional chain builder: accumulate every request's dispatch outcome.

    Slower than the closed-form builders but policy-agnostic; it is the
    reference the specialized constructions are tested against, and the
    only exact builder for the greedy policy.
    """
    grid = space.grid
    c = space.c
    exact = model.exact and (policy.kind != "nadap" or isinstance(policy.alpha, Fraction))
    zero, _ = _zero_one(exact)
    probe = None
    if policy.kind == "nadap":
        probe = [nadap_probe_weights(grid, u, policy.alpha, policy.boundary) for u in range(grid.n)]
    off_rows: list[dict] = [{} for _ in range(space.size)]
    for ix in range(space.size):
        x = space.unrank(ix)
        row = off_rows[ix]
        for u, v in model.pairs():
            pv = model.p[u, v]
            if policy.kind == "nadap":
                for k, wgt in probe[u]:
                    if k is None or wgt == 0 or k == v or not can_serve(x, k, v, c):
                        continue
                    iy = space.move_rank(x, k, v)
                    row[iy] = row.get(iy, zero) + pv * wgt
            else:
                k = serving_location(x, (u, v), policy, grid)
                if k is None or k == v or not can_serve(x, k, v, c):
                    continue
                iy = space.move_rank(x, k, v)
                row[iy] = row.get(iy, zero) + pv
    return TransitionMatrix(space, _finish_rows(space, off_rows, exact), policy, exact)


def same_transitions(a: TransitionMatrix, b: TransitionMatrix, tol=0) -> bool:
    """Entrywise equality of two kernels; tol=0 demands exact equality."""
    if a.size != b.size:
        return False
    for ra, rb in zip(a.rows, b.rows):
        keys = set(ra) | set(rb)
        for j in keys:
            da = ra.get(j, 0)
            db = rb.get(j, 0)
            if tol == 0:
                if da != db:
                    return False
            elif abs(float(da) - float(db)) > tol:
                return False
    return True


# ---------------------------------------------------------------------------
# Stationary analysis


@dataclass
class StationaryResult:
    """Stationary distribution with its occupancy maps and solver diagnostics.

    gamma[u, v] is the stationary probability that a request (u, v) offered
    to a driver at u is feasible: u holds a driver and, unless v == u (a
    self-trip moves nobody), v is below capacity; the diagonal therefore
    reduces to driver presence alone.  eta[u, v] keeps both of its clauses
    literal: some location in the closed neighborhood of u holds a driver,
    and v is below capacity.
    """

    space: StateSpace
    pi: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    residual: float
    method: str
    policy: PolicySpec | None = None


def _gth_solve(P: np.ndarray) -> np.ndarray:
    """Stationary vector by state elimination (no subtractions, so no cancellation)."""
    A = P.astype(float).copy()
    size = A.shape[0]
    for k in range(size - 1, 0, -1):
        s = A[k, :k].sum()
        if s <= 0:
            raise ValueError("chain is reducible: elimination hit an absorbing block")
        A[:k, k] /= s
        A[:k, :k] += np.outer(A[:k, k], A[k, :k])
    pi = np.zeros(size)
    pi[0] = 1.0
    for k in range(1, size):
        pi[k] = pi[:k] @ A[:k, k]
    return pi / pi.sum()


def gamma_map(space: StateSpace, pi: np.ndarray) -> np.ndarray:
    """Service-feasibility map: gamma[u, v] = Pr[driver at u and (v == u or room at v)]."""
    arr = space.as_array()
    occ = (arr >= 1).astype(float)
    room = (arr < space.c).astype(float)
    g = (occ * pi[:, None]).T @ room
    np.fill_diagonal(g, occ.T @ pi)
    return g


def eta_map(space: StateSpace, pi: np.ndarray) -> np.ndarray:
    """Neighborhood-availability map: eta[u, v] = Pr[driver within reach of u and room at v]."""
    grid = space.grid
    n = grid.n
    arr = space.as_array()
    reach = np.zeros((n, n))
    for u in range(n):
        for k in grid.closed_neighborhood(u):
            reach[k, u] = 1.0
    near = ((arr @ reach) >= 1).astype(float)
    room = (arr < space.c).astype(float)
    return (near * pi[:, None]).T @ room


def stationary_distribution(
    tm: TransitionMatrix,
    tol: float = 1e-12,
    max_iter: int = 10_000_000,
) -> StationaryResult:
    """Solve pi = pi P: direct elimination when small, power iteration when large.

    The reported residual is the final l1 defect of pi P - pi; iteration
    that cannot reach ``tol`` within ``max_iter`` raises an
    iteration-limit error carrying the last residual.
    """
    size = tm.size
    if size <= DENSE_SOLVE_LIMIT:
        pi = _gth_solve(tm.to_dense())
        P = tm.to_csr()
        residual = float(np.abs(pi @ P - pi).sum())
        method = "elimination"
    else:
        P = tm.to_csr()
        pi = np.full(size, 1.0 / size)
        residual = math.inf
        for _ in range(max_iter):
            nxt = pi @ P
            nxt /= nxt.sum()
            residual = float(np.abs(nxt - pi).sum())
            pi = nxt
            if residual <= tol:
                break
        else:
            raise IterationLimitError(
                f"power iteration residual {residual:.3e} above {tol:.1e} after {max_iter} steps",
                residual=residual,
            )
        method = "power"
    return StationaryResult(
        space=tm.space,
        pi=pi,
        gamma=gamma_map(tm.space, pi),
        eta=eta_map(tm.space, pi),
        residual=residual,
        method=method,
        policy=tm.policy,
    )


# ---------------------------------------------------------------------------
# Structure checks


def _pattern(tm: TransitionMatrix) -> sp.csr_array:
    rows, cols = [], []
    for i, row in enumerate(tm.rows):
        for j, val in row.items():
            if val != 0:
                rows.append(i)
                cols.append(j)
    data = np.ones(len(rows), dtype=np.int8)
    return sp.csr_array((data, (rows, cols)), shape=(tm.size, tm.size))


def check_irreducible(tm: TransitionMatrix) -> bool:
    """True when the positive-entry digraph is one strongly connected class."""
    ncomp, _ = connected_components(_pattern(tm), directed=True, connection="strong")
    return ncomp == 1


def _component_period(adj: list[list[int]], nodes: list[int]) -> int:
    """Period of one strongly connected class: gcd of cycle-length differences."""
    inside = set(nodes)
    root = nodes[0]
    level = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for a in frontier:
            for b in adj[a]:
                if b in inside and b not in level:
                    level[b] = level[a] + 1
                    nxt.append(b)
        frontier = nxt
    g = 0
    for a in nodes:
        for b in adj[a]:
            if b in inside:
                g = gcd(g, level[a] + 1 - level[b])
    return abs(g)


def check_aperiodic(tm: TransitionMatrix) -> bool:
    """True when every communicating class has period 1.

    A positive self-loop settles a class immediately; otherwise the period
    is the gcd of closed-walk length differences found by a breadth-first
    leveling.  Single states with no transitions count as aperiodic.
    """
    pat = _pattern(tm)
    ncomp, labels = connected_components(pat, directed=True, connection="strong")
    diag = tm.diagonal()
    if ncomp == 1 and (diag > 0).any():
        return True
    adj: list[list[int]] = [[] for _ in range(tm.size)]
    coo = pat.tocoo()
    for a, b in zip(coo.row, coo.col):
        adj[a].append(int(b))
    for comp in range(ncomp):
        nodes = [int(i) for i in np.flatnonzero(labels == comp)]
        if any(diag[i] > 0 for i in nodes):
            continue
        period = _component_period(adj, nodes)
        if period not in (0, 1):
            return False
    return True


# ---------------------------------------------------------------------------
# Mixing


def tv_distance(mu, nu) -> float:
    """Total variation distance: half the l1 distance between two distributions."""
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise ValueError(f"length mismatch: {mu.shape} vs {nu.shape}")
    return 0.5 * float(np.abs(mu - nu).sum())


@dataclass
class MixingReport:
    """Worst-case distance-to-stationary curve and the thresholds it crosses.

    d_curve[t] = max over tracked starts of the total variation distance
    after t rounds; tau[eps] is the first t with d(t) <= eps.  envelope,
    when present, is a certified (C, beta) with d(t) <= C beta^t.
    """

    d_curve: np.ndarray
    tau: dict
    envelope: tuple | None = None
    exhaustive: bool = True
    start_count: int = 0

    def under_envelope(self) -> bool | None:
        if self.envelope is None:
            return None
        C, beta = self.envelope
        t = np.arange(len(self.d_curve))
        return bool((self.d_curve <= C * beta**t + 1e-12).all())


def mixing_analysis(
    tm: TransitionMatrix,
    pi: np.ndarray,
    epsilons: Sequence[float],
    t_max: int,
    start_ranks: Sequence[int] | None = None,
    envelope: tuple | None = None,
) -> MixingReport:
    """Track the worst start's distance to stationary until every threshold is met.

    All starts are propagated together (one dense block against the sparse
    kernel per round).  Above the exhaustive-size limit a start sample must
    be supplied, and the curve is a lower bound flagged non-exhaustive.
    """
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    eps = sorted(set(float(e) for e in epsilons), reverse=True)
    if not eps or eps[-1] <= 0:
        raise ValueError("thresholds must be positive")
    size = tm.size
    if start_ranks is None:
        if size > MIXING_SIZE_LIMIT:
            raise SizeLimitError(
                f"{size} states exceeds the exhaustive mixing limit {MIXING_SIZE_LIMIT}; "
                "pass an explicit start sample"
            )
        starts = np.arange(size)
        exhaustive = True
    else:
        starts = np.asarray(sorted(set(int(s) for s in start_ranks)))
        exhaustive = bool(len(starts) == size)
    P = tm.to_csr()
    D = np.zeros((len(starts), size))
    D[np.arange(len(starts)), starts] = 1.0
    d_curve = [0.5 * float(np.abs(D - pi).sum(axis=1).max())]
    tau: dict = {}
    for e in eps:
        if d_curve[0] <= e:
            tau.setdefault(e, 0)
    t = 0
    while len(tau) < len(eps) and t < t_max:
        D = D @ P
        t += 1
        dt = 0.5 * float(np.abs(D - pi).sum(axis=1).max())
        if dt > d_curve[-1] + MONOTONE_SLACK:
            raise RuntimeError(f"distance to stationary increased at t={t}: {d_curve[-1]} -> {dt}")
        d_curve.append(dt)
        for e in eps:
            if e not in tau and dt <= e:
                tau[e] = t
    curve = np.array(d_curve)
    if len(tau) < len(eps):
        missing = [e for e in eps if e not in tau]
        raise HorizonTooShortError(
            f"d({t_max}) = {curve[-1]:.3e} still above thresholds {missing}",
            d_curve=curve,
        )
    return MixingReport(curve, tau, envelope=envelope, exhaustive=exhaustive, start_count=len(starts))


# ---------------------------------------------------------------------------
# Per-state expected profit and limiting objectives


def esp_profile(space: StateSpace, model: RequestModel, policy: PolicySpec) -> np.ndarray:
    """Expected one-round profit of every state, as a dense float vector.

    Matches expected_step_profit pointwise; vectorized over states so exact
    curves and objectives stay cheap on enumerated spaces.
    """
    grid = space.grid
    n = grid.n
    c = space.c
    arr = space.as_array()
    occ = arr >= 1
    out = np.zeros(space.size)
    if policy.kind == "nadap":
        for u in range(n):
            for k, wgt in nadap_probe_weights(grid, u, policy.alpha, policy.boundary):
                if k is None or wgt == 0:
                    continue
                for v in range(n):
                    coef = model.p[u, v] * model.w[u, v] * wgt
                    if coef == 0:
                        continue
                    mask = occ[:, k] if k == v else occ[:, k] & (arr[:, v] < c)
                    out += float(coef) * mask
        return out
    serving = np.full((space.size, n), -1, dtype=np.int64)
    for u in range(n):
        if policy.kind == "rand":
            chosen = np.where(occ[:, u], u, -1)
            for k in rand_scan_order(grid, u, policy.phi):
                chosen = np.where((chosen < 0) & occ[:, k], k, chosen)
        else:
            nbrs = np.array(grid.neighbors(u), dtype=np.int64)
            if policy.origin_first:
                if len(nbrs):
                    counts = arr[:, nbrs]
                    best = nbrs[np.argmax(counts, axis=1)]
                    fallback = np.where(counts.max(axis=1) >= 1, best, -1)
                else:
                    fallback = np.full(space.size, -1, dtype=np.int64)
                chosen = np.where(occ[:, u], u, fallback)
            else:
                cols = np.concatenate(([u], nbrs))
                counts = arr[:, cols]
                best = cols[np.argmax(counts, axis=1)]
                chosen = np.where(counts.max(axis=1) >= 1, best, -1)
        serving[:, u] = chosen
    for u in range(n):
        sv = serving[:, u]
        has = sv >= 0
        for v in range(n):
            coef = model.p[u, v] * model.w[u, v]
            if coef == 0:
                continue
            ok = has & ((sv == v) | (arr[:, v] < c))
            out += float(coef) * ok
    return out


def limiting_objective(stationary: StationaryResult, model: RequestModel, policy: PolicySpec):
    """Long-run per-round profit under the stationary law of the policy's chain.

    The origin-probing policy admits a closed path through the gamma map
    (probe landings are state-independent); scan policies average the
    per-state expected profit under pi directly.
    """
    if stationary.policy is not None and stationary.policy.label() != policy.label():
        raise ValueError(
            f"stationary result was computed for {stationary.policy.label()}, not {policy.label()}"
        )
    if policy.kind == "nadap":
        grid = stationary.space.grid
        gamma = stationary.gamma
        total = 0.0
        for u in range(grid.n):
            probes = nadap_probe_weights(grid, u, policy.alpha, policy.boundary)
            for v in range(grid.n):
                coef = model.p[u, v] * model.w[u, v]
                if coef == 0:
                    continue
                served = 0.0
                for k, wgt in probes:
                    if k is not None and wgt != 0:
                        served += float(wgt) * gamma[k, v]
                total += float(coef) * served
        return total
    esp = esp_profile(stationary.space, model, policy)
    return float(stationary.pi @ esp)


def uniform_closed_form_objective(n: int, m: int, p, sum_w):
    """Limiting objective when all n^2 request rates equal p and capacity equals m.

    Every location then holds a driver with probability m/(n+m-1) in
    stationarity, and the objective is that availability times the total
    weighted arrival mass: (m p / (n+m-1)) * sum of weights.
    """
    return m * p * sum_w / (n + m - 1)


def uniform_availability(n: int, m: int):
    """Stationary single-location availability m/(n+m-1) in the capacity-free case."""
    return Fraction(m, n + m - 1) if isinstance(n, int) and isinstance(m, int) else m / (n + m - 1)


# ---------------------------------------------------------------------------
# Uniform-case decay envelope and companions


def uniform_decay_envelope(n: int, m: int) -> tuple[float, float]:
    """(C, beta) with d(t) <= C beta^t for uniform unit-mass arrivals and c <= 2."""
    return 2.0 * m, math.exp(-1.0 / n**2)


def uniform_profit_gap_bound(n: int, m: int, sum_w, t):
    """Upper bound on the round-t profit gap |W(t) - W| in the uniform case."""
    return 4.0 * m * float(sum_w) / n**2 * np.exp(-np.asarray(t, dtype=float) / n**2)


def uniform_average_gap_bound(n: int, m: int, sum_w, T):
    """Upper bound on the running-average gap after T rounds in the uniform case."""
    return 4.0 * m * float(sum_w) / np.asarray(T, dtype=float)


def uniform_mixing_bound(n: int, m: int, eps: float) -> float:
    """Upper bound n^2 ln(2m/eps) on the eps-mixing time in the uniform case."""
    return n**2 * math.log(2.0 * m / eps)


# ---------------------------------------------------------------------------
# Exact error curves


@dataclass
class ExactCurves:
    """Exactly propagated profit curves from one start state.

    w_t[t] is the expected round-t profit; limit is the stationary value;
    delta and delta_hat are the per-round and running-average gaps.  When
    map tracking is on, gamma_t[t] / eta_t[t] are the occupancy maps of the
    round-t state law.
    """

    w_t: np.ndarray
    limit: float
    delta: np.ndarray
    obj_running: np.ndarray
    delta_hat: np.ndarray
    gamma_t: np.ndarray | None = None
    eta_t: np.ndarray | None = None


def exact_error_curves(
    tm: TransitionMatrix,
    model: RequestModel,
    policy: PolicySpec,
    x0: Sequence[int],
    T: int,
    stationary: StationaryResult | None = None,
    store_maps: bool = False,
) -> ExactCurves:
    """Propagate the start law T rounds and compare each round's profit to the limit.

    Round t collects the expected profit of the state reached after t
    transitions, so w_t[0] is the start state's own expected profit; the
    running average over rounds 0..T-1 gives the averaged gap.
    """
    if T < 1:
        raise ValueError("need at least one round")
    space = tm.space
    if stationary is None:
        stationary = stationary_distribution(tm)
    esp = esp_profile(space, model, policy)
    limit = float(stationary.pi @ esp)
    P = tm.to_csr()
    mu = np.zeros(space.size)
    mu[space.rank(x0)] = 1.0
    w_t = np.empty(T)
    gamma_t = np.empty((T, space.grid.n, space.grid.n)) if store_maps else None
    eta_t = np.empty((T, space.grid.n, space.grid.n)) if store_maps else None
    for t in range(T):
        w_t[t] = mu @ esp
        if store_maps:
            gamma_t[t] = gamma_map(space, mu)
            eta_t[t] = eta_map(space, mu)
        if t + 1 < T:
            mu = mu @ P
    obj_running = np.cumsum(w_t) / np.arange(1, T + 1)
    return ExactCurves(
        w_t=w_t,
        limit=limit,
        delta=np.abs(w_t - limit),
        obj_running=obj_running,
        delta_hat=np.abs(obj_running - limit),
        gamma_t=gamma_t,
        eta_t=eta_t,
    )


# ---------------------------------------------------------------------------
# The four-state occupancy-pair chain (worst-case convergence witness)


@dataclass(frozen=True)
class OccupancyPairChain:
    """Occupancy chain of a watched (origin, destination) location pair.

    Single-capacity instance, n locations, m drivers, one uniformly random
    request per round; the watched destination starts occupied and the
    watched origin starts empty, the slowest arrangement to forget.  States
    track (origin occupied, destination occupied) as s1=(1,0), s2=(1,1),
    s3=(0,0), s4=(0,1); the probability of s4 is exactly the stationary
    feasibility rate of the watched request, and the closed-form gap shows
    the approach to it is no faster than (1-1/n)^t.
    """

    n: int
    m: int
    P: np.ndarray
    gamma: Fraction

    STATES = ((1, 0), (1, 1), (0, 0), (0, 1))

    def gap(self, t, exact: bool = False):
        """Closed-form |P^t(s1, s4) - gamma| as a difference of two decay modes."""
        n, m = self.n, self.m
        A = Fraction(2 * m * n - n - 2 * m * m, n * (n - 2))
        B = Fraction((m - 1) * (n - m - 1), (n - 1) * (n - 2))
        r1 = Fraction(n - 1, n)
        r2 = Fraction(n * n - 2 * n + 2, n * n)
        if exact:
            return A * r1**t - B * r2**t
        return float(A) * float(r1) ** t - float(B) * float(r2) ** t

    def _gap_float(self, t: np.ndarray) -> np.ndarray:
        n, m = self.n, self.m
        A = (2 * m * n - n - 2 * m * m) / (n * (n - 2))
        B = (m - 1) * (n - m - 1) / ((n - 1) * (n - 2))
        return A * (1 - 1 / n) ** t - B * (1 - 2 / n + 2 / (n * n)) ** t

    def gap_series(self, T: int) -> np.ndarray:
        return self._gap_float(np.arange(T + 1, dtype=float))

    def decay_reference(self, t):
        """Leading-order reference (2m/n) e^{-t/n} the gap is compared against."""
        return 2.0 * self.m / self.n * np.exp(-np.asarray(t, dtype=float) / self.n)

    def ratio_to_reference(self, t):
        return self._gap_float(np.asarray(t, dtype=float)) / self.decay_reference(t)

    def profit_gap_asymptote(self, t, sum_w) -> float:
        """Implied large-t profit-gap scale 2m sum_w / (n^3 e^{t/n})."""
        return 2.0 * self.m * float(sum_w) / (self.n**3 * np.exp(np.asarray(t, dtype=float) / self.n))

    def matrix_gap_series(self, T: int) -> np.ndarray:
        """|P^t(s1, s4) - gamma| by repeated float multiplication (oracle for gap_series)."""
        P = self.P.astype(float)
        row = np.array([1.0, 0.0, 0.0, 0.0])
        out = np.empty(T + 1)
        g = float(self.gamma)
        for t in range(T + 1):
            out[t] = abs(row[3] - g)
            row = row @ P
        return out


def build_occupancy_pair_chain(n: int, m: int) -> OccupancyPairChain:
    """Exact rational 4-state chain for 1 < m < n - 1 (outside that it degenerates)."""
    if not isinstance(n, int) or not isinstance(m, int):
        raise ValueError("n and m must be integers")
    if m <= 1 or m >= n - 1:
        raise ValueError(f"need 1 < m < n - 1, got n={n}, m={m}")
    d = Fraction(1, n * n)
    P = np.empty((4, 4), dtype=object)
    P[0] = [d * (n * n - n + 1), d * (m - 1), d * (n - m - 1), d * 1]
    P[1] = [d * (n - m), d * (n * n - 2 * (n - m)), d * 0, d * (n - m)]
    P[2] = [d * m, d * 0, d * (n * n - 2 * m), d * m]
    P[3] = [d * 1, d * (m - 1), d * (n - m - 1), d * (n * n - n + 1)]
    for i in range(4):
        assert sum(P[i]) == 1
    gamma = Fraction(m, n) * Fraction(n - m, n - 1)
    return OccupancyPairChain(n=n, m=m, P=P, gamma=gamma)
