"""Exact and sampled evaluation of instantiated chains.

All entropies are in bits. The discounted entropy of a chain started in x is
the fixed point ``nu = L + beta * P nu``; with ``beta = 1`` it is finite only
when every closed class reachable from x carries zero local entropy, and the
value is then obtained from the transient block alone.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.csgraph import connected_components

from .pmc import MarkovChain, entropy_bits


class DivergentEntropy(ArithmeticError):
    pass


class DivergentReward(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class EvaluationResult:
    """Discounted value vectors. ``nu`` or ``eta`` is None when not computed.

    States from which the value diverges (only possible with beta = 1 and
    when they are not reachable from the initial state) hold ``inf``.
    """

    beta: float
    nu: np.ndarray | None = None
    eta: np.ndarray | None = None
    initial: int = 0

    @property
    def total_entropy(self) -> float:
        return float(self.nu[self.initial])

    @property
    def total_reward(self) -> float:
        return float(self.eta[self.initial])


def local_entropy(chain: MarkovChain) -> np.ndarray:
    """Entropy (bits) of each row of the transition matrix."""
    return entropy_bits(chain.P, axis=1)


def closed_classes(P: np.ndarray, tol: float = 0.0):
    """Strongly connected components with no outgoing edges.

    Returns ``(labels, closed)`` where ``closed[c]`` says whether component c
    is closed (recurrent).
    """
    adj = P > tol
    n_comp, labels = connected_components(adj, directed=True, connection="strong")
    closed = np.ones(n_comp, dtype=bool)
    rows, cols = np.nonzero(adj)
    leaving = labels[rows] != labels[cols]
    closed[np.unique(labels[rows[leaving]])] = False
    return labels, closed


def _reaches(P: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Boolean mask of states with a positive-probability path into ``targets``."""
    adj = P > 0
    mask = targets.copy()
    frontier = np.flatnonzero(mask)
    while frontier.size:
        preds = np.flatnonzero(adj[:, frontier].any(axis=1) & ~mask)
        mask[preds] = True
        frontier = preds
    return mask


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    lu = scipy.linalg.lu_factor(A, check_finite=False)
    x = scipy.linalg.lu_solve(lu, b, check_finite=False)
    for _ in range(3):
        resid = b - A @ x
        if np.max(np.abs(resid), initial=0.0) <= 1e-10:
            break
        x = x + scipy.linalg.lu_solve(lu, resid, check_finite=False)
    return x


def solve_values(P: np.ndarray, c: np.ndarray, beta: float, initial: int,
                 error=ArithmeticError, zero_tol: float = 1e-12) -> np.ndarray:
    """Solve ``v = c + beta P v``.

    For beta = 1, closed classes with any ``|c| > zero_tol`` make the value
    infinite (or undefined) on every state that can reach them; ``error`` is
    raised if the initial state is one of those. The tolerance absorbs
    round-off such as the entropy of a row summing to 1 - 1e-16.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    n = P.shape[0]
    if beta < 1.0:
        return _solve(np.eye(n) - beta * P, c)
    labels, closed = closed_classes(P)
    in_closed = closed[labels]
    bad_comp = np.zeros(closed.size, dtype=bool)
    for comp in np.flatnonzero(closed):
        if np.any(np.abs(c[labels == comp]) > zero_tol):
            bad_comp[comp] = True
    divergent = _reaches(P, bad_comp[labels])
    if divergent[initial]:
        raise error("value diverges: a closed class with nonzero per-step value is reachable")
    v = np.full(n, np.inf)
    v[in_closed & ~divergent] = 0.0
    transient = ~in_closed & ~divergent
    idx = np.flatnonzero(transient)
    if idx.size:
        A = np.eye(idx.size) - P[np.ix_(idx, idx)]
        v[idx] = _solve(A, c[idx])
    return v


def discounted_entropy(chain: MarkovChain, beta: float) -> EvaluationResult:
    nu = solve_values(chain.P, chain.L, beta, chain.initial, DivergentEntropy)
    return EvaluationResult(beta=beta, nu=nu, initial=chain.initial)


def discounted_reward(chain: MarkovChain, beta: float) -> EvaluationResult:
    eta = solve_values(chain.P, chain.r, beta, chain.initial, DivergentReward)
    return EvaluationResult(beta=beta, eta=eta, initial=chain.initial)


def evaluate(chain: MarkovChain, beta: float) -> EvaluationResult:
    """Both value vectors at once."""
    nu = solve_values(chain.P, chain.L, beta, chain.initial, DivergentEntropy)
    eta = solve_values(chain.P, chain.r, beta, chain.initial, DivergentReward)
    return EvaluationResult(beta=beta, nu=nu, eta=eta, initial=chain.initial)


def forward_distributions(chain: MarkovChain, horizon: int) -> np.ndarray:
    """Row t-1 is the distribution of S_t, for t = 1..horizon."""
    d = np.zeros((horizon, chain.n))
    d[0, chain.initial] = 1.0
    for t in range(1, horizon):
        d[t] = d[t - 1] @ chain.P
    return d


def finite_horizon_entropy(chain: MarkovChain, horizon: int) -> float:
    """Joint entropy H(S_1, ..., S_N) of the chain's first N states."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    d = forward_distributions(chain, horizon)
    return float(np.sum(d[:-1] @ chain.L))


def finite_horizon_reward(chain: MarkovChain, horizon: int) -> float:
    """Expected reward summed over the first N stages."""
    if horizon < 1:
        raise ValueError("horizon must be positive")
    d = forward_distributions(chain, horizon)
    return float(np.sum(d @ chain.r))


@dataclass(frozen=True, eq=False)
class SimulationResult:
    entropy_mean: float
    entropy_se: float
    reward_mean: float
    reward_se: float
    visits: np.ndarray
    visits_se: np.ndarray
    n_paths: int
    paths: np.ndarray | None = None


def simulate(chain: MarkovChain, horizon: int, n_paths: int, seed, beta: float = 1.0,
             keep_paths: bool = False) -> SimulationResult:
    """Sample ``n_paths`` trajectories of ``horizon`` states.

    Per path the entropy sample is the discounted surprisal
    ``sum_t beta^(t-1) * -log2 P(S_{t+1} | S_t)``, whose mean is the
    (truncated) discounted entropy. Reward and visit counts are discounted the
    same way. Standard errors are sample standard deviations over sqrt(n).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    rng = np.random.default_rng(seed)
    n = chain.n
    cum = np.cumsum(chain.P, axis=1)
    cum[:, -1] = 1.0
    cur = np.full(n_paths, chain.initial, dtype=np.int64)
    ent = np.zeros(n_paths)
    rew = np.zeros(n_paths)
    visits = np.zeros((n_paths, n)) if n * n_paths <= 5e7 else None
    visit_sum = np.zeros(n)
    visit_sq = np.zeros(n)
    paths = np.empty((n_paths, horizon), dtype=np.int64) if keep_paths else None
    rows = np.arange(n_paths)
    disc = 1.0
    for t in range(horizon):
        if paths is not None:
            paths[:, t] = cur
        rew += disc * chain.r[cur]
        if visits is not None:
            visits[rows, cur] += disc
        else:
            np.add.at(visit_sum, cur, disc)
        if t == horizon - 1:
            break
        u = rng.random(n_paths)
        nxt = np.empty_like(cur)
        for x in np.unique(cur):
            sel = cur == x
            nxt[sel] = np.searchsorted(cum[x], u[sel], side="right")
        np.minimum(nxt, n - 1, out=nxt)
        ent += disc * -np.log2(chain.P[cur, nxt])
        cur = nxt
        disc *= beta
    sq = np.sqrt(n_paths)
    if visits is not None:
        vmean = visits.mean(axis=0)
        vse = visits.std(axis=0, ddof=1) / sq if n_paths > 1 else np.zeros(n)
    else:
        vmean = visit_sum / n_paths
        vse = np.full(n, np.nan)
        del visit_sq
    se = (lambda x: float(x.std(ddof=1) / sq)) if n_paths > 1 else (lambda x: 0.0)
    return SimulationResult(float(ent.mean()), se(ent), float(rew.mean()), se(rew),
                            vmean, vse, n_paths, paths)


@dataclass(frozen=True, eq=False)
class OccupancyTable:
    """Expected (discounted or horizon-truncated) visits.

    ``chain_values`` is per chain state; ``values`` aggregates chain states
    with the same label (memory marginalized), in first-appearance order.
    """

    states: tuple
    values: np.ndarray
    chain_values: np.ndarray
    mode: str
    parameter: float

    def as_dict(self) -> dict:
        return dict(zip(self.states, self.values.tolist()))

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state_id", "value"])
        for s, v in zip(self.states, self.values):
            w.writerow([s, repr(float(v))])
        return buf.getvalue()


def occupancy(chain: MarkovChain, beta: float | None = None,
              horizon: int | None = None) -> OccupancyTable:
    """Expected discounted visit counts (``beta``) or visit counts over the
    first ``horizon`` states. With beta = 1 recurrent states reached from
    the initial state have infinite occupancy."""
    if (beta is None) == (horizon is None):
        raise ValueError("give exactly one of beta or horizon")
    if horizon is not None:
        x = forward_distributions(chain, horizon).sum(axis=0)
        mode, param = "horizon", horizon
    else:
        e = np.zeros(chain.n)
        e[chain.initial] = 1.0
        if beta < 1:
            x = _solve((np.eye(chain.n) - beta * chain.P).T, e)
        else:
            labels, closed = closed_classes(chain.P)
            rec = closed[labels]
            x = np.zeros(chain.n)
            idx = np.flatnonzero(~rec)
            if idx.size:
                A = (np.eye(idx.size) - chain.P[np.ix_(idx, idx)]).T
                x[idx] = _solve(A, e[idx])
            reach = np.zeros(chain.n, dtype=bool)
            reach[chain.initial] = True
            reach[idx] |= x[idx] > 0
            hit = (x[idx] @ chain.P[np.ix_(idx, np.flatnonzero(rec))]) > 0 if idx.size else []
            rec_idx = np.flatnonzero(rec)
            x[rec_idx[np.asarray(hit, dtype=bool)]] = np.inf
            if rec[chain.initial]:
                x[labels == labels[chain.initial]] = np.inf
        mode, param = "discounted", beta
    names, inverse = np.unique(np.asarray(chain.labels, dtype=object), return_inverse=True)
    order = []
    seen = set()
    for lab in chain.labels:
        if lab not in seen:
            seen.add(lab)
            order.append(lab)
    pos = {lab: i for i, lab in enumerate(order)}
    agg = np.zeros(len(order))
    for i, lab in enumerate(chain.labels):
        agg[pos[lab]] += x[i]
    return OccupancyTable(tuple(order), agg, x, mode, param)


def transition_flow(chain: MarkovChain, occ: OccupancyTable, a: str, b: str) -> float:
    """Expected (discounted) number of moves between states labelled ``a`` and
    ``b``, in either direction."""
    labels = np.asarray(chain.labels, dtype=object)
    ia = np.flatnonzero(labels == a)
    ib = np.flatnonzero(labels == b)
    x = occ.chain_values
    fwd = x[ia] @ chain.P[np.ix_(ia, ib)].sum(axis=1)
    back = x[ib] @ chain.P[np.ix_(ib, ia)].sum(axis=1)
    return float(fwd + back)


def instantiate_occupancy(pmc, u, beta: float):
    """Discounted occupancy of the chain induced by ``u``: ``(table, chain)``."""
    from .pmc import instantiate

    chain = instantiate(pmc, u)
    return occupancy(chain, beta=beta), chain
