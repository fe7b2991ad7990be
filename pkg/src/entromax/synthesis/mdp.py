"""Entropy upper bounds from the fully observable counterpart.

The unconstrained bound is computed by value iteration. Its per-state step

    max_p  H(sum_a p_a P_a) + beta * sum_a p_a P_a . nu

is a capacity-type problem, solved with Blahut-Arimoto style multiplicative
updates (mirror ascent with a natural step), whose duality gap
``max_a g_a - p . g`` bounds the suboptimality.

The constrained bound is a convex program over discounted state-action
occupancies x(s, a): with flows y(s, s') = sum_a x(s, a) P(s'|s, a) and
x(s) = sum_a x(s, a), the entropy is sum_s x(s) H(y(s, .) / x(s)), a sum of
perspectives of the entropy, and the reward constraint is linear.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from ..evaluation import DivergentEntropy
from ..model import Pomdp, require_valid, to_fully_observable
from ..pmc import LOG2, Instantiation, build_pmc, chain_memory_structure
from .ccp import SynthesisConfig, SynthesisResult, synth_with_restarts
from .nlp import SolverFailure, _absorbing_states, _is_acyclic


@dataclass(frozen=True, eq=False)
class MdpBound:
    value: float
    nu: np.ndarray
    policy: np.ndarray  # (S, A)
    iterations: int


def _check_beta(model: Pomdp, beta: float) -> np.ndarray:
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    absorbing = _absorbing_states(model)
    if beta == 1.0:
        adj = model.transition.max(axis=1) > 0
        idx = np.flatnonzero(~absorbing)
        if not _is_acyclic(adj[np.ix_(idx, idx)]):
            raise DivergentEntropy("beta = 1 needs acyclic non-absorbing states")
    return absorbing


def inner_maximize(P_s: np.ndarray, w: np.ndarray, tol: float = 1e-10,
                   max_iter: int = 100000, p0=None):
    """Maximize ``H(p @ P_s) + p @ (P_s @ w)`` over the simplex, in bits.

    ``P_s`` is (A, S'). Returns ``(value, p)``.
    """
    A = P_s.shape[0]
    lin = P_s @ w
    p = np.full(A, 1.0 / A) if p0 is None else np.asarray(p0, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(max_iter):
            m = p @ P_s
            logm = np.where(m > 0, np.log2(np.where(m > 0, m, 1.0)), 0.0)
            g = -(P_s @ logm) + lin  # per-action cross entropy plus continuation
            val = float(p @ g)
            if g.max() - val <= tol:
                break
            z = LOG2 * (g - g.max())
            p = p * np.exp(z)
            p /= p.sum()
    m = p @ P_s
    ent = -np.sum(np.where(m > 0, m * np.log2(np.where(m > 0, m, 1.0)), 0.0))
    return float(ent + p @ lin), p


def max_entropy_mdp(model: Pomdp, beta: float, tol: float | None = None,
                    max_iter: int = 100000) -> MdpBound:
    """Unconstrained maximum discounted entropy of the fully observable model."""
    require_valid(model)
    absorbing = _check_beta(model, beta)
    S, A, _ = model.transition.shape
    stop = 1e-7 * (1 - beta) if tol is None else tol
    stop = max(stop, 1e-12)
    nu = np.zeros(S)
    policy = np.full((S, A), 1.0 / A)
    live = np.flatnonzero(~absorbing)
    inner_tol = min(1e-10, stop / 10)
    for it in range(1, max_iter + 1):
        new = np.zeros(S)
        for s in live:
            new[s], policy[s] = inner_maximize(model.transition[s], beta * nu, inner_tol,
                                               p0=policy[s])
        diff = np.max(np.abs(new - nu), initial=0.0)
        nu = new
        if diff <= stop:
            break
    return MdpBound(float(nu[model.initial_index]), nu, policy, it)


@dataclass(frozen=True, eq=False)
class OccupancySolution:
    value: float
    reward: float
    occupancy: np.ndarray  # x(s, a)
    policy: np.ndarray


def max_entropy_occupancy(model: Pomdp, beta: float, gamma_threshold: float = -np.inf,
                          reward_convention: str = "current",
                          tolerance: float = 1e-9) -> OccupancySolution:
    """Globally optimal constrained entropy over stationary state policies.

    Raises :class:`SolverFailure` when the threshold is infeasible.
    """
    require_valid(model)
    absorbing = _check_beta(model, beta)
    R = build_pmc(model, chain_memory_structure(1), reward_convention).reward_sa
    if beta == 1.0 and np.any(R[absorbing] != 0):
        raise ValueError("beta = 1 needs zero reward on absorbing states")
    S, A, _ = model.transition.shape
    P = model.transition
    # absorbing states carry no entropy; at beta = 1 they are dropped entirely
    live = np.flatnonzero(~absorbing) if beta == 1.0 else np.arange(S)
    pos = {int(s): i for i, s in enumerate(live)}
    n = live.size
    x = cp.Variable((n, A), nonneg=True)
    xs = cp.sum(x, axis=1)
    inflow = np.zeros((n, n * A))
    for i, s in enumerate(live):
        for a in range(A):
            for s2 in np.flatnonzero(P[s, a]):
                if int(s2) in pos:
                    inflow[pos[int(s2)], i * A + a] += P[s, a, s2]
    e = np.zeros(n)
    init = model.initial_index
    if init in pos:
        e[pos[init]] = 1.0
    cons = [xs == e + beta * (inflow @ cp.reshape(x, (n * A,), order="C"))]
    ent_terms = []
    for i, s in enumerate(live):
        succ = np.flatnonzero(P[s].sum(axis=0) > 0)
        if succ.size <= 1:
            continue
        y = P[s][:, succ].T @ x[i]  # (len(succ),)
        ent_terms.append(-cp.sum(cp.rel_entr(y, cp.multiply(np.ones(succ.size), xs[i]))))
    objective = (sum(ent_terms) / LOG2) if ent_terms else cp.Constant(0.0)
    reward = cp.sum(cp.multiply(R[live], x))
    if np.isfinite(gamma_threshold):
        cons.append(reward >= gamma_threshold)
    prob = cp.Problem(cp.Maximize(objective), cons)
    try:
        prob.solve(solver="CLARABEL", tol_gap_abs=tolerance, tol_gap_rel=tolerance,
                   tol_feas=tolerance, max_iter=500)
    except cp.error.SolverError as exc:
        raise SolverFailure(str(exc)) from None
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise SolverFailure(f"occupancy program status {prob.status}")
    xv = np.maximum(np.asarray(x.value), 0.0)
    occ = np.zeros((S, A))
    occ[live] = xv
    tot = occ.sum(axis=1, keepdims=True)
    policy = np.where(tot > 1e-12, occ / np.where(tot > 0, tot, 1.0), 1.0 / A)
    return OccupancySolution(float(prob.value), float(reward.value), occ, policy)


def max_entropy_mdp_constrained(model: Pomdp, beta: float, gamma_threshold: float,
                                config: SynthesisConfig | None = None,
                                method: str = "occupancy", initial_points=(),
                                jobs: int = 1) -> SynthesisResult:
    """Constrained entropy bound of the fully observable counterpart.

    ``method="occupancy"`` solves the convex occupancy program (global
    optimum) and reports its policy as a memoryless controller, re-evaluated
    exactly. ``method="ccp"`` runs the restarted CCP with k = 1 on the fully
    observable model, plus any ``initial_points``.
    """
    from .ccp import AllRestartsFailed, _exact

    config = config or SynthesisConfig()
    config = SynthesisConfig(**{**config.__dict__, "beta": beta,
                                "gamma_threshold": gamma_threshold})
    full = to_fully_observable(model)
    pmc = build_pmc(full, chain_memory_structure(1), config.reward_convention)
    if method == "ccp":
        return synth_with_restarts(pmc, config, initial_points, jobs=jobs)
    if method != "occupancy":
        raise ValueError(f"unknown method {method!r}")
    try:
        sol = max_entropy_occupancy(model, beta, gamma_threshold, config.reward_convention)
    except SolverFailure:
        raise AllRestartsFailed([]) from None
    gamma = sol.policy[None, :, :]
    ex = _exact(pmc, gamma.reshape(-1), beta, gamma_threshold)
    return SynthesisResult(Instantiation(gamma), ex.entropy, ex.reward, 0.0, 0,
                           "converged_feasible" if ex.feasible else "slack_positive",
                           ex.feasible, (), gamma_threshold, beta, (0,))
