"""Bilinear program over an induced parametric chain and its convex
restriction around an expansion point.

For every active product state x = <s, q> with successor memory q' the
nonconvex constraints read

    nu(x)  <= L^u(x) + beta * sum_{z,a,s'} c * gamma[q,z,a] * nu(<s',q'>)
    eta(x) <= r^u(x) + beta * sum_{z,a,s'} c * gamma[q,z,a] * eta(<s',q'>)

with c = O(z|s) P(s'|s,a). Each bilinear product c*v*u is replaced by the
concave under-estimator

    c*h*(v + u) - c*h**2/2 - c/2*(v**2 + u**2),    h = v_hat + u_hat,

which equals c*v*u - c/2*(dv + du)**2, so it is tight at the expansion point.
"""

from __future__ import annotations

import warnings

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from ..pmc import LOG2, InducedPmc, project_simplex


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class BilinearTerms:
    """Catalogue of c * value(y) * gamma[g] occurrences.

    ``row`` and ``col`` index the value variable vector of the kind, ``g``
    the flattened gamma vector, ``tuple_id`` the slack tuple (y, q, z, a).
    """

    row: np.ndarray
    col: np.ndarray
    g: np.ndarray
    c: np.ndarray
    tuple_id: np.ndarray
    n_tuples: int

    def __len__(self):
        return self.row.size


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """Index structures of the bilinear program for one pmc and discount."""

    pmc: InducedPmc
    beta: float
    active: np.ndarray
    nu_states: np.ndarray
    eta_states: np.ndarray
    nu_terms: BilinearTerms
    eta_terms: BilinearTerms
    ent_matrix: sp.csr_matrix    # (entries, n_gamma): successor probabilities
    ent_rows: sp.csr_matrix      # (n_nu, entries): sums entries into rows
    reward_matrix: sp.csr_matrix  # (n_eta, n_gamma)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_gamma(self) -> int:
        k, Z, A = self.pmc.gamma_shape
        return k * Z * A

    @property
    def initial(self) -> int:
        return self.pmc.initial

    @property
    def n_variables(self) -> dict:
        """Variable counts; ``full`` counts nu and eta on every product state."""
        return {
            "nu": self.nu_states.size,
            "eta": self.eta_states.size,
            "gamma": self.n_gamma,
            "slack_nu": self.nu_terms.n_tuples,
            "slack_eta": self.eta_terms.n_tuples,
            "full": 2 * self.pmc.n_states + self.n_gamma,
        }


def _absorbing_states(model) -> np.ndarray:
    """Model states that loop on themselves under every action."""
    P = model.transition
    return np.all(np.isclose(P[np.arange(P.shape[0]), :, np.arange(P.shape[0])], 1.0,
                             rtol=0, atol=1e-12), axis=1)


def _is_acyclic(adj: np.ndarray) -> bool:
    indeg = adj.sum(axis=0).astype(int)
    stack = list(np.flatnonzero(indeg == 0))
    seen = 0
    while stack:
        x = stack.pop()
        seen += 1
        for y in np.flatnonzero(adj[x]):
            indeg[y] -= 1
            if indeg[y] == 0:
                stack.append(y)
    return seen == adj.shape[0]


def _terms(pmc: InducedPmc, rows: np.ndarray, cols: np.ndarray) -> BilinearTerms:
    k = pmc.k
    _, Z, A = pmc.gamma_shape
    col_pos = {int(y): i for i, y in enumerate(cols)}
    out = {"row": [], "col": [], "g": [], "c": [], "key": []}
    for i, x in enumerate(rows):
        s, q = pmc.split(int(x))
        q2 = pmc.structure.successor[q]
        zz, aa, ss = np.nonzero(pmc.coef[s])
        for z, a, s2 in zip(zz, aa, ss):
            y = pmc.index(int(s2), q2)
            if y not in col_pos:
                continue
            g = (q * Z + z) * A + a
            out["row"].append(i)
            out["col"].append(col_pos[y])
            out["g"].append(g)
            out["c"].append(pmc.coef[s, z, a, s2])
            out["key"].append((col_pos[y], g))
    keys = {}
    tuple_id = np.array([keys.setdefault(kk, len(keys)) for kk in out["key"]], dtype=int)
    return BilinearTerms(np.array(out["row"], dtype=int), np.array(out["col"], dtype=int),
                         np.array(out["g"], dtype=int), np.array(out["c"], dtype=float),
                         tuple_id, len(keys))


def build_nlp(pmc: InducedPmc, beta: float) -> NlpProblem:
    """Catalogue the bilinear program restricted to reachable product states.

    States whose model state absorbs under every action get ``nu`` fixed at 0
    (their row is a point mass); they also get ``eta`` fixed at 0 when their
    reward is identically zero. The initial state always keeps its variables.
    With ``beta = 1`` the remaining states must be acyclic and no absorbing
    state may carry reward, otherwise the values are unbounded.
    """
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    active = np.flatnonzero(pmc.reachable())
    absorbing_model = _absorbing_states(pmc.model)
    s_of = active // pmc.k
    absorbing = absorbing_model[s_of]
    zero_reward = np.all(pmc.reward_sa[s_of] == 0, axis=1)
    is_init = active == pmc.initial
    nu_states = active[~absorbing | is_init]
    eta_states = active[~(absorbing & zero_reward) | is_init]
    if beta == 1.0:
        if np.any(absorbing & ~zero_reward):
            raise ValueError("beta = 1 needs zero reward on absorbing states")
        sup = pmc.support()[np.ix_(nu_states, nu_states)].copy()
        np.fill_diagonal(sup, sup.diagonal() & ~absorbing_model[nu_states // pmc.k])
        if not _is_acyclic(sup):
            raise ValueError("beta = 1 needs a model whose non-absorbing states are acyclic; "
                             "use the finite-horizon reduction")

    nu_terms = _terms(pmc, nu_states, nu_states)
    eta_terms = _terms(pmc, eta_states, eta_states)

    k = pmc.k
    _, Z, A = pmc.gamma_shape
    n_gamma = k * Z * A
    e_rows, e_cols, e_vals, r_rows, r_cols = [], [], [], [], []
    n_entries = 0
    for i, x in enumerate(nu_states):
        s, q = pmc.split(int(x))
        coef = pmc.coef[s]  # (z, a, s')
        for s2 in np.flatnonzero(coef.sum(axis=(0, 1)) > 0):
            zz, aa = np.nonzero(coef[:, :, s2])
            for z, a in zip(zz, aa):
                e_rows.append(n_entries)
                e_cols.append((q * Z + z) * A + a)
                e_vals.append(coef[z, a, s2])
            r_rows.append(i)
            r_cols.append(n_entries)
            n_entries += 1
    ent_matrix = sp.csr_matrix((e_vals, (e_rows, e_cols)), shape=(n_entries, n_gamma))
    ent_rows = sp.csr_matrix((np.ones(len(r_rows)), (r_rows, r_cols)),
                             shape=(nu_states.size, n_entries))
    rr, rc, rv = [], [], []
    O = pmc.model.observation
    for i, x in enumerate(eta_states):
        s, q = pmc.split(int(x))
        for z in np.flatnonzero(O[s]):
            for a in range(A):
                w = O[s, z] * pmc.reward_sa[s, a]
                if w != 0:
                    rr.append(i)
                    rc.append((q * Z + z) * A + a)
                    rv.append(w)
    reward_matrix = sp.csr_matrix((rv, (rr, rc)), shape=(eta_states.size, n_gamma))
    return NlpProblem(pmc, float(beta), active, nu_states, eta_states, nu_terms, eta_terms,
                      ent_matrix, ent_rows, reward_matrix)


def dc_replacement(c, v, u, v_hat, u_hat):
    """Concave under-estimator of ``c*v*u`` expanded at ``(v_hat, u_hat)``."""
    h = v_hat + u_hat
    return c * h * (v + u) - c * h ** 2 / 2 - c / 2 * (v ** 2 + u ** 2)


def local_entropy_rows(nlp: NlpProblem, gamma_flat: np.ndarray) -> np.ndarray:
    """L^u on the nu rows, in bits."""
    p = nlp.ent_matrix @ gamma_flat
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return nlp.ent_rows @ terms


def exact_rhs(nlp: NlpProblem, nu: np.ndarray, eta: np.ndarray, gamma_flat: np.ndarray):
    """Right-hand sides of the bilinear constraints (per nu row, per eta row)."""
    t = nlp.nu_terms
    bil_nu = np.bincount(t.row, t.c * nu[t.col] * gamma_flat[t.g], minlength=nlp.nu_states.size)
    t = nlp.eta_terms
    bil_eta = np.bincount(t.row, t.c * eta[t.col] * gamma_flat[t.g],
                          minlength=nlp.eta_states.size)
    rhs_nu = local_entropy_rows(nlp, gamma_flat) + nlp.beta * bil_nu
    rhs_eta = nlp.reward_matrix @ gamma_flat + nlp.beta * bil_eta
    return rhs_nu, rhs_eta


def convexified_rhs(nlp: NlpProblem, nu, eta, gamma_flat, nu_hat, eta_hat, gamma_hat):
    """Right-hand sides with every bilinear term replaced (zero slacks)."""
    out = []
    for terms, v, v_hat, n_rows, base in (
        (nlp.nu_terms, nu, nu_hat, nlp.nu_states.size, local_entropy_rows(nlp, gamma_flat)),
        (nlp.eta_terms, eta, eta_hat, nlp.eta_states.size, nlp.reward_matrix @ gamma_flat),
    ):
        t = terms
        rep = dc_replacement(t.c, v[t.col], gamma_flat[t.g], v_hat[t.col], gamma_hat[t.g])
        out.append(base + nlp.beta * np.bincount(t.row, rep, minlength=n_rows))
    return tuple(out)


@dataclass(frozen=True)
class CcpState:
    """Expansion point and penalty weight of one CCP iteration.

    ``nu_hat`` and ``eta_hat`` are indexed like ``nlp.nu_states`` and
    ``nlp.eta_states``; ``gamma_hat`` is the flattened gamma table.
    """

    iteration: int
    nu_hat: np.ndarray
    eta_hat: np.ndarray
    gamma_hat: np.ndarray
    tau: float
    gamma_threshold: float
    last_val: float | None = None


class ConvexSubproblem:
    """Convex restriction of the bilinear program around a ``CcpState``.

    Matrices that do not depend on the expansion point are built once; the
    cvxpy problem itself is rebuilt by :meth:`set_state` from numeric
    constants. Rebuilding is cheap, whereas a parametrized (DPP) version
    needs a parameter tensor that grows with the number of bilinear terms.
    """

    def __init__(self, nlp: NlpProblem, baseline: bool = False):
        self.nlp = nlp
        self.baseline = baseline
        k, Z, A = nlp.pmc.gamma_shape
        n_g = nlp.n_gamma
        self.gamma = cp.Variable(n_g, nonneg=True)
        simplex = sp.kron(sp.eye(k * Z), np.ones((1, A)), format="csr")
        self._simplex = simplex @ self.gamma == 1
        self._kinds = {}
        kinds = ["eta"] if baseline else ["nu", "eta"]
        for kind in kinds:
            states = getattr(nlp, f"{kind}_states")
            t = getattr(nlp, f"{kind}_terms")
            n = states.size
            n_t = len(t)
            v = cp.Variable(n, nonneg=(kind == "nu"), name=kind)
            slack = cp.Variable(max(t.n_tuples, 1), nonneg=True, name=f"slack_{kind}")
            # fixed part of the replacement: -(c/2)(v^2 + gamma^2) summed per row
            fixed = 0
            slack_term = 0
            if n_t:
                w_v = sp.csr_matrix((t.c, (t.row, t.col)), shape=(n, n))
                w_g = sp.csr_matrix((t.c, (t.row, t.g)), shape=(n, n_g))
                incid = sp.csr_matrix((np.ones(n_t), (t.row, t.tuple_id)),
                                      shape=(n, slack.size))
                fixed = -0.5 * (w_v @ cp.square(v)) - 0.5 * (w_g @ cp.square(self.gamma))
                slack_term = incid @ slack
            if kind == "nu":
                base = (1.0 / LOG2) * (nlp.ent_rows @ cp.entr(nlp.ent_matrix @ self.gamma))
            else:
                base = nlp.reward_matrix @ self.gamma
            self._kinds[kind] = dict(var=v, slack=slack, terms=t, states=states, base=base,
                                     fixed=fixed, slack_term=slack_term)
        self.problem = None

    def set_state(self, state: CcpState) -> None:
        nlp = self.nlp
        n_g = nlp.n_gamma
        g_hat = state.gamma_hat
        cons = [self._simplex]
        penalty = 0
        for kind, info in self._kinds.items():
            t, v, n = info["terms"], info["var"], info["states"].size
            v_hat = state.nu_hat if kind == "nu" else state.eta_hat
            bil = info["fixed"]
            if len(t):
                hc = t.c * (v_hat[t.col] + g_hat[t.g])
                lin_v = sp.csr_matrix((hc, (t.row, t.col)), shape=(n, n))
                lin_g = sp.csr_matrix((hc, (t.row, t.g)), shape=(n, n_g))
                const = -np.bincount(t.row, hc * (v_hat[t.col] + g_hat[t.g]) / 2, minlength=n)
                bil = bil + lin_v @ v + lin_g @ self.gamma + const
            cons.append(v <= info["base"] + nlp.beta * bil + info["slack_term"])
            penalty = penalty + cp.sum(info["slack"])
        init_eta = int(np.flatnonzero(nlp.eta_states == nlp.initial)[0])
        cons.append(self._kinds["eta"]["var"][init_eta] >= float(state.gamma_threshold))
        tau = float(state.tau)
        if self.baseline:
            objective = -tau * penalty
        else:
            init_nu = int(np.flatnonzero(nlp.nu_states == nlp.initial)[0])
            objective = self._kinds["nu"]["var"][init_nu] - tau * penalty
        self.problem = cp.Problem(cp.Maximize(objective), cons)


def convexify(nlp: NlpProblem, state: CcpState, baseline: bool = False) -> ConvexSubproblem:
    """Return the subproblem of ``nlp`` expanded at ``state``.

    The state-independent parts are built once per (nlp, baseline) and reused.
    """
    key = ("baseline" if baseline else "entropy")
    sub = nlp._cache.get(key)
    if sub is None:
        sub = ConvexSubproblem(nlp, baseline)
        nlp._cache[key] = sub
    sub.set_state(state)
    return sub


@dataclass(frozen=True, eq=False)
class SubproblemSolution:
    nu: np.ndarray | None
    eta: np.ndarray
    gamma: np.ndarray        # projected onto the simplex, flattened
    slack_nu: np.ndarray
    slack_eta: np.ndarray
    val: float
    status: str

    @property
    def slack_sum(self) -> float:
        return float(self.slack_nu.sum() + self.slack_eta.sum())


# A stalled interior-point run close to optimal is accepted as "almost solved":
# every CCP candidate is re-evaluated exactly, so a slightly inexact step is harmless.
_SOLVER_OPTS = {
    "CLARABEL": lambda tol: dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=500,
                                 reduced_tol_gap_abs=1e-3, reduced_tol_gap_rel=1e-3,
                                 reduced_tol_feas=1e-5),
    "SCS": lambda tol: dict(eps=max(tol, 1e-6), max_iters=20000),
}


def solve_subproblem(sub: ConvexSubproblem, tolerance: float = 1e-8,
                     solvers=("CLARABEL", "SCS")) -> SubproblemSolution:
    """Solve with the first solver that reports an optimal status."""
    last = None
    for name in solvers:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                sub.problem.solve(solver=name, warm_start=False, **_SOLVER_OPTS[name](tolerance))
        except cp.error.SolverError as exc:
            last = str(exc)
            continue
        if sub.problem.status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) and sub.gamma.value is not None:
            break
        last = sub.problem.status
    else:
        raise SolverFailure(f"convex subproblem failed: {last}")
    k, Z, A = sub.nlp.pmc.gamma_shape
    g = project_simplex(np.asarray(sub.gamma.value).reshape(k * Z, A)).reshape(-1)
    kinds = sub._kinds
    nu = None if sub.baseline else np.asarray(kinds["nu"]["var"].value, dtype=float)
    sn = (np.zeros(0) if sub.baseline
          else np.maximum(np.asarray(kinds["nu"]["slack"].value, dtype=float).reshape(-1), 0))
    se = np.maximum(np.asarray(kinds["eta"]["slack"].value, dtype=float).reshape(-1), 0)
    return SubproblemSolution(nu, np.asarray(kinds["eta"]["var"].value, dtype=float), g,
                              sn, se, float(sub.problem.value), str(sub.problem.status))
