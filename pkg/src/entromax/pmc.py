"""Product chain of a POMDP and a finite-state controller with a fixed
deterministic memory update.

Product state ``<s, q>`` (q = 0..k-1 internally, 1..k in text) has index
``s * k + q``. The memory update is a successor map; the only free
parameters are the action distributions ``gamma[q, z, :]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PROB_TOL, Pomdp, require_valid

LOG2 = np.log(2.0)


@dataclass(frozen=True)
class FscStructure:
    """Deterministic memory: ``successor[q]`` is the next memory state of q."""

    k: int
    successor: tuple[int, ...]

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if len(self.successor) != self.k:
            raise ValueError("successor map must have one entry per memory state")
        if any(not 0 <= q < self.k for q in self.successor):
            raise ValueError("successor map leaves the memory set")


def chain_memory_structure(k: int) -> FscStructure:
    """q_1 -> q_2 -> ... -> q_k -> q_k."""
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    k = int(k)
    return FscStructure(k, tuple(min(q + 1, k - 1) for q in range(k)))


@dataclass(frozen=True, eq=False)
class Instantiation:
    """Action distributions ``gamma[q, z, a]``."""

    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float, copy=True)
        if g.ndim != 3:
            raise ValueError("gamma must have shape (k, n_observations, n_actions)")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @classmethod
    def uniform(cls, k: int, n_obs: int, n_actions: int) -> "Instantiation":
        return cls(np.full((k, n_obs, n_actions), 1.0 / n_actions))

    @classmethod
    def random(cls, k: int, n_obs: int, n_actions: int, rng) -> "Instantiation":
        """Rows drawn uniformly from the probability simplex."""
        return cls(rng.dirichlet(np.ones(n_actions), size=(k, n_obs)))

    @classmethod
    def deterministic(cls, choice, n_actions: int) -> "Instantiation":
        choice = np.asarray(choice, dtype=int)
        return cls(np.eye(n_actions)[choice])


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each last-axis row onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    shape = v.shape
    x = v.reshape(-1, shape[-1])
    u = -np.sort(-x, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    ind = np.arange(1, shape[-1] + 1)
    cond = u - css / ind > 0
    rho = shape[-1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(x.shape[0]), rho] / (rho + 1)
    return np.maximum(x - theta[:, None], 0.0).reshape(shape)


def check_well_defined(u: Instantiation, structure: FscStructure, n_obs: int | None = None,
                       n_actions: int | None = None):
    """Return ``(ok, residuals)``; residuals[q, z] is the row's distance from
    being a distribution (sum deviation plus total negative mass)."""
    g = u.gamma
    if g.shape[0] != structure.k:
        return False, np.full(g.shape[:2], np.inf)
    if (n_obs is not None and g.shape[1] != n_obs) or (
        n_actions is not None and g.shape[2] != n_actions
    ):
        return False, np.full(g.shape[:2], np.inf)
    residuals = np.abs(g.sum(axis=2) - 1.0) + np.clip(-g, 0, None).sum(axis=2)
    return bool(np.all(residuals <= PROB_TOL)), residuals


@dataclass(frozen=True, eq=False)
class InducedPmc:
    """Parametric chain over S x {1..k}.

    ``coef[s, z, a, s']`` = O(z|s) P(s'|s,a): the weight with which parameter
    ``gamma[q, z, a]`` moves mass from ``<s, q>`` to ``<s', successor(q)>``.
    ``reward_sa[s, a]`` is the immediate reward credited to ``<s, q>`` per
    unit probability of action a.
    """

    model: Pomdp
    structure: FscStructure
    coef: np.ndarray
    reward_sa: np.ndarray
    reward_convention: str = "current"

    @property
    def k(self) -> int:
        return self.structure.k

    @property
    def n_states(self) -> int:
        return self.model.n_states * self.structure.k

    @property
    def initial(self) -> int:
        return self.index(self.model.initial_index, 0)

    @property
    def gamma_shape(self) -> tuple[int, int, int]:
        return (self.k, self.model.n_observations, self.model.n_actions)

    def index(self, s: int, q: int) -> int:
        return s * self.k + q

    def split(self, x: int) -> tuple[int, int]:
        return divmod(x, self.k)

    @property
    def product_states(self) -> list[tuple[str, int]]:
        return [(s, q + 1) for s in self.model.states for q in range(self.k)]

    def support(self) -> np.ndarray:
        """Boolean (n, n) matrix of transitions possible under some instantiation."""
        S, k = self.model.n_states, self.k
        possible = (self.coef.sum(axis=(1, 2)) > 0)  # (s, s')
        out = np.zeros((self.n_states, self.n_states), dtype=bool)
        for q in range(k):
            q2 = self.structure.successor[q]
            out[q::k, q2::k] = possible
        return out

    def reachable(self) -> np.ndarray:
        """Product states reachable from the initial state under full support."""
        sup = self.support()
        seen = np.zeros(self.n_states, dtype=bool)
        stack = [self.initial]
        seen[self.initial] = True
        while stack:
            x = stack.pop()
            for y in np.flatnonzero(sup[x]):
                if not seen[y]:
                    seen[y] = True
                    stack.append(y)
        return seen


def build_pmc(model: Pomdp, structure: FscStructure,
              reward_convention: str = "current") -> InducedPmc:
    """Induced parametric chain for ``model`` under the memory map ``structure``.

    ``reward_convention="current"`` credits R(s, a) to ``<s, q>``;
    ``"successor"`` credits the expected R(s', a) of the successor instead.
    """
    require_valid(model)
    coef = model.observation[:, :, None, None] * model.transition[:, None, :, :]
    if reward_convention == "current":
        reward_sa = np.array(model.reward, dtype=float)
    elif reward_convention == "successor":
        reward_sa = np.einsum("sat,ta->sa", model.transition, model.reward)
    else:
        raise ValueError(f"unknown reward convention {reward_convention!r}")
    coef.setflags(write=False)
    reward_sa.setflags(write=False)
    return InducedPmc(model, structure, coef, reward_sa, reward_convention)


def entropy_bits(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shannon entropy in bits along ``axis`` with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    # a probability a hair above 1 would give a tiny negative value
    return np.maximum(terms.sum(axis=axis), 0.0)


@dataclass(frozen=True, eq=False)
class MarkovChain:
    """Concrete chain with per-state local entropy (bits) and expected reward.

    ``labels[i]`` names the underlying POMDP state of chain state i and
    ``memory[i]`` its controller memory state (1-based).
    """

    P: np.ndarray
    L: np.ndarray
    r: np.ndarray
    initial: int
    labels: tuple = ()
    memory: tuple = ()

    def __post_init__(self):
        for name in ("P", "L", "r"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.labels:
            object.__setattr__(self, "labels", tuple(str(i) for i in range(self.n)))

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def absorbing(self) -> np.ndarray:
        return np.isclose(np.diag(self.P), 1.0, rtol=0, atol=PROB_TOL)

    @classmethod
    def from_matrix(cls, P, r=None, initial: int = 0, labels=()) -> "MarkovChain":
        P = np.asarray(P, dtype=float)
        L = entropy_bits(P, axis=1)
        r = np.zeros(P.shape[0]) if r is None else np.asarray(r, dtype=float)
        return cls(P, L, r, initial, tuple(labels))


def action_distribution(pmc: InducedPmc, u: Instantiation) -> np.ndarray:
    """pi[x, a] = sum_z O(z|s) gamma[q, z, a] for product state x = <s, q>."""
    pi = np.einsum("sz,qza->sqa", pmc.model.observation, u.gamma)
    return pi.reshape(pmc.n_states, pmc.model.n_actions)


def instantiate(pmc: InducedPmc, u: Instantiation, check: bool = True) -> MarkovChain:
    """Substitute ``u`` into the parametric chain."""
    if check:
        ok, res = check_well_defined(u, pmc.structure, pmc.model.n_observations,
                                     pmc.model.n_actions)
        if not ok:
            raise ValueError(
                f"ill-defined instantiation (max simplex residual {np.max(res):.3g})"
            )
    k, S = pmc.k, pmc.model.n_states
    pi = action_distribution(pmc, u).reshape(S, k, -1)
    # rows[s, q, s'] = sum_a pi[s, q, a] P(s'|s, a)
    rows = np.einsum("sqa,sat->sqt", pi, pmc.model.transition)
    P = np.zeros((S, k, S, k))
    for q in range(k):
        P[:, q, :, pmc.structure.successor[q]] = rows[:, q, :]
    P = P.reshape(S * k, S * k)
    r = np.einsum("sqa,sa->sq", pi, pmc.reward_sa).reshape(-1)
    labels = tuple(s for s in pmc.model.states for _ in range(k))
    memory = tuple(q + 1 for _ in range(S) for q in range(k))
    return MarkovChain(P, entropy_bits(rows, axis=2).reshape(-1), r, pmc.initial,
                       labels, memory)
