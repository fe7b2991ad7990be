"""POMDP data model, validation, and the two model transformations used by the
synthesis pipeline (fully observable counterpart, finite-horizon unrolling).

Tables are dense numpy arrays indexed by position in the ordered id lists:

    transition[s, a, s']   P(s' | s, a)
    observation[s, z]      O(z | s)
    reward[s, a]           R(s, a)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOL = 1e-9

SINK = "sink"
SINK_OBSERVATION = "z_sink"


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Pomdp:
    """Finite POMDP. Every action is available in every state."""

    states: tuple[str, ...]
    initial_state: str
    actions: tuple[str, ...]
    transition: np.ndarray
    observations: tuple[str, ...]
    observation: np.ndarray
    reward: np.ndarray
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "observations", tuple(self.observations))
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "observation", _frozen(self.observation))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def n_observations(self) -> int:
        return len(self.observations)

    @property
    def initial_index(self) -> int:
        return self._index[self.initial_state]

    def state_index(self, state: str) -> int:
        return self._index[state]

    def action_index(self, action: str) -> int:
        return self.actions.index(action)

    def observation_index(self, obs: str) -> int:
        return self.observations.index(obs)

    def __eq__(self, other):
        if not isinstance(other, Pomdp):
            return NotImplemented
        return (
            self.states == other.states
            and self.initial_state == other.initial_state
            and self.actions == other.actions
            and self.observations == other.observations
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.observation, other.observation)
            and np.array_equal(self.reward, other.reward)
        )

    __hash__ = None

    def is_fully_observable(self) -> bool:
        return self.observations == self.states and np.array_equal(
            self.observation, np.eye(self.n_states)
        )


@dataclass(frozen=True)
class Issue:
    severity: str  # "error" or "warning"
    location: tuple
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...] = ()

    @property
    def ok(self) -> bool:
        return not any(i.severity == "error" for i in self.issues)

    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity == "error"]

    def __str__(self):
        if not self.issues:
            return "ok"
        return "\n".join(f"{i.severity}: {i.location}: {i.message}" for i in self.issues)


class ValidationError(ValueError):
    def __init__(self, report: ValidationReport):
        self.report = report
        super().__init__(str(report))


def _check_row(row: np.ndarray, location: tuple, what: str, issues: list):
    if not np.all(np.isfinite(row)):
        issues.append(Issue("error", location, f"{what} row has non-finite entries"))
        return
    neg = np.flatnonzero(row < 0)
    if neg.size:
        issues.append(
            Issue("error", location, f"{what} row has negative entries at {neg.tolist()}")
        )
    residual = math.fsum(row.tolist()) - 1.0
    if abs(residual) > PROB_TOL:
        issues.append(
            Issue(
                "error",
                location,
                f"{what} row sums to {1.0 + residual!r} (residual {abs(residual):.3g})",
            )
        )


def validate_pomdp(model: Pomdp) -> ValidationReport:
    """Check every structural invariant of ``model``; never raises."""
    issues: list[Issue] = []
    S, A, Z = model.n_states, model.n_actions, model.n_observations
    for name, ids in (("states", model.states), ("actions", model.actions),
                      ("observations", model.observations)):
        if len(ids) == 0:
            issues.append(Issue("error", (name,), f"no {name} declared"))
        if len(set(ids)) != len(ids):
            dupes = sorted({x for x in ids if ids.count(x) > 1})
            issues.append(Issue("error", (name,), f"duplicate ids {dupes}"))
    if model.initial_state not in model.states:
        issues.append(
            Issue("error", ("start",), f"initial state {model.initial_state!r} not declared")
        )
    shapes = {
        "transition": (model.transition.shape, (S, A, S)),
        "observation": (model.observation.shape, (S, Z)),
        "reward": (model.reward.shape, (S, A)),
    }
    bad_shape = False
    for name, (got, want) in shapes.items():
        if got != want:
            issues.append(Issue("error", (name,), f"shape {got}, expected {want}"))
            bad_shape = True
    if bad_shape:
        return ValidationReport(tuple(issues))

    for s in range(S):
        for a in range(A):
            _check_row(model.transition[s, a], (model.states[s], model.actions[a]),
                       "transition", issues)
        _check_row(model.observation[s], (model.states[s],), "observation", issues)
    if not np.all(np.isfinite(model.reward)):
        issues.append(Issue("error", ("reward",), "reward table has non-finite entries"))
    return ValidationReport(tuple(issues))


def require_valid(model: Pomdp) -> None:
    report = validate_pomdp(model)
    if not report.ok:
        raise ValidationError(report)


def to_fully_observable(model: Pomdp) -> Pomdp:
    """The same model with one observation per state, emitted deterministically."""
    require_valid(model)
    return Pomdp(
        states=model.states,
        initial_state=model.initial_state,
        actions=model.actions,
        transition=model.transition,
        observations=model.states,
        observation=np.eye(model.n_states),
        reward=model.reward,
    )


def time_state_id(state: str, t: int) -> str:
    return f"{state}@{t}"


def reduce_finite_horizon(model: Pomdp, horizon: int) -> Pomdp:
    """Unroll ``model`` over ``horizon`` stages and absorb into a sink.

    States are ``(s, t)`` for t = 1..N, ordered time-major, followed by the
    sink. Stage t < N moves to stage t+1 with the original dynamics, stage N
    moves to the sink, and the sink loops on itself. Rewards are copied per
    stage; the sink earns nothing and emits its own observation.
    """
    if int(horizon) != horizon or horizon < 1:
        raise ValueError(f"horizon must be a positive integer, got {horizon!r}")
    require_valid(model)
    N = int(horizon)
    S, A, Z = model.n_states, model.n_actions, model.n_observations
    n = S * N + 1
    sink = n - 1

    def idx(s, t):  # t is 1-based
        return (t - 1) * S + s

    P = np.zeros((n, A, n))
    O = np.zeros((n, Z + 1))
    R = np.zeros((n, A))
    for t in range(1, N + 1):
        block = slice(idx(0, t), idx(0, t) + S)
        O[block, :Z] = model.observation
        R[block] = model.reward
        if t < N:
            nxt = slice(idx(0, t + 1), idx(0, t + 1) + S)
            P[block, :, nxt] = model.transition
        else:
            P[block, :, sink] = 1.0
    P[sink, :, sink] = 1.0
    O[sink, Z] = 1.0

    if SINK in model.states or SINK_OBSERVATION in model.observations:
        raise ValueError("model already uses the reserved sink identifiers")
    states = [time_state_id(s, t) for t in range(1, N + 1) for s in model.states]
    states.append(SINK)
    return Pomdp(
        states=states,
        initial_state=time_state_id(model.initial_state, 1),
        actions=model.actions,
        transition=P,
        observations=model.observations + (SINK_OBSERVATION,),
        observation=O,
        reward=R,
    )


def split_time_state(state_id: str) -> tuple[str, int | None]:
    """Inverse of :func:`time_state_id`; the sink maps to ``(SINK, None)``."""
    if state_id == SINK:
        return SINK, None
    base, _, t = state_id.rpartition("@")
    return base, int(t)


def make_pomdp(states: Sequence[str], initial_state: str, actions: Sequence[str],
               transition, observations: Sequence[str], observation, reward) -> Pomdp:
    """Construct and validate in one step."""
    model = Pomdp(tuple(states), initial_state, tuple(actions), np.asarray(transition, float),
                  tuple(observations), np.asarray(observation, float),
                  np.asarray(reward, float))
    require_valid(model)
    return model
