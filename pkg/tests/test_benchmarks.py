import numpy as np
import pytest

from entromax.benchmarks import (
    BUILTINS, GridSpec, builtin, fourroom10_spec, gen_fig5, gen_fig7, gen_fourroom10,
    gen_grid4, gen_gridworld, grid4_spec, move_distribution,
)
from entromax.model import validate_pomdp


@pytest.mark.parametrize("name", sorted(BUILTINS))
def test_builtins_validate(name):
    assert validate_pomdp(builtin(name)).ok


def test_unknown_builtin():
    with pytest.raises(ValueError, match="unknown builtin"):
        builtin("nope")


def test_sizes():
    assert (gen_fig5().n_states, gen_fig5().n_actions, gen_fig5().n_observations) == (6, 2, 1)
    assert (gen_fig7().n_states, gen_fig7().n_actions, gen_fig7().n_observations) == (15, 3, 1)
    g = gen_grid4()
    assert (g.n_states, g.n_actions, g.n_observations) == (16, 4, 9)
    f = gen_fourroom10()
    assert (f.n_states, f.n_actions, f.n_observations) == (100, 4, 36)


def test_fig5_rewards_and_absorption():
    m = gen_fig5()
    assert m.reward.sum() == 2.0
    for s in ("s4", "s5", "s6"):
        i = m.state_index(s)
        assert np.all(m.transition[i, :, i] == 1.0)


def test_slip_distribution():
    d = move_distribution(grid4_spec(0.03), "up")
    assert d["up"] == pytest.approx(0.94)
    assert d["left"] == d["right"] == pytest.approx(0.015)
    assert d["down"] == pytest.approx(0.03)
    assert sum(d.values()) == pytest.approx(1.0)


@pytest.mark.parametrize("eps", [-0.01, 0.075, 0.1])
def test_slip_range(eps):
    with pytest.raises(ValueError):
        gen_grid4(eps)


def test_grid4_layout():
    m = gen_grid4()
    start = m.state_index("c1_4")
    assert m.initial_index == start
    target, err = m.state_index("c4_1"), m.state_index("c1_1")
    assert np.all(m.transition[target, :, target] == 1)
    assert np.all(m.transition[err, :, err] == 1)
    # one step left of the target, moving right enters it with the intended-move probability
    west = m.state_index("c3_1")
    assert m.reward[west, 1] == pytest.approx(m.transition[west, 1, target])
    assert m.observations[np.argmax(m.observation[west])] == "target_right"
    assert m.observations[np.argmax(m.observation[m.state_index("c2_2")])] == "none"


def test_fourroom_walls_and_doors():
    spec = fourroom10_spec()
    m = gen_fourroom10()
    assert len(spec.doors) == 4
    for a, b in spec.doors:
        assert not spec.blocked(a, _direction(a, b))
    assert spec.blocked((5, 1), "right") and spec.blocked((1, 5), "up")
    assert spec.room_of(spec.initial_cell) == 2 and spec.room_of(spec.target_cell) == 4
    # deterministic moves
    assert set(np.unique(m.transition)) <= {0.0, 1.0}


def _direction(a, b):
    d = (b[0] - a[0], b[1] - a[1])
    return {(1, 0): "right", (-1, 0): "left", (0, 1): "up", (0, -1): "down"}[d]


def test_gridworld_rejects_cells_outside():
    spec = GridSpec(width=2, height=2, initial_cell=(3, 1), target_cell=(2, 2))
    with pytest.raises(ValueError):
        gen_gridworld(spec)
