import numpy as np
import pytest

from rsac.mdp import DiscreteMDP, random_mdp


def _chain():
    P = np.zeros((3, 2, 3))
    P[0, :, 1] = 1.0
    P[1, 0, 2] = 1.0
    P[1, 1, 0] = 1.0
    P[2, :, 2] = 1.0
    R = np.array([[0.0, 1.0], [5.0, -1.0], [0.0, 0.0]])
    return DiscreteMDP(P, R, 0.9, terminal={2})


def test_shapes_and_default_initial():
    m = _chain()
    assert (m.n_states, m.n_actions) == (3, 2)
    assert m.terminal_mask.tolist() == [False, False, True]
    assert np.allclose(m.initial, [0.5, 0.5, 0.0])


def test_json_round_trip():
    m = _chain()
    m2 = DiscreteMDP.from_json(m.to_json())
    assert np.array_equal(m.transition, m2.transition)
    assert np.array_equal(m.reward, m2.reward)
    assert m2.terminal == m.terminal and m2.gamma == m.gamma
    assert np.array_equal(m.initial, m2.initial)


@pytest.mark.parametrize("mutate, msg", [
    (lambda d: d.update(gamma=1.0), "gamma"),
    (lambda d: d.update(transition=np.full((3, 2, 3), 0.5).tolist()), "probability"),
    (lambda d: d.update(reward=[[0.0, 1.0]]), "reward"),
    (lambda d: d.update(terminal=[0]), "terminal"),
    (lambda d: d.update(n_states=4), "declared shape"),
    (lambda d: d.pop("reward"), "missing"),
])
def test_validation(mutate, msg):
    doc = _chain().to_dict()
    mutate(doc)
    with pytest.raises(ValueError, match=msg):
        DiscreteMDP.from_dict(doc)


def test_random_mdp_valid_and_seeded():
    a = random_mdp(np.random.default_rng(3), 6, 4, 0.9, branching=2)
    b = random_mdp(np.random.default_rng(3), 6, 4, 0.9, branching=2)
    assert np.array_equal(a.transition, b.transition)
    assert np.all((a.transition > 0).sum(-1) <= 2)
    assert np.allclose(a.transition.sum(-1), 1.0)
