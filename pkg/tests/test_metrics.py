import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gazealign import metrics
from gazealign.grids import dist_normalize

pos_maps = arrays(np.float64, (5, 5), elements=st.floats(0, 10))


def test_cc_examples(rng):
    g = rng.random((6, 6))
    assert metrics.cc(g, g) == pytest.approx(1.0, abs=1e-12)
    assert metrics.cc(g, 3 * g + 2) == pytest.approx(1.0, abs=1e-12)
    assert metrics.cc(g, g.max() - g) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(ValueError):
        metrics.cc(g, np.ones_like(g))
    with pytest.raises(ValueError):
        metrics.cc(g, np.ones((2, 2)))


def test_kl_examples(rng):
    g = rng.random((4, 4))
    assert abs(metrics.kl_div(g, g)) < 1e-12
    # gaze is the reference: uniform gaze vs near point-mass attention
    eps = 1e-7
    pa = [(1 + eps) / (1 + 2 * eps), eps / (1 + 2 * eps)]
    hand = 0.5 * math.log(0.5 / pa[0]) + 0.5 * math.log(0.5 / pa[1])
    assert metrics.kl_div([0.5, 0.5], [1.0, 0.0]) == pytest.approx(hand, rel=1e-12)
    # the opposite direction is the familiar ln 2
    assert metrics.kl_div([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-5)


def test_sim_examples():
    g = np.array([[0.5, 0.5]])
    assert metrics.sim(g, g) == pytest.approx(1.0)
    assert metrics.sim(g, [[0.75, 0.25]]) == pytest.approx(0.75, abs=1e-6)
    assert metrics.sim([[1.0, 0.0]], [[0.0, 1.0]]) < 1e-6


@settings(max_examples=60)
@given(pos_maps, pos_maps)
def test_metric_properties(g, a):
    s = metrics.sim(g, a)
    assert 0 <= s <= 1 + 1e-12
    assert s == pytest.approx(metrics.sim(a, g), abs=1e-12)
    l1 = np.abs(dist_normalize(g) - dist_normalize(a)).sum()
    assert s == pytest.approx(1 - 0.5 * l1, abs=1e-9)
    assert metrics.kl_div(g, a) >= -1e-9
    if np.ptp(g) > 1e-6 and np.ptp(a) > 1e-6:
        assert metrics.cc(g, a) == pytest.approx(metrics.cc(a, g), abs=1e-12)


@settings(max_examples=30)
@given(pos_maps, st.permutations(range(25)))
def test_joint_permutation_invariance(g, perm):
    a = np.random.default_rng(3).random((5, 5))
    perm = np.array(perm)
    gp, ap = g.reshape(-1)[perm].reshape(5, 5), a.reshape(-1)[perm].reshape(5, 5)
    assert metrics.kl_div(gp, ap) == pytest.approx(metrics.kl_div(g, a), abs=1e-9)
    assert metrics.sim(gp, ap) == pytest.approx(metrics.sim(g, a), abs=1e-12)
    if np.ptp(g) > 1e-6:
        assert metrics.cc(gp, ap) == pytest.approx(metrics.cc(g, a), abs=1e-12)


def test_self_comparison_all_perfect(rng):
    g = rng.random((7, 7))
    rep = metrics.report(g, g)
    assert rep.cc == pytest.approx(1) and abs(rep.kl) < 1e-12 and rep.sim == pytest.approx(1)


def test_report_formats():
    rep = metrics.MetricReport(0.5, 0.25, 0.75)
    assert list(json.loads(rep.json())) == ["cc", "kl", "sim"]
    assert rep.line() == "cc=0.500000 kl=0.250000 sim=0.750000"


def test_batched(rng):
    g, a = rng.random((4, 3, 3)), rng.random((4, 3, 3))
    for fn in (metrics.cc, metrics.kl_div, metrics.sim):
        batch = fn(g, a)
        assert batch.shape == (4,)
        for b in range(4):
            assert batch[b] == pytest.approx(fn(g[b], a[b]), rel=1e-12)
