import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fifobound.curves import (DELTA0, INF, Mslc, PreconditionError, RateLatency, ShapedArrival,
                              Shaper, Stage, TokenBucket, hdev_shaped, leftover_numeric,
                              mslc_convolve, mslc_eval, mslc_from_rate_latency, shape_tb,
                              simplify_stages, vdev_and_output)
from fifobound.oracle import evaluate

SH = ShapedArrival(TokenBucket(1, 1), Shaper(0.5, 4))


def test_rate_latency_as_mslc():
    assert mslc_from_rate_latency(RateLatency(2, 1)) == Mslc(1, (Stage(0, 0, 2),))
    assert mslc_from_rate_latency(RateLatency(1, 0)) == Mslc(0, (Stage(0, 0, 1),))
    assert mslc_eval(mslc_from_rate_latency(RateLatency(3, 2)), 4) == 6


def test_mslc_eval():
    assert mslc_eval(Mslc(1, (Stage(0, 0, 2),)), 2) == 2
    assert mslc_eval(Mslc(0, (Stage(2, 0, INF),)), 3) == INF
    assert mslc_eval(Mslc(1, (Stage(2, 0.5, 2),)), 2.5) == 0.5
    assert mslc_eval(Mslc(1, (Stage(2, 0.5, 2),)), 1.0) == 0.0


def test_convolve_rate_latency():
    c = mslc_convolve(mslc_from_rate_latency(RateLatency(2, 1)), mslc_from_rate_latency(RateLatency(3, 1)))
    assert c.D == 2
    assert c.stages == (Stage(0, 0, 2),)


def test_convolve_spec_stages():
    c = mslc_convolve(Mslc(0, (Stage(1, 1, 2),)), Mslc(0, (Stage(2, 0.5, 1),)))
    # (1,1,2) and (3,1.5,1) never undercut (2,0.5,1), so the minimum is the same curve
    listed = Mslc(0, (Stage(1, 1, 2), Stage(2, 0.5, 1), Stage(3, 1.5, 1)))
    t = np.linspace(0, 8, 801)
    assert np.allclose(evaluate(c, t), evaluate(listed, t))
    assert Stage(2, 0.5, 1) in c.stages


def test_convolve_neutral():
    c = Mslc(0.5, (Stage(1, 1, 2), Stage(0, 0, 3)))
    r = mslc_convolve(c, DELTA0)
    t = np.linspace(0, 6, 601)
    assert np.allclose(evaluate(r, t), evaluate(c, t))


def test_simplify_keeps_smaller_rate():
    assert simplify_stages([Stage(1, 1, 2), Stage(1, 1, INF), Stage(1, 1, 2)]) == (Stage(1, 1, 2),)


def test_hdev_examples():
    assert hdev_shaped(SH, mslc_from_rate_latency(RateLatency(2, 1))) == pytest.approx(17 / 12)
    assert hdev_shaped(SH, Mslc(0, (Stage(2, 0, INF),))) == pytest.approx(2)
    assert hdev_shaped(ShapedArrival(TokenBucket(0, 0)), mslc_from_rate_latency(RateLatency(1, 3))) == 3


def test_hdev_rejects_rate_violation():
    with pytest.raises(PreconditionError, match="r=3"):
        hdev_shaped(ShapedArrival(TokenBucket(1, 3)), mslc_from_rate_latency(RateLatency(2, 1)))
    with pytest.raises(PreconditionError, match="R'"):
        hdev_shaped(SH, mslc_from_rate_latency(RateLatency(8, 1)))


def test_vdev_examples():
    assert vdev_and_output(TokenBucket(1, 1), Mslc(1, (Stage(0, 0, 2),))) == (2, TokenBucket(2, 1))
    assert vdev_and_output(TokenBucket(1, 1), Mslc(1, (Stage(2, 0.5, 2),))) == (3.5, TokenBucket(3.5, 1))
    assert vdev_and_output(TokenBucket(0, 0), Mslc(1, (Stage(2, 0.5, 2),)))[0] == 0


def test_leftover_example():
    beta = mslc_from_rate_latency(RateLatency(2, 1))
    lo = leftover_numeric(beta, SH, 17 / 12)
    assert lo.D == 1
    got = sorted((round(s.tau, 9), round(s.sigma, 9), s.rho) for s in lo.stages)
    assert got == sorted([(round(7 / 12, 9), 0.0, 1.0), (round(5 / 12, 9), 0.0, INF)])


def test_leftover_zero_crossflow():
    beta = Mslc(1.5, (Stage(0, 0, 3),))
    lo = leftover_numeric(beta, ShapedArrival(TokenBucket(0, 0)), 1.5)
    t = np.linspace(0, 10, 1001)
    assert np.allclose(evaluate(lo, t), evaluate(beta, t))


def test_leftover_below_raw():
    beta = mslc_from_rate_latency(RateLatency(2, 1))
    lo = leftover_numeric(beta, SH, 1.0)
    assert mslc_eval(lo, 2.0) <= max(beta(2.0) - SH(1.0), 0.0) + 1e-12


def test_leftover_rejects_small_theta():
    with pytest.raises(PreconditionError):
        leftover_numeric(mslc_from_rate_latency(RateLatency(2, 1)), SH, 0.5)


def test_shape_tb():
    s = shape_tb(TokenBucket(2, 1), Shaper(0.5, 4))
    assert s.sh == Shaper(0.5, 4)
    assert not shape_tb(TokenBucket(1, 1), Shaper(2, 4)).sh.active
    assert shape_tb(TokenBucket(3.5, 1), Shaper(0.5, 8)).sh == Shaper(0.5, 8)


# Properties against dense evaluation

stages = st.builds(Stage, st.floats(0, 3), st.floats(0, 3),
                   st.one_of(st.floats(0.5, 4), st.just(INF)))
mslcs = st.builds(Mslc, st.floats(0, 2), st.lists(stages, min_size=1, max_size=3).map(tuple))


@settings(max_examples=60, deadline=None)
@given(mslcs)
def test_eval_nondecreasing(c):
    t = np.linspace(0, 10, 2001)
    v = evaluate(c, t)
    assert np.array_equal(v, np.maximum.accumulate(v))
    assert np.all(v[t <= c.D] == 0)


@settings(max_examples=40, deadline=None)
@given(mslcs, mslcs)
def test_convolve_commutes(a, b):
    t = np.linspace(0, 10, 501)
    assert np.allclose(evaluate(mslc_convolve(a, b), t), evaluate(mslc_convolve(b, a), t))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.05, 1), st.floats(0, 1), st.floats(1.5, 3),
       st.lists(stages, min_size=1, max_size=3), st.floats(0, 2))
def test_hdev_offset_and_min_split(b, r, lf, rp, sts, D):
    alpha = ShapedArrival(TokenBucket(b, r), Shaper(lf * b, rp))
    sts = [Stage(s.tau, s.sigma, max(r, min(s.rho, rp))) if s.rho < INF else s for s in sts]
    whole = hdev_shaped(alpha, Mslc(D, tuple(sts)))
    assert whole == pytest.approx(D + hdev_shaped(alpha, Mslc(0, tuple(sts))))
    parts = [hdev_shaped(alpha, Mslc(D, (s,))) for s in sts]
    assert whole == pytest.approx(max(parts))


def test_output_at_zero_is_backlog():
    v, out = vdev_and_output(TokenBucket(1.2, 0.7), Mslc(0.3, (Stage(1, 0.2, 2), Stage(0, 0, 1))))
    assert out.b == v and out.r == 0.7
    assert math.isfinite(v)
