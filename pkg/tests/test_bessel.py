import math

import numpy as np
import pytest
from scipy import stats

from gmctail.bessel import (HittingRecord, Path, bes3_exit_profile, bes3_marginal,
                            bes3_return_fraction, bm_hit_profile, bm_nested_weights, bridge_max,
                            bridge_survival, decomposition_marginals, last_hit_bes3,
                            path_decomposition_sample, radnik_batch, radnik_weight, run_to_first_hit,
                            sample_bes3, sample_bm, williams_reverse)
from gmctail.errors import ContractError, DomainError, TruncationError
from gmctail.rng import RngPolicy


def test_bm_increments():
    p = sample_bm(100.0, 0.01, rng=1)
    inc = np.diff(p.values)
    assert p.values.size == 10_001
    assert inc.var() == pytest.approx(0.01, rel=0.05)


def test_bes3_nonnegative_and_marginal():
    p = sample_bes3(0.5, 1.0, 0.01, rng=2)
    assert p.kind == "bes3" and np.all(p.values >= 0)
    ends = bes3_marginal(0.0, 2.0, 50_000, 3)
    # |N(0, 2 I_3)|^2 / 2 is chi-square with 3 degrees of freedom
    assert stats.kstest(ends ** 2 / 2.0, "chi2", args=(3,)).pvalue > 0.01


def test_contracts():
    with pytest.raises(ContractError):
        Path(0.1, [0.0, -0.1], "bes3")
    with pytest.raises(ContractError):
        HittingRecord(1.0, first_hit=5, last_hit=2)
    with pytest.raises(DomainError):
        Path(0.0, [0.0])


def test_bridge_max_law():
    rng = np.random.default_rng(4)
    n = 200_000
    a, b, dt, m = 0.1, -0.2, 0.5, 0.6
    mx = bridge_max(a, b, dt, rng.random(n))
    assert np.all(mx >= max(a, b))
    target = math.exp(-2 * (m - a) * (m - b) / dt)
    assert np.mean(mx >= m) == pytest.approx(target, abs=4 * math.sqrt(target / n))
    assert bridge_survival(m, a, b, dt) == pytest.approx(1 - target)
    assert bridge_survival(0.0, 0.1, -0.1, 1.0) == 0.0


def test_first_hit_path():
    p, rec = run_to_first_hit(1.0, 1e-3, rng=5)
    assert p.values[-1] == 1.0 and p.values[:-1].max() < 1.0
    assert rec.first_time == pytest.approx(p.duration)
    with pytest.raises(TruncationError) as exc:
        run_to_first_hit(50.0, 0.1, rng=5, max_T=10.0)
    assert 0.9 < exc.value.probability <= 1.0


def test_williams_involution():
    p, _ = run_to_first_hit(0.7, 1e-3, rng=6)
    r = williams_reverse(p)
    assert r.values[0] == pytest.approx(0.0, abs=1e-12) and r.values[-1] == pytest.approx(0.7)
    assert np.all(r.values >= -1e-12)
    back = williams_reverse(r)
    np.testing.assert_allclose(back.values, p.values, atol=1e-12)
    np.testing.assert_allclose(back.t, p.t, atol=1e-12)
    with pytest.raises(ContractError):
        williams_reverse(sample_bm(1.0, 0.1, rng=0))


def test_last_passage_laplace():
    # the last passage of BES(3) at x has the law of the Brownian first passage at x
    x, n = 1.0, 1000
    vals = np.empty(n)
    for i in range(n):
        _, rec = last_hit_bes3(x, 1e-2, rng=RngPolicy(7).generator(i), z=1.5)
        vals[i] = math.exp(-rec.last_time)
    assert vals.mean() == pytest.approx(math.exp(-x * math.sqrt(2)), abs=4 * vals.std() / math.sqrt(n))


def test_last_hit_record():
    p, rec = last_hit_bes3(0.5, 1e-2, ptol=1e-3, rng=8)
    assert p.values[-1] > 0.5 / 1e-3
    assert 0 <= rec.last_time <= p.duration and rec.ptol == 1e-3
    with pytest.raises(DomainError):
        last_hit_bes3(0.5, 1e-2, ptol=0.5)


def test_return_fraction():
    n = 20_000
    f = bes3_return_fraction(1.0, 2.0, 1e-3, n, 9)
    assert f == pytest.approx(0.5, abs=4 * math.sqrt(0.25 / n) + 1e-3)


def test_decomposition_single_path():
    p = path_decomposition_sample(1.0, 1e-2, 2.0, rng=10, U=0.5)
    assert p.values[0] == 1.0 and np.all(p.values >= 0.5 - 1e-12)
    q = path_decomposition_sample(1.0, 1e-2, 1.0, rng=10, U=1.0)
    assert q.meta["switch"] == 0


def test_decomposition_marginal():
    x, T, n = 1.0, 1.0, 10_000
    a = decomposition_marginals(x, 1e-3, T, n, 11)
    b = bes3_marginal(x, T, n, 12)
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_radnik_change_of_measure():
    x, t, n = 1.0, 1.0, 20_000
    w, ends = radnik_batch(x, t, 1e-2, n, 13)
    assert w.mean() == pytest.approx(1.0, abs=4 * w.std() / math.sqrt(n))
    # under the weights x - B_t is BES(3) from x: compare E[R_t^2] = x^2 + 3t
    assert np.sum(w * ends ** 2) / np.sum(w) == pytest.approx(x * x + 3 * t, rel=0.03)


def test_radnik_tower():
    ws, wt = bm_nested_weights(1.0, 0.5, 1.0, 1e-2, 20_000, 14)
    d = wt - ws
    assert abs(d.mean()) <= 4 * d.std() / math.sqrt(d.size)
    assert abs(np.mean(d * ws)) <= 4 * np.std(d * ws) / math.sqrt(d.size)


def test_radnik_weight_single():
    p = sample_bm(1.0, 0.01, rng=15)
    x = p.values.max() + 0.5
    assert radnik_weight(p, x, 100) == pytest.approx((x - p.values[100]) / x)
    assert radnik_weight(p, x, 100, bridge=True) <= radnik_weight(p, x, 100)
    assert radnik_weight(p, p.values.max() - 1e-9, 100) == 0.0


def test_profile_grid_checks():
    with pytest.raises(DomainError):
        bm_hit_profile([1.0, 0.5], 1.0, 0.01, 2, 0)
    prof = bm_hit_profile([0.0, 0.5], 1.0, 0.01, 4, 0)
    assert np.all(prof[:, 0] == 0.0) and np.all(prof[:, 1] > 0)


def test_hit_and_exit_profiles_agree():
    c, n = math.sqrt(2), 4000
    xg = [0.5, 1.0]
    A = bm_hit_profile(xg, c, 1e-2, n, RngPolicy(16))
    E = bes3_exit_profile(xg, c, 1e-2, n, RngPolicy(17))
    assert np.all(np.diff(A * np.exp(c * np.array(xg)), axis=1) >= 0)
    assert np.all(np.diff(E.J, axis=1) >= 0)
    for j in range(2):
        assert stats.ks_2samp(A[:, j], E.J[:, j]).pvalue > 0.01
    assert np.all(E.total >= E.J[:, -1])
