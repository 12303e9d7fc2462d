import math
import warnings

import numpy as np
import pytest
from scipy import stats

from gmctail.errors import ContractError, DomainError
from gmctail.field import (FieldBatch, GridSpec, field_sampler, sample_field,
                           sample_reference_radial, shift_field)
from gmctail.io import field_csv, read_columns, read_csv, write_columns
from gmctail.kernels import KernelDescriptor, build_cov_matrix, eval_kernel
from gmctail.rng import RngPolicy, chunked

K0 = KernelDescriptor.l_exact(0.0, 1)


def test_grid_box():
    g = GridSpec.box([0.0], [1.0], 0.1)
    assert g.n_points == 10
    np.testing.assert_allclose(g.points[:, 0], np.arange(10) * 0.1 + 0.05)
    assert g.cell_volume == pytest.approx(0.1)
    g2 = GridSpec.box([0, 0], [1, 1], 0.25)
    assert g2.n_points == 16 and g2.cell_volume == pytest.approx(0.0625)
    assert len({tuple(p) for p in g2.points}) == 16


def test_grid_rejects_bad_spacing():
    with pytest.raises(DomainError):
        GridSpec.box([0.0], [1.0], 0.0)


def test_single_point_variance():
    n = 100_000
    g = GridSpec(1, (0.0,), (1.0,), 1.0, np.array([[0.5]]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = field_sampler(K0, g, math.exp(-1), RngPolicy(3)).batch(np.arange(n))
    np.testing.assert_allclose(s.variance, [1.0])
    assert abs(s.values[:, 0].var() - 1.0) <= 3 / math.sqrt(n)


def test_determinism():
    g = GridSpec.box([0.0], [1.0], 0.1)
    a = sample_field(K0, g, 0.05, RngPolicy(11), 5)
    b = sample_field(K0, g, 0.05, RngPolicy(11), 5)
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values)
        assert x.replica == y.replica


def test_chunking_does_not_change_replicas():
    g = GridSpec.box([0.0], [1.0], 0.1)
    s = field_sampler(K0, g, 0.05, RngPolicy(4))
    whole = s.batch(np.arange(10)).values
    parts = np.vstack([b.values for b in s.batches(10, chunk=3)])
    late = s.batch(np.array([7, 8, 9])).values
    assert np.array_equal(whole, parts)
    assert np.array_equal(whole[7:], late)


def test_empirical_covariance_16_points():
    n = 100_000
    g = GridSpec.box([0.0], [1.0], 1 / 16)
    eps = 1 / 32
    s = field_sampler(K0, g, eps, RngPolicy(5))
    x = np.vstack([b.values for b in s.batches(n)])
    emp = np.cov(x, rowvar=False)
    target = s.cov.repaired()
    d = np.diag(target)
    sd = np.sqrt((np.outer(d, d) + target ** 2) / n)
    assert np.all(np.abs(emp - target) <= 4 * sd)


def test_per_point_gaussianity():
    g = GridSpec.box([0.0], [1.0], 0.1)
    s = field_sampler(K0, g, 0.05, RngPolicy(6))
    x = s.batch(np.arange(10_000)).values
    for j in range(g.n_points):
        res = stats.anderson(x[:, j] / math.sqrt(s.cov.variance[j]), dist="norm")
        # critical value at the 1% level; the 0.1% level is larger still
        assert res.statistic < res.critical_values[-1]


def test_sup_of_smooth_field_has_light_tail():
    g = GridSpec.box([0.0], [1.0], 0.05)
    k = KernelDescriptor.composite(1, {"type": "gaussian", "amp": 1.0, "scale": 0.3}, log_part=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = field_sampler(k, g, 0.025, RngPolicy(7))
    sup = np.abs(s.batch(np.arange(40_000)).values).max(axis=1)
    ts = np.linspace(1.0, 3.5, 6)
    logp = np.log([(sup > t).mean() for t in ts])
    assert np.all(np.diff(logp) < 0)
    assert np.all(np.diff(logp, 2) < 0.05)


def test_reference_radial_rejects_origin():
    g = GridSpec(2, (-1, -1), (1, 1), 0.1, np.array([[0.0, 0.0], [0.5, 0.0]]))
    with pytest.raises(DomainError):
        sample_reference_radial(2, g, 0.05, 0, 3)


def test_reference_radial_parts():
    pts = np.array([[0.5, 0.0], [0.0, 0.5], [0.2, 0.1], [-0.1, 0.3]])
    g = GridSpec(2, (-1, -1), (1, 1), 0.1, pts)
    n = 40_000
    samples, radial, lateral = sample_reference_radial(2, g, 0.05, RngPolicy(8), n, return_parts=True)
    # |x| = |y|: radial covariance is -log|x|
    c_rad = np.cov(radial[:, 0], radial[:, 1])[0, 1]
    assert c_rad == pytest.approx(-math.log(0.5), abs=4 * math.sqrt(2 * 0.7 ** 2 / n))
    # lateral part for d = 2: log((|x| v |y|)/|x - y|)
    x, y = pts[0], pts[1]
    target = math.log(0.5 / np.linalg.norm(x - y))
    c_lat = np.cov(lateral[:, 0], lateral[:, 1])[0, 1]
    assert c_lat == pytest.approx(target, abs=0.03)
    # total against the reference kernel
    vals = np.stack([s.values for s in samples])
    k = KernelDescriptor.reference(2)
    for i, j in [(0, 2), (2, 3), (1, 3)]:
        emp = np.cov(vals[:, i], vals[:, j])[0, 1]
        assert emp == pytest.approx(eval_kernel(k, pts[i], pts[j]), abs=0.06)


def test_shift_field():
    g = GridSpec.box([0.0], [1.0], 0.1)
    s = sample_field(K0, g, 0.05, RngPolicy(9), 1)[0]
    same = shift_field(s, 0.0, RngPolicy(9))
    assert np.array_equal(same.values, s.values)
    moved = shift_field(s, 0.7, RngPolicy(9))
    np.testing.assert_allclose(moved.variance, s.variance + 0.7, rtol=0, atol=1e-15)
    diff = moved.values - s.values
    assert np.ptp(diff) < 1e-12
    with pytest.raises(DomainError):
        shift_field(s, -1.0, 0)


def test_shift_lognormal_mean():
    g = GridSpec(1, (0.0,), (1.0,), 1.0, np.array([[0.5]]))
    batch = FieldBatch(g, 0.5, np.zeros((100_000, 1)), np.zeros(1), "zero", 0)
    sig2 = 0.5
    out = shift_field(batch, sig2, RngPolicy(10))
    w = np.exp(math.sqrt(2) * out.values[:, 0] - sig2)
    assert abs(w.mean() - 1) <= 3 * w.std() / math.sqrt(w.size)


def test_csv_and_binary_round_trip(tmp_path):
    g = GridSpec.box([0.0], [1.0], 0.25)
    samples = sample_field(K0, g, 0.125, RngPolicy(12), 3)
    field_csv(tmp_path / "f.csv", samples)
    header, rows = read_csv(tmp_path / "f.csv")
    assert header == ["replica", "x0", "x1", "x2", "x3"]
    assert float(rows[1][2]) == samples[1].values[1]
    assert (tmp_path / "f.csv").read_bytes().count(b"\r\n") == 4
    arr = np.stack([s.values for s in samples])
    write_columns(tmp_path / "f.bin", arr, kind="field", d=1)
    assert (tmp_path / "f.bin").read_bytes()[:4] == b"GMCF"
    kind, d, back = read_columns(tmp_path / "f.bin")
    assert kind == "field" and d == 1
    assert np.array_equal(back, arr)
    (tmp_path / "bad.bin").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ContractError):
        read_columns(tmp_path / "bad.bin")


def test_rng_streams():
    p = RngPolicy(1)
    a = p.generator(3).standard_normal(4)
    assert np.array_equal(a, RngPolicy(1).generator(3).standard_normal(4))
    assert not np.array_equal(a, p.generator(4).standard_normal(4))
    assert not np.array_equal(a, p.child("x").generator(3).standard_normal(4))
    assert list(chunked(5, 2)) == [(0, 0, 2), (1, 2, 4), (2, 4, 5)]
    with pytest.raises(TypeError):
        RngPolicy(1.5)
