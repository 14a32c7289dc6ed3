import warnings
from fractions import Fraction

import numpy as np
import pytest

from macscale import (ConditioningWarning, MacModel, NumericalError, ValidationError, eval_F,
                      scalar_model, solve_G, w_sequence, z_matrix)
from macscale.scale import (gamma_radius, ratio_product, scaled_w_sequence, transform_residual,
                            z_matrix_shifted, z_ratios)
from models import desk_models, model_a


def walk_w(p, n):
    q = 1 - p
    return (1 - (q / p) ** n) / (p - q)


def test_initial_terms():
    A = model_a()
    t = w_sequence(A, 5)
    assert np.array_equal(t.w[0], np.zeros((2, 2)))
    assert np.allclose(t.w[1], np.linalg.inv(A.a_up), atol=1e-14)
    k = model_a(0.9)
    assert np.allclose(w_sequence(k, 2).w[1], np.linalg.inv(0.9 * k.a_up), atol=1e-14)


def test_scalar_closed_form():
    t = w_sequence(scalar_model(0.6), 20)
    assert t.w[2, 0, 0] == pytest.approx(25 / 9, abs=1e-13)
    for n in range(21):
        assert t.w[n, 0, 0] == pytest.approx(walk_w(0.6, n), abs=1e-10)


def test_table_is_read_only():
    t = w_sequence(model_a(), 3)
    with pytest.raises(ValueError):
        t.w[1, 0, 0] = 1.0


def test_ratios_match_W():
    t = w_sequence(model_a(), 12)
    for n in range(1, 12):
        # the direct solve loses digits in proportion to cond W(n+1)
        R = np.linalg.solve(t.w[n + 1].T, t.w[n].T).T
        assert np.abs(R - t.ratios[n]).max() <= 1e-14 * np.linalg.cond(t.w[n + 1])
        assert np.allclose(t.deficits[n], 1 - t.ratios[n].sum(axis=1), atol=1e-12)
        assert np.allclose(t.brackets[n] @ t.ratios[n], t.model.a_up, atol=1e-12)


def test_ratio_product_identity():
    R = np.arange(12.0).reshape(3, 2, 2)
    assert np.array_equal(ratio_product(R, 1, 1), np.eye(2))
    assert np.array_equal(ratio_product(R, 1, 3), R[1] @ R[2])


def test_singular_up_block():
    m = MacModel([[.5, 0], [.5, 0]], [[[0, .2], [0, 0]], [[.1, .2], [.2, .3]]])
    with pytest.raises(NumericalError, match="singular"):
        w_sequence(m, 4)


def test_blow_up():
    m = scalar_model(0.5, kill_v=0.2)
    with pytest.raises(NumericalError, match="blow-up"):
        w_sequence(m, 2000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)
        t = w_sequence(m, 2000, guard=False)
    assert t.n_max < 2000 and np.all(np.isfinite(t.w))


def test_conditioning_warning():
    with pytest.warns(ConditioningWarning):
        w_sequence(model_a(), 60)


def test_negative_nmax():
    with pytest.raises(ValidationError):
        w_sequence(model_a(), -1)


def test_z_matrix_small_n():
    A = model_a()
    t = w_sequence(A, 4)
    assert np.array_equal(z_matrix(t, 0.7, 0), np.eye(2))
    z = 0.7
    expect = (np.eye(2) + z * np.linalg.inv(A.a_up) @ (np.eye(2) - eval_F(A, z))) / z
    assert np.allclose(z_matrix(t, z, 1), expect, atol=1e-13)
    assert np.allclose(z_matrix_shifted(t, z, 2), z_matrix(t, z, 1) / z)
    with pytest.raises(ValidationError, match="extend table"):
        z_matrix(t, z, 5)


def test_z_matrix_exact_arithmetic():
    p, q, z = Fraction(3, 5), Fraction(2, 5), Fraction(1, 2)
    W = [Fraction(0), 1 / p]
    W.append((W[1] - 0) / p)  # (1 - A0) W(1) - A-1 W(0), A0 = 0
    F = p / z + q * z
    exact = (1 + sum(z ** k * W[k] * (1 - F) for k in range(3))) / z ** 2
    t = w_sequence(scalar_model(0.6), 2)
    assert t.w[2, 0, 0] == pytest.approx(float(W[2]), abs=1e-13)
    assert z_matrix(t, 0.5, 2)[0, 0] == pytest.approx(float(exact), abs=1e-12)


def test_z_ratios_match_Z():
    A = model_a()
    t = w_sequence(A, 10)
    for z in (0.5, 0.9, 1.0):
        S = z_ratios(t, z, 8)
        for n in range(1, 9):
            ref = np.linalg.solve(z_matrix(t, z, n).T, z_matrix(t, z, n - 1).T).T
            assert np.abs(S[n] - ref).max() <= 1e-9


def test_gamma_radius():
    assert gamma_radius(scalar_model(0.4)) == pytest.approx(2 / 3, abs=1e-12)
    A = model_a()
    assert gamma_radius(A) == pytest.approx(np.abs(np.linalg.eigvals(solve_G(A).result)).min())
    vals = [gamma_radius(A.with_kill(v)) for v in (1.0, 0.9, 0.7, 0.5, 0.3)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


@pytest.mark.filterwarnings("ignore::macscale.ConditioningWarning")
def test_scaled_sequence():
    A = model_a(0.9)
    t = w_sequence(A, 30)
    U = scaled_w_sequence(A, 0.8, 30)
    for n in range(31):
        assert np.allclose(U[n], 0.8 ** n * t.w[n], rtol=1e-12, atol=1e-300)


@pytest.mark.parametrize("name,m", list(desk_models().items()))
def test_transform_identity(name, m):
    g = gamma_radius(m)
    t = w_sequence(m, 1, guard=False)
    for z in (0.25 * g, 0.5 * g):
        for side in ("left", "right"):
            assert transform_residual(t, z, 200, side) <= 1e-8
    # residuals shrink with more terms until they reach rounding level
    res = [transform_residual(t, 0.5 * g, n) for n in range(5, 200, 5)]
    for r0, r1 in zip(res, res[1:]):
        if r0 > 1e-12:
            assert r1 < r0
