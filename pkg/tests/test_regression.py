import numpy as np
import pytest

from rbdsde.errors import ConfigError
from rbdsde.regression import LocalBasis, PolynomialBasis, evaluate, fit


def test_constant_targets_reproduced():
    rng = np.random.default_rng(0)
    x = rng.normal(0, 1, (500, 2))
    y = np.full(500, 3.25)
    for basis in (PolynomialBasis(2, 2), LocalBasis(4, 2)):
        fn = fit(basis, x, y)
        np.testing.assert_allclose(evaluate(fn, x), 3.25, atol=1e-10)
        assert evaluate(fn, np.array([9.0, -9.0])) == pytest.approx(3.25)


def test_linear_target_exact_coefficients():
    rng = np.random.default_rng(1)
    x = rng.normal(0, 1, (400, 2))
    y = 2.0 * x[:, 0] + 3.0
    fn = fit(PolynomialBasis(2, 2), x, y)
    # ordering: constant, x1, x2, then quadratics
    np.testing.assert_allclose(fn.coeffs[0, 0], 3.0, atol=1e-10)
    np.testing.assert_allclose(fn.coeffs[1, 0], 2.0, atol=1e-10)
    np.testing.assert_allclose(fn.coeffs[2:, 0], 0.0, atol=1e-10)
    assert not fn.ridged
    assert np.isfinite(fn.condition)


def test_local_basis_beats_oracle_bound():
    # sin(x) + noise; the oracle fit on 10x data bounds achievable L2 error
    rng = np.random.default_rng(2)
    m = 10_000
    x = rng.uniform(-np.pi, np.pi, (m, 1))
    y = np.sin(x[:, 0]) + 0.3 * rng.standard_normal(m)
    basis = LocalBasis(20, 1)
    fn = fit(basis, x, y)
    grid = np.linspace(-3.0, 3.0, 200)[:, None]
    err = np.sqrt(np.mean((evaluate(fn, grid) - np.sin(grid[:, 0])) ** 2))

    x_big = rng.uniform(-np.pi, np.pi, (10 * m, 1))
    y_big = np.sin(x_big[:, 0]) + 0.3 * rng.standard_normal(10 * m)
    oracle = fit(basis, x_big, y_big)
    err_oracle = np.sqrt(
        np.mean((evaluate(oracle, grid) - np.sin(grid[:, 0])) ** 2)
    )
    # bias is shared; variance scales with 1/M, so 4x the oracle error plus
    # slack covers the bias+variance budget
    assert err <= 4.0 * err_oracle + 0.02


def test_residual_orthogonality():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 1, (800, 2))
    y = np.cos(x[:, 0]) * x[:, 1] + 0.1 * rng.standard_normal(800)
    basis = PolynomialBasis(3, 2)
    fn = fit(basis, x, y)
    design = basis.design(x)
    resid = y - evaluate(fn, x)
    inner = design.T @ resid
    scale = np.linalg.norm(design, axis=0) * np.linalg.norm(y)
    assert np.all(np.abs(inner) <= 1e-8 * scale)


def test_fit_idempotence():
    rng = np.random.default_rng(4)
    x = rng.normal(0, 1, (600, 1))
    y = x[:, 0] ** 2 + rng.standard_normal(600)
    fn = fit(PolynomialBasis(3, 1), x, y)
    fn2 = fit(PolynomialBasis(3, 1), x, evaluate(fn, x))
    assert np.max(np.abs(fn.coeffs - fn2.coeffs)) <= 1e-10

    loc = fit(LocalBasis(10, 1), x, y)
    loc2 = fit(LocalBasis(10, 1), x, evaluate(loc, x))
    assert np.max(np.abs(loc.cell_values - loc2.cell_values)) <= 1e-10


def test_rank_deficiency_triggers_ridge():
    rng = np.random.default_rng(5)
    x = np.zeros((100, 2))
    x[:, 0] = rng.normal(0, 1, 100)
    x[:, 1] = 2.0 * x[:, 0]  # collinear predictors
    y = x[:, 0] + 1.0
    fn = fit(PolynomialBasis(1, 2), x, y)
    assert fn.ridged
    # ridge solution still reproduces fitted values on the sample
    np.testing.assert_allclose(evaluate(fn, x), y, atol=1e-4)


def test_degenerate_predictor_single_atom():
    # deterministic X (all samples identical) collapses to the plain mean
    x = np.zeros((200, 1))
    y = np.arange(200.0)
    fn = fit(LocalBasis(8, 1), x, y)
    assert evaluate(fn, np.array([0.0])) == pytest.approx(np.mean(y))
    assert evaluate(fn, np.array([5.0])) == pytest.approx(np.mean(y))


def test_thin_cells_merge_into_neighbors():
    rng = np.random.default_rng(6)
    # two well-populated clumps; cells between them are nearly empty
    x = np.concatenate([rng.normal(-3, 0.1, 500), rng.normal(3, 0.1, 500)])[:, None]
    y = np.where(x[:, 0] < 0, -1.0, 1.0)
    fn = fit(LocalBasis(16, 1, min_count=30), x, y)
    # a query in the sparse middle answers with a nearby clump's value
    mid = evaluate(fn, np.array([0.0]))
    assert mid in (pytest.approx(-1.0), pytest.approx(1.0))
    assert evaluate(fn, np.array([-3.0])) == pytest.approx(-1.0)
    assert evaluate(fn, np.array([3.0])) == pytest.approx(1.0)


def test_vector_targets_and_single_point_shape():
    rng = np.random.default_rng(7)
    x = rng.normal(0, 1, (300, 2))
    y = np.stack([x[:, 0], x[:, 1] ** 2, np.ones(300)], axis=1)
    fn = fit(PolynomialBasis(2, 2), x, y)
    out = evaluate(fn, np.array([0.5, -0.5]))
    assert out.shape == (3,)
    np.testing.assert_allclose(out, [0.5, 0.25, 1.0], atol=1e-8)


def test_preconditions_raise():
    x = np.zeros((3, 2))
    y = np.zeros(3)
    with pytest.raises(ConfigError):
        fit(PolynomialBasis(3, 2), x, y)  # more basis functions than samples
    with pytest.raises(ConfigError):
        fit(PolynomialBasis(1, 1), x, y)  # dim mismatch
    with pytest.raises(ConfigError):
        fit(PolynomialBasis(1, 2), x, np.zeros(5))  # length mismatch


def test_deterministic_given_input_order():
    rng = np.random.default_rng(8)
    x = rng.normal(0, 1, (1000, 1))
    y = np.sin(x[:, 0]) + rng.standard_normal(1000)
    f1 = fit(LocalBasis(12, 1), x, y)
    f2 = fit(LocalBasis(12, 1), x, y)
    np.testing.assert_array_equal(f1.cell_values, f2.cell_values)
    p1 = fit(PolynomialBasis(4, 1), x, y)
    p2 = fit(PolynomialBasis(4, 1), x, y)
    np.testing.assert_array_equal(p1.coeffs, p2.coeffs)
