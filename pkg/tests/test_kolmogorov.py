import math

import numpy as np
import pytest

from emdini.errors import ConfigurationError, DiscretizationError
from emdini.kolmogorov import PdeProblem, gradient_scaling_check, solve_backward, source_by_name

L = 10.5 * math.pi  # cos(L) = 0, so sin satisfies the reflecting boundary


def test_constant_source_gives_linear_in_time():
    pr = PdeProblem(0.0, 1.0, L, 601, source=source_by_name("constant", c=1.0))
    sol = solve_backward(pr, 50)
    expect = (1.0 - sol.times)[:, None] * np.ones_like(sol.x)
    assert np.max(np.abs(sol.u - expect)) < 1e-10
    assert sol.sup_grad < 1e-8


def test_sin_source_matches_closed_form():
    # u = 2 (1 - exp(-(t1 - t) / 2)) sin x solves u_t + u_xx / 2 = -sin x with u(t1) = 0
    errs = []
    for nx, nt in [(601, 100), (1201, 200)]:
        sol = solve_backward(PdeProblem(0.0, 1.0, L, nx, source=source_by_name("sin")), nt)
        exact = 2 * (1 - np.exp(-(1.0 - sol.times[:, None]) / 2)) * np.sin(sol.x)
        errs.append(np.max(np.abs(sol.u - exact)))
    assert errs[1] < errs[0] < 2e-3
    assert errs[0] / errs[1] > 1.6


def test_sup_grad_converges_under_refinement():
    vals = [solve_backward(PdeProblem(0.0, 1.0, L, nx, source=source_by_name("sin")), nt).sup_grad
            for nx, nt in [(1201, 200), (2401, 400)]]
    assert abs(vals[1] - vals[0]) / vals[1] < 0.02
    assert vals[1] == pytest.approx(2 * (1 - math.exp(-0.5)), rel=2e-3)


def test_zero_source_gives_zero():
    sol = solve_backward(PdeProblem(0.0, 1.0, 12.0, 101), 10)
    assert np.all(sol.u == 0.0)


def test_drift_is_supported():
    pr = PdeProblem(0.0, 0.5, L, 1201, drift=lambda t, x: np.full_like(x, 0.3),
                    source=source_by_name("constant", c=2.0))
    sol = solve_backward(pr, 40)
    np.testing.assert_allclose(sol.u[0], 1.0, atol=1e-10)


def test_loss_of_dominance_is_reported():
    pr = PdeProblem(0.0, 1.0, 12.0, 11, drift=lambda t, x: np.full_like(x, 1e3))
    with pytest.raises(DiscretizationError, match="Peclet"):
        solve_backward(pr, 2)


def test_degenerate_diffusion_rejected():
    pr = PdeProblem(0.0, 1.0, 12.0, 11, diffusion=lambda t, x: np.zeros_like(x))
    with pytest.raises(ConfigurationError):
        solve_backward(pr, 2)


def test_scaling_ladder_sin_matches_exact_ratio():
    # exact sup_grad is 2 (1 - exp(-length / 2)), so ratios follow from the closed form
    lengths = [0.4, 0.2, 0.1, 0.05]
    res = gradient_scaling_check(PdeProblem(0.0, 1.0, L, 1201, source=source_by_name("sin")), lengths)
    exact = [2 * (1 - math.exp(-v / 2)) / math.sqrt(v) for v in lengths]
    for row, e in zip(res.rows, exact):
        assert row.ratio == pytest.approx(e, rel=5e-3)
    assert res.monotone
    assert res.spread == pytest.approx(exact[0] / exact[-1], rel=1e-2)


def test_scaling_ladder_rough_source_stays_within_factor_two():
    pr = PdeProblem(0.0, 1.0, 12.0, 4001, source=source_by_name("holder", alpha=0.1))
    res = gradient_scaling_check(pr, [0.4, 0.2, 0.1, 0.05])
    assert res.passed and res.spread < 1.5


def test_scaling_csv_and_validation():
    pr = PdeProblem(0.0, 1.0, 12.0, 101)
    res = gradient_scaling_check(pr, [0.4, 0.2], n_t=5)
    assert res.spread == 1.0
    assert res.to_csv().startswith("length,sup_grad,ratio\n")
    with pytest.raises(ConfigurationError):
        gradient_scaling_check(pr, [0.1, 0.2])


def test_unknown_source():
    with pytest.raises(ConfigurationError):
        source_by_name("cosine")
