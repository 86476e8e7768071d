import numpy as np
import pytest

from dpgrad.lowerbound import (
    BRANCH_X1,
    BRANCH_X3,
    CnnParams,
    GameConfig,
    QuadPoly3,
    TARGET_X1SQ,
    TARGET_X2SQ,
    TARGET_X3SQ,
    adversary_game,
    coefficient_deviation_check,
    expected_sq_loss,
    game_summary,
    monte_carlo_sq_loss,
    predict_poly,
    sample_unit_ball,
    v1_grid,
    witness_losses,
)


def poly(**coeffs):
    p = QuadPoly3.zero()
    for name, val in coeffs.items():
        p = p + QuadPoly3.monomial(name.replace("_", "*"), val)
    return p


# --- prediction expansion ------------------------------------------------


def test_predict_poly_kernel_selects_x2sq():
    p = predict_poly(CnnParams(w=np.array([0.0, 1.0]), v=np.array([1.0, 0.0])))
    np.testing.assert_array_equal(p.coeffs, TARGET_X2SQ.coeffs)


def test_predict_poly_second_slot_and_first_slot():
    p = predict_poly(CnnParams(w=np.array([1.0, 0.0]), v=np.array([0.0, 1.0])))
    np.testing.assert_array_equal(p.coeffs, TARGET_X2SQ.coeffs)
    p = predict_poly(CnnParams(w=np.array([1.0, 0.0]), v=np.array([1.0, 0.0])))
    np.testing.assert_array_equal(p.coeffs, TARGET_X1SQ.coeffs)


def test_predict_poly_binomial_expansion():
    p = predict_poly(CnnParams(w=np.array([1.0, 1.0]), v=np.array([1.0, 0.0])))
    expected = poly(**{"x1^2": 1.0, "x2^2": 1.0, "x1_x2": 2.0})
    np.testing.assert_array_equal(p.coeffs, expected.coeffs)


# --- exact moments --------------------------------------------------------


def test_loss_zero_iff_identical():
    p = poly(**{"x2^2": 1.0, "x1_x3": -0.5})
    assert expected_sq_loss(p, p) == 0.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = QuadPoly3(rng.standard_normal(10))
        b = QuadPoly3(rng.standard_normal(10))
        val = expected_sq_loss(a, b)
        assert val >= 0.0
        assert val == expected_sq_loss(b, a)
        if not np.array_equal(a.coeffs, b.coeffs):
            assert val > 0.0


def test_loss_constant_quarter():
    assert expected_sq_loss(poly(**{"1": 0.25}), QuadPoly3.zero()) == pytest.approx(1.0 / 16.0)


def test_loss_between_axis_squares():
    # E[x1^4] + E[x2^4] - 2 E[x1^2 x2^2] = 3/35 + 3/35 - 2/35
    assert expected_sq_loss(TARGET_X1SQ, TARGET_X2SQ) == pytest.approx(4.0 / 35.0)


def test_loss_matches_monte_carlo_oracle():
    rng = np.random.default_rng(123)
    for _ in range(5):
        a = QuadPoly3(rng.uniform(-1, 1, 10))
        b = QuadPoly3(rng.uniform(-1, 1, 10))
        exact = expected_sq_loss(a, b)
        estimate, stderr = monte_carlo_sq_loss(a, b, 10**6, rng)
        assert abs(estimate - exact) <= 3.0 * stderr + 1e-12


def test_unit_ball_sampler(rng):
    pts = sample_unit_ball(20000, rng)
    assert pts.shape == (20000, 3)
    r2 = np.einsum("ij,ij->i", pts, pts)
    assert np.all(r2 <= 1.0)
    assert np.max(np.abs(pts.mean(axis=0))) <= 0.02
    # E[x_i^2] = 1/5 on the ball
    assert np.max(np.abs((pts**2).mean(axis=0) - 0.2)) <= 0.01


# --- coefficient deviations ------------------------------------------------


def test_deviation_identical_zero():
    p = poly(**{"x1^2": 0.3})
    assert coefficient_deviation_check(p, p) == 0.0


def test_deviation_between_axis_squares():
    assert coefficient_deviation_check(TARGET_X1SQ, TARGET_X2SQ) == 1.0


def test_low_loss_implies_small_deviation():
    # any polynomial within 1/1000 of x2^2 deviates by at most 1/4 per
    # coefficient; scale random perturbations onto the loss level set
    rng = np.random.default_rng(7)
    for _ in range(200):
        delta = QuadPoly3(rng.standard_normal(10))
        raw = expected_sq_loss(TARGET_X2SQ + delta, TARGET_X2SQ)
        target_loss = rng.uniform(0.0, 1e-3)
        scaled = delta.scale(np.sqrt(target_loss / raw))
        p2 = TARGET_X2SQ + scaled
        assert expected_sq_loss(p2, TARGET_X2SQ) <= 1e-3 * (1 + 1e-9)
        assert coefficient_deviation_check(p2, TARGET_X2SQ) <= 0.25


# --- the adversary game -----------------------------------------------------


def test_witnesses_are_exactly_realizable():
    losses = witness_losses()
    for pair in losses.values():
        assert pair["loss1"] == 0.0
        assert pair["loss2"] == 0.0


def test_grid_contains_witness_prompts():
    grid = v1_grid(GameConfig(v1_range=0.3, v1_resolution=0.05))
    assert any(tuple(p) == (1.0, 0.0) for p in grid)
    assert any(tuple(p) == (0.0, 1.0) for p in grid)


def test_game_config_validation():
    with pytest.raises(ValueError, match="resolution"):
        GameConfig(v1_resolution=0.0)
    with pytest.raises(ValueError, match="positive"):
        GameConfig(n_starts=0)


@pytest.fixture(scope="module")
def small_game():
    config = GameConfig(
        v1_range=0.5, v1_resolution=0.1, n_starts=16, gd_iters=150, refine_iters=50, seed=0, chunk_size=64
    )
    return config, adversary_game(config)


def test_game_friendly_branch_is_free_for_witness_prompts(small_game):
    _, reports = small_game
    by_v1 = {r.v1: r for r in reports}
    assert by_v1[(1.0, 0.0)].branch_values[BRANCH_X3] == 0.0
    assert by_v1[(1.0, 0.0)].branch == BRANCH_X1
    assert by_v1[(0.0, 1.0)].branch_values[BRANCH_X1] == 0.0
    assert by_v1[(0.0, 1.0)].branch == BRANCH_X3


def test_game_zero_prompt_pins_first_loss(small_game):
    _, reports = small_game
    report = {r.v1: r for r in reports}[(0.0, 0.0)]
    # with a zero committed prompt the first loss is E[(x2^2)^2] = 3/35
    assert report.branch_values[BRANCH_X1] == pytest.approx(3.0 / 35.0, abs=1e-9)
    assert report.branch_values[BRANCH_X3] == pytest.approx(3.0 / 35.0, abs=1e-9)


def test_game_losses_recompute_from_parameters(small_game):
    _, reports = small_game
    for report in reports[::7]:
        bf = report.best_found
        w = np.asarray(bf["w"])
        p1 = predict_poly(CnnParams(w=w, v=np.asarray(report.v1)))
        p2 = predict_poly(CnnParams(w=w, v=np.asarray(bf["v2"])))
        target2 = TARGET_X1SQ if report.branch == BRANCH_X1 else TARGET_X3SQ
        assert bf["loss1"] == expected_sq_loss(p1, TARGET_X2SQ)
        assert bf["loss2"] == expected_sq_loss(p2, target2)
        assert bf["max_loss"] == max(bf["loss1"], bf["loss2"])


def test_game_adversary_beats_the_bar_everywhere(small_game):
    _, reports = small_game
    for report in reports:
        assert report.branch_values[report.branch] > 1e-3


def test_game_search_reaches_stationarity(small_game):
    _, reports = small_game
    worst = max(r.best_found["min_subgradient_norm"] for r in reports)
    assert worst <= 1e-9


def test_game_low_loss_points_respect_coefficient_bound(small_game):
    _, reports = small_game
    stats = reports[-1].search_stats
    assert stats["low_loss_points_checked"] > 10_000
    assert stats["low_loss_coeff_violations"] == 0
    assert stats["low_loss_max_coeff_deviation"] <= 0.25


def test_game_summary_shape(small_game):
    config, reports = small_game
    summary = game_summary(reports)
    assert summary["n_grid_points"] == len(reports)
    assert summary["all_above_bar"] is True
    assert summary["witnesses_exact_zero"] is True
    assert summary["min_adversary_value"] > 1e-3
