import csv
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from medtour.analysis import (
    DEFAULT_INTERACTIONS,
    PRIORITY,
    RankDeficiencyError,
    ScreeningModel,
    analyze,
    effect_direction_table,
    fit_screening_model,
    model_matrix,
    normal_equations_solution,
    normal_quantile_pairs,
    recommend_levels,
    response_surface_grid,
    shapiro_wilk,
)
from medtour.config import FACTORS
from medtour.doe import generate_design
from medtour.metrics import csv_header, csv_row, ResponseVector


def line_fit():
    x = np.arange(5.0)
    X = np.column_stack([np.ones(5), x])
    return fit_screening_model(X, [1, 3, 2, 5, 4], ["Intercept", "x"])


class TestLeastSquares:
    def test_exact_line(self):
        x = np.linspace(-1, 1, 7)
        X = np.column_stack([np.ones(7), x])
        m = fit_screening_model(X, 2 + 3 * x, ["Intercept", "x"])
        assert m.coef == pytest.approx([2, 3])
        assert m.r2 == pytest.approx(1.0)

    def test_small_hand_example(self):
        m = line_fit()
        # slope = Sxy / Sxx = 8 / 10, intercept = 3 - 0.8 * 2
        assert m.coef == pytest.approx([1.4, 0.8])
        assert m.residuals == pytest.approx([-0.4, 0.8, -1.0, 1.2, -0.6])
        # sigma^2 = RSS / 3 = 1.2, se(slope) = sqrt(1.2 / 10)
        assert m.se[1] == pytest.approx(np.sqrt(0.12))
        assert m.t[1] == pytest.approx(0.8 / np.sqrt(0.12))
        assert m.r2 == pytest.approx(1 - 3.6 / 10)
        assert m.df_resid == 3

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_normal_equations(self, seed):
        rng = np.random.default_rng(seed)
        n, p = rng.integers(20, 80), rng.integers(2, 12)
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))])
        y = rng.normal(size=n)
        m = fit_screening_model(X, y)
        np.testing.assert_allclose(m.coef, normal_equations_solution(X, y), atol=1e-8)
        np.testing.assert_allclose(X.T @ m.residuals, 0, atol=1e-8)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(1)
        X = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
        y = rng.normal(size=30)
        perm = rng.permutation(30)
        a, b = fit_screening_model(X, y), fit_screening_model(X[perm], y[perm])
        np.testing.assert_allclose(a.coef, b.coef, atol=1e-12)
        np.testing.assert_allclose(a.t, b.t, atol=1e-10)

    def test_rank_deficiency_names_columns(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=20)
        X = np.column_stack([np.ones(20), x, 2 * x])
        with pytest.raises(RankDeficiencyError) as exc:
            fit_screening_model(X, rng.normal(size=20), ["Intercept", "x", "twice_x"])
        assert exc.value.columns == ["twice_x"]

    def test_needs_residual_degrees_of_freedom(self):
        with pytest.raises(ValueError):
            fit_screening_model(np.eye(3), [1, 2, 3])

    def test_model_matrix_terms(self):
        coded = generate_design().matrix[:20]
        X, terms = model_matrix(coded, ["MO", "AF"])
        assert terms[:3] == ["Intercept", "A", "B"] and terms[-2:] == ["MO", "AF"]
        assert np.array_equal(X[:, -1], coded[:, 0] * coded[:, 5])


def planted(seed=0, scale=1.0):
    d = generate_design().matrix.astype(float)
    rng = np.random.default_rng(seed)
    y = 5 - 2 * d[:, 0] + 1.5 * d[:, 3] + 0.05 * d[:, 7] + rng.normal(0, 0.3, size=len(d))
    X, terms = model_matrix(d)
    return X, scale * y, terms


class TestDirections:
    def test_planted_signs(self):
        X, y, terms = planted()
        table = effect_direction_table({3: fit_screening_model(X, y, terms)})
        assert table["A"][3] == "down" and table["D"][3] == "up"
        assert table["H"][3] == "ns"

    def test_sign_flip_flips_directions(self):
        X, y, terms = planted()
        a = effect_direction_table({1: fit_screening_model(X, y, terms)})
        b = effect_direction_table({1: fit_screening_model(X, -y, terms)})
        flip = {"up": "down", "down": "up", "ns": "ns"}
        assert all(b[f][1] == flip[a[f][1]] for f in FACTORS)

    @given(st.floats(1e-3, 1e3))
    @settings(max_examples=20, deadline=None)
    def test_positive_scaling_keeps_directions(self, c):
        X, y, terms = planted()
        a = fit_screening_model(X, y, terms)
        b = fit_screening_model(X, c * y, terms)
        np.testing.assert_allclose(a.t, b.t, rtol=1e-6)
        assert effect_direction_table({1: a}) == effect_direction_table({1: b})


class TestShapiroWilk:
    @given(st.integers(3, 400), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_agrees_with_reference(self, n, seed):
        x = np.random.default_rng(seed).normal(size=n)
        w, p = shapiro_wilk(x)
        ref = stats.shapiro(x)
        assert w == pytest.approx(ref.statistic, abs=1e-5)
        assert p == pytest.approx(ref.pvalue, abs=1e-5)

    @pytest.mark.parametrize("n", [1000, 5000])
    def test_agrees_for_large_samples(self, n):
        x = np.random.default_rng(n).exponential(size=n)
        w, p = shapiro_wilk(x)
        ref = stats.shapiro(x)
        assert w == pytest.approx(ref.statistic, abs=1e-5)
        assert p == pytest.approx(ref.pvalue, abs=1e-5)

    def test_size_under_normal_data(self):
        rng = np.random.default_rng(77)
        rejections = sum(shapiro_wilk(rng.normal(size=256))[1] < 0.05 for _ in range(1000))
        assert abs(rejections / 1000 - 0.05) < 0.02

    def test_uniform_grid_reference_values(self):
        # frozen from an independent implementation; fifty evenly spaced
        # points are just short of rejection at 5%, a hundred are not
        w50, p50 = shapiro_wilk(np.linspace(0, 1, 50))
        assert p50 == pytest.approx(stats.shapiro(np.linspace(0, 1, 50)).pvalue, abs=1e-6)
        assert 0.05 < p50 < 0.07
        assert shapiro_wilk(np.linspace(0, 1, 100))[1] < 0.01

    def test_constant_sample_rejected(self):
        with pytest.raises(ValueError):
            shapiro_wilk([2.0] * 10)

    def test_size_limits(self):
        with pytest.raises(ValueError):
            shapiro_wilk([1.0, 2.0])

    def test_qq_pairs_are_sorted(self):
        pairs = normal_quantile_pairs([3.0, -1.0, 0.5])
        assert [r for _, r in pairs] == [-1.0, 0.5, 3.0]
        assert pairs[1][0] == pytest.approx(0.0)


def fake_model(coefs, ts, response="y"):
    terms = ["Intercept"] + list(FACTORS) + [k for k in coefs if len(k) == 2]
    coef = np.array([coefs.get(t, 0.0) for t in terms])
    t = np.array([ts.get(t, 0.0) for t in terms])
    n = len(terms)
    return ScreeningModel(response, terms, coef, np.ones(n), t, np.zeros(1), np.zeros(1), 0.5, 0.5, 10)


class TestSurfaces:
    def test_saddle_has_two_corners(self):
        m = fake_model({"MO": 1.0}, {"MO": 5.0})
        s = response_surface_grid(m, "M", "O")
        assert s.minimizing_corners == [(-1, 1), (1, -1)]
        assert s.maximizing_corners == [(-1, -1), (1, 1)]

    def test_additive_corner(self):
        m = fake_model({"M": -1.0, "O": 0.6, "MO": 0.0}, {"M": -9, "O": 5})
        s = response_surface_grid(m, "M", "O")
        assert s.minimizing_corners == [(1, -1)]

    def test_centre_equals_intercept(self):
        m = fake_model({"Intercept": 4.2, "K": 1.0, "O": -2.0, "KO": 0.7}, {})
        s = response_surface_grid(m, "K", "O")
        assert s.values[10, 10] == pytest.approx(4.2)
        assert s.values[20, 0] == pytest.approx(4.2 + 1 + 2 - 0.7)

    def test_missing_term(self):
        with pytest.raises(KeyError):
            response_surface_grid(fake_model({}, {}), "A", "B")


class TestRecommendation:
    def test_top_priority_main_effect_decides(self):
        models = {3: fake_model({"A": -0.5}, {"A": -5}), 6: fake_model({"A": -1.0}, {"A": -10})}
        rec = recommend_levels(models)
        assert rec["A"].level == +1
        assert "outranks" in rec["A"].rationale

    def test_maximised_response(self):
        rec = recommend_levels({5: fake_model({"B": -2.0}, {"B": -3})})
        assert rec["B"].level == -1

    def test_no_effect_defaults_low(self):
        rec = recommend_levels({3: fake_model({}, {})})
        assert rec["C"].level == -1 and "parsimony" in rec["C"].rationale

    def test_interaction_corner(self):
        m = fake_model({"O": -0.5, "MO": 1.0}, {"O": -1.0, "MO": 3.0})
        rec = recommend_levels({3: m})
        assert rec["M"].level == -1 and rec["O"].level == +1
        assert "MO" in rec["M"].rationale

    def test_ambiguous_saddle_defers_to_next_response(self):
        models = {3: fake_model({"MO": 1.0}, {"MO": 5.0}), 2: fake_model({"M": 1.0}, {"M": 4.0})}
        assert recommend_levels(models)["M"].level == -1
        assert "system wait" in recommend_levels(models)["M"].rationale

    def test_priority_order(self):
        assert PRIORITY == (3, 2, 1, 4, 5, 6)


def test_default_interactions_fit_on_design():
    d = generate_design().matrix
    for r, inter in DEFAULT_INTERACTIONS.items():
        X, terms = model_matrix(d, inter)
        assert np.linalg.matrix_rank(X) == X.shape[1]


def test_analyze_writes_outputs(tmp_path):
    d = generate_design()
    rng = np.random.default_rng(5)
    path = tmp_path / "results.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header())
        for i in range(d.runs):
            row = d.row(i)
            x = np.array([row[f] for f in FACTORS], float)
            rv = ResponseVector(
                early_dropout=int(50 + 5 * x[10] + rng.integers(0, 3)),
                avg_system_wait=3 + 0.5 * x[1] + rng.normal(0, 0.1),
                avg_tourist_hospital_queue_wait=2 - 0.7 * x[0] + rng.normal(0, 0.1),
                emergency_before_appointment=int(100 + 10 * x[15] + rng.integers(0, 5)),
                recovered=int(800 + rng.integers(0, 20)),
                utilisation=tuple(60 - 5 * x[5] + rng.normal(0, 1) for _ in range(5)),
            )
            w.writerow(csv_row(i, 0, 1, row, rv))
    out = tmp_path / "analysis"
    models = analyze(str(path), str(out))
    for name in ("directions.csv", "coefficients.csv", "model_summary.csv", "recommendation.txt",
                 "interactions.csv", "boxplots.csv"):
        assert os.path.exists(out / name)
    assert os.listdir(out / "surfaces") and os.listdir(out / "diagnostics")
    assert models[3].coefficient("A") == pytest.approx(-0.7, abs=0.05)
    text = (out / "recommendation.txt").read_text()
    assert "A = +1" in text
