import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from shapaudit.dataset import DataTable
from shapaudit.errors import CalibrationError, ConfigurationError, ShapeError
from shapaudit.models import ExternalScores
from shapaudit.sgae import (
    SgaeCalibration,
    SgaeConfig,
    adaptive_weight,
    agreement,
    calibrate,
    decide,
    run_sgae,
    sgae_score,
    static_ensemble,
    topk_features,
)

finite = st.floats(-1.0, 1.0, allow_nan=False)
sigmas = st.floats(1e-6, 5.0, allow_nan=False)


@given(finite, sigmas)
def test_weight_law(A, sigma):
    w = adaptive_weight(A, SgaeCalibration(sigma, 10))
    assert 0.30 <= w <= 0.70
    if A < 0:
        assert w == 0.60
    if A == 0:
        assert w == 0.5


@given(finite, finite, sigmas)
def test_weight_monotone_on_convergent_side(a, b, sigma):
    a, b = sorted((abs(a), abs(b)))
    cal = SgaeCalibration(sigma, 10)
    assert adaptive_weight(a, cal) <= adaptive_weight(b, cal)


def test_weight_formula_value():
    cal = SgaeCalibration(0.5, 10)
    assert adaptive_weight(0.25, cal) == pytest.approx(0.5 + 0.2 * np.tanh(0.5), abs=1e-15)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_blend_stays_between_inputs(fl, fx, w):
    p = sgae_score(fl, fx, w)
    assert min(fl, fx) <= p <= max(fl, fx)


def test_static_is_half_blend():
    fl, fx = np.array([0.2, 0.9]), np.array([0.6, 0.1])
    assert static_ensemble(fl, fx).tolist() == sgae_score(fl, fx, 0.5).tolist()


def test_topk_ties_and_per_row():
    a = np.array([[1.0, -1.0, 0.0, 3.0], [0.0, 0.0, 5.0, 1.0]])
    b = np.array([[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
    assert topk_features(a, b, 2).tolist() == [[3, 0], [2, 3]]
    with pytest.raises(ConfigurationError):
        topk_features(a, b, 5)
    with pytest.raises(ShapeError):
        topk_features(a, b[:, :3], 2)


def test_agreement_matches_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(50, 12)), rng.normal(size=(50, 12))
    top = topk_features(a, b, 10)
    A = agreement(a, b, top)
    for i in range(50):
        ref = sps.spearmanr(a[i, top[i]], b[i, top[i]]).statistic
        assert A[i] == pytest.approx(ref, abs=1e-12)


def test_agreement_constant_side_is_zero():
    a = np.array([0.5, 0.5, 0.5, 0.5])
    b = np.array([1.0, 2.0, 3.0, 4.0])
    assert agreement(a, b, np.arange(4)) == 0.0


def test_calibrate_population_std_and_floor():
    A = np.array([0.1, 0.3, 0.5, 0.7])
    assert calibrate(A).sigma_A == pytest.approx(np.std(A), abs=1e-15)
    assert calibrate(np.zeros(5)).sigma_A == 1e-6
    with pytest.raises(CalibrationError):
        calibrate([0.2])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SgaeConfig(K=1)
    with pytest.raises(ConfigurationError):
        SgaeConfig(w_min=0.6)
    with pytest.raises(ConfigurationError):
        SgaeConfig(tau_a=0.8)
    with pytest.raises(ConfigurationError):
        SgaeConfig(topk_mode="other")


def test_decide_divergent_branch_uses_tau():
    phi_l = np.array([[1.0, 2.0, 3.0, 4.0]])
    phi_x = -phi_l
    A, w, p = decide(phi_l, phi_x, [0.8], [0.2], SgaeCalibration(0.3, 10), SgaeConfig(K=4))
    assert A[0] == -1.0
    assert w[0] == 0.6
    assert p[0] == pytest.approx(0.2 + 0.6 * 0.6, abs=1e-15)


def tables(n=400, d=12, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = (X[:, 0] + rng.normal(0, 1, n) > 1).astype(int)
    t = DataTable(X=X, y=y, feature_names=tuple(f"f{j}" for j in range(d)))
    return t.take(np.arange(n // 2)), t.take(np.arange(n // 2, n)), rng


def test_identical_scorers_give_identical_metrics():
    cal, ev, rng = tables()
    scores = ExternalScores(scores=1 / (1 + np.exp(-np.r_[cal.X[:, 0], ev.X[:, 0]])))
    noise = rng.normal(size=(400, 12))
    ex_l = lambda t: noise[t.row_ids]  # noqa: E731
    ex_x = lambda t: -noise[t.row_ids] + 0.1  # noqa: E731
    rep = run_sgae(cal, ev, scores, scores, ex_l, ex_x, n_boot=50)
    assert np.array_equal(rep.p, rep.p_static)
    assert rep.summary["sgae"] == rep.summary["static"]


def test_constant_attributions_reduce_to_static():
    cal, ev, rng = tables(seed=1)
    fl = ExternalScores(scores=rng.random(400))
    fx = ExternalScores(scores=rng.random(400))
    const = lambda t: np.ones((len(t), 12))  # noqa: E731
    varied = lambda t: t.X  # noqa: E731
    rep = run_sgae(cal, ev, fl, fx, const, varied, n_boot=50)
    assert np.all(rep.A == 0.0) and np.all(rep.w == 0.5)
    assert rep.p.tobytes() == rep.p_static.tobytes()


def test_run_rejects_overlapping_partitions():
    cal, ev, _ = tables()
    s = ExternalScores(scores=np.full(400, 0.5))
    with pytest.raises(ConfigurationError):
        run_sgae(cal, cal, s, s, lambda t: t.X, lambda t: t.X)


def test_report_rows_and_summary():
    cal, ev, rng = tables(seed=2)
    fl = ExternalScores(scores=rng.random(400))
    fx = ExternalScores(scores=rng.random(400))
    rep = run_sgae(cal, ev, fl, fx, lambda t: t.X, lambda t: t.X + rng.normal(size=t.X.shape), n_boot=50)
    rows = list(rep.rows())
    assert len(rows) == len(ev)
    assert rows[0][0] == int(ev.row_ids[0])
    assert rows[0][4] in ("convergent", "divergent")
    s = rep.summary_dict()
    assert s["n_rows"] == len(ev)
    assert s["delong_sgae_vs_static"]["p_value_str"] == f"{s['delong_sgae_vs_static']['p_value']:.4f}"
    assert s["static_auc_ci95"][0] <= s["static_auc_ci95"][1]


def test_global_topk_mode():
    cal, ev, rng = tables(seed=3)
    fl = ExternalScores(scores=rng.random(400))
    rep = run_sgae(cal, ev, fl, fl, lambda t: t.X, lambda t: t.X * 2, SgaeConfig(K=4, topk_mode="global"),
                   n_boot=20)
    # proportional attributions agree perfectly on any feature subset
    assert np.all(rep.A == 1.0)
