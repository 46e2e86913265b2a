import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize, stats

from semdro.baselines import (CellCache, DROError, KLConfig, cell_worst_rewards, dro_evaluate, dro_learn,
                              factored_radii, fdro_evaluate, fdro_learn, importance_weights, ipw_value,
                              kl_radius, solve_alpha)
from semdro.data import BanditDataset, generate_synthetic, normalize_all
from semdro.policy import Policy


def _ds(X, actions, rewards, n_actions, prop=None):
    X = np.asarray(X, float).reshape(len(actions), -1)
    cols = tuple(f"X{j}" for j in range(X.shape[1]))
    return BanditDataset(cols, {c: "cont" for c in cols}, X, actions, rewards, n_actions,
                         propensity=prop)


def primal_worst_case(y, p, delta):
    """min_q q.y subject to KL(q || p) <= delta, solved directly over the simplex."""
    n = len(y)

    def kl(q):
        q = np.clip(q, 1e-300, None)
        return float(np.sum(q * np.log(q / p)))

    res = optimize.minimize(lambda q: q @ y, p.copy(), method="SLSQP", bounds=[(0, 1)] * n,
                            constraints=[{"type": "eq", "fun": lambda q: q.sum() - 1},
                                         {"type": "ineq", "fun": lambda q: delta - kl(q)}],
                            options={"ftol": 1e-12, "maxiter": 500})
    return float(res.fun)


@pytest.mark.parametrize("seed,delta", [(0, 0.05), (1, 0.3), (2, 1.0)])
def test_dual_matches_primal(seed, delta):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1, 8)
    w = rng.uniform(0.5, 2.0, 8)
    dual = solve_alpha(y, w, delta).value
    assert dual == pytest.approx(primal_worst_case(y, w / w.sum(), delta), abs=2e-4)


def test_zero_radius_is_weighted_mean():
    y = np.array([0.1, 0.5, 0.9])
    w = np.array([1.0, 2.0, 1.0])
    res = solve_alpha(y, w, 0.0)
    assert res.value == pytest.approx(0.5) and res.status == "nominal"


def test_huge_radius_reaches_minimum():
    rng = np.random.default_rng(0)
    y = rng.uniform(0.2, 1.0, 50)
    res = solve_alpha(y, np.ones(50), 1000.0)
    assert res.value == pytest.approx(y.min(), abs=1e-3)


def test_constant_rewards():
    assert solve_alpha(np.full(5, 0.3), np.ones(5), 2.0).value == pytest.approx(0.3)


def test_bad_weights_rejected():
    with pytest.raises(DROError):
        solve_alpha(np.ones(3), np.array([1.0, -1.0, 1.0]), 0.1)
    with pytest.raises(DROError):
        solve_alpha(np.ones(3), np.zeros(3), 0.1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 3.0), st.floats(0.01, 3.0))
def test_monotone_in_radius_and_below_nominal(seed, d1, d2):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1, 30)
    w = rng.uniform(0.1, 1, 30)
    lo, hi = sorted((d1, d2))
    v_lo, v_hi = solve_alpha(y, w, lo).value, solve_alpha(y, w, hi).value
    nominal = float(w @ y / w.sum())
    assert v_hi <= v_lo + 1e-7
    assert v_lo <= nominal + 1e-9
    assert v_hi >= y.min() - 1e-9


def test_ipw_and_dro_on_toy_logs():
    rng = np.random.default_rng(1)
    n = 400
    a = rng.integers(0, 2, n)
    y = np.where(a == 1, 0.8, 0.2) + rng.uniform(-0.05, 0.05, n)
    ds = _ds(np.zeros(n), a, y, 2, prop=np.full(n, 0.5))
    always_one = Policy.tabular({}, 2, ("X0",), default_action=1)
    assert ipw_value(ds, always_one) == pytest.approx(y[a == 1].mean())
    assert dro_evaluate(ds, always_one, delta=0.0).value == pytest.approx(ipw_value(ds, always_one))
    assert dro_evaluate(ds, always_one, delta=0.5).value <= ipw_value(ds, always_one)


def test_zero_propensity_is_an_error():
    ds = _ds(np.zeros(3), [0, 1, 0], [1.0, 0.0, 1.0], 2, prop=np.array([0.5, 0.0, 0.5]))
    with pytest.raises(DROError):
        importance_weights(ds, Policy.uniform(2))


def _gauss_env(x):
    n = len(x)
    return _ds(x, np.zeros(n, int), np.zeros(n), 1)


def test_identical_environments_radius_zero():
    x = np.random.default_rng(0).normal(size=500)
    assert kl_radius([_gauss_env(x), _gauss_env(x)], ["X0"]) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("mu", [1.0, 2.0])
def test_histogram_kl_against_quadrature(mu):
    rng = np.random.default_rng(0)
    n = 200_000
    envs = [_gauss_env(rng.normal(0, 1, n)), _gauss_env(rng.normal(mu, 1, n))]

    def pool(x):
        return 0.5 * stats.norm.pdf(x) + 0.5 * stats.norm.pdf(x, mu)

    exact = max(integrate.quad(lambda x: pool(x) * np.log(pool(x) / stats.norm.pdf(x, m)), -12, 12 + mu)[0]
                for m in (0.0, mu))
    est = kl_radius(envs, ["X0"], bins=40)
    assert est == pytest.approx(exact, rel=0.10)


def test_factored_radii_are_non_negative():
    envs, _ = normalize_all(generate_synthetic(500, seed=0))
    cov, rew = factored_radii(envs, ["X0", "X1"])
    assert cov >= 0 and rew >= 0


def test_radius_needs_two_environments():
    with pytest.raises(DROError):
        kl_radius([_gauss_env(np.zeros(3))])


def test_cell_worst_rewards_and_cache(tmp_path):
    envs, _ = normalize_all(generate_synthetic(600, seed=0))
    ds = envs[0]
    ds.X[:, :2] = np.round(ds.X[:, :2] * 5) / 5      # coarse contexts so cells repeat
    cache = CellCache()
    r1, skipped = cell_worst_rewards(ds, ["X0", "X1"], 0.3, cache=cache)
    assert skipped == 0
    first_misses = cache.misses
    r2, _ = cell_worst_rewards(ds, ["X0", "X1"], 0.3, cache=cache)
    assert np.array_equal(r1, r2)
    assert cache.misses == first_misses and cache.hits >= ds.n
    assert cache.hit_rate() == pytest.approx(0.5)   # one pass of misses, one of hits
    # every cell's worst case is bounded by its own rewards
    keys = {}
    for i, (a, x0, x1) in enumerate(zip(ds.actions, ds.X[:, 0], ds.X[:, 1])):
        keys.setdefault((a, x0, x1), []).append(i)
    for rows in keys.values():
        y = ds.rewards[rows]
        assert y.min() - 1e-9 <= r1[rows[0]] <= y.mean() + 1e-9
    cache.save(tmp_path / "c.pkl")
    assert CellCache.load(tmp_path / "c.pkl").values == cache.values


def test_cache_hit_rate_on_second_pass():
    envs, _ = normalize_all(generate_synthetic(1000, seed=2))
    cache = CellCache()
    for d in envs:
        cell_worst_rewards(d, ["X0", "X1"], 0.2, cache=cache)
    cache.hits = cache.misses = 0
    for d in envs:
        cell_worst_rewards(d, ["X0", "X1"], 0.2, cache=cache)
    assert cache.hit_rate() > 0.9


def test_fdro_zero_radii_equal_ipw():
    envs, _ = normalize_all(generate_synthetic(300, seed=1))
    ds = envs[0]
    pol = Policy.uniform(3, ("X0", "X1"))
    res = fdro_evaluate(ds, pol, delta_cov=0.0, delta_rew=0.0)
    assert res.value == pytest.approx(ipw_value(ds, pol), abs=1e-12)


def _dominant_toy(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, n)
    a = rng.integers(0, 2, n)
    y = np.where(a == 1, 0.7 + 0.2 * x, 0.3 * x) + rng.uniform(0, 0.05, n)
    return _ds(x, a, y, 2, prop=np.full(n, 0.5)), x


def test_dro_learning_picks_dominant_action():
    ds, x = _dominant_toy()
    pol, res = dro_learn(ds, ["X0"], delta=0.3, cfg=KLConfig(epochs=30))
    assert np.mean(pol.greedy(x[:, None]) == 1) >= 0.99
    assert res.status in ("optimal", "boundary", "degraded")


def test_fdro_learning_picks_dominant_action():
    ds, x = _dominant_toy(seed=1)
    pol, _ = fdro_learn(ds, ["X0"], delta_cov=0.2, delta_rew=0.2, cfg=KLConfig(epochs=30))
    assert np.mean(pol.greedy(x[:, None]) == 1) >= 0.99


def test_zero_radius_learning_matches_nonrobust():
    ds, x = _dominant_toy(seed=2)
    robust, _ = dro_learn(ds, ["X0"], delta=0.0, cfg=KLConfig(epochs=30))
    uniform = Policy.uniform(2, ("X0",))
    assert ipw_value(ds, robust) > ipw_value(ds, uniform)
    assert ipw_value(ds, robust) == pytest.approx(ds.rewards[ds.actions == 1].mean(), abs=0.02)


def test_config_validation():
    with pytest.raises(ValueError):
        KLConfig(delta=-1.0)
    with pytest.raises(ValueError):
        KLConfig(restart_limit=0)
