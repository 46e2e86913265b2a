import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semdro.data import BanditDataset, generate_synthetic, normalize_all
from semdro.graph import load_fixture, parse_graph
from semdro.semfit import (FitError, NodeEquation, StructuralModel, aggregate_bounds,
                           filter_binary_roots, fit_environment_model, fit_node_equation, fit_spec,
                           simulate)

SYN = load_fixture("synthetic_well")


def _ds(cols, kinds, X, y, actions=None, n_actions=1, env=""):
    X = np.asarray(X, float)
    a = np.zeros(len(X), int) if actions is None else np.asarray(actions)
    return BanditDataset(tuple(cols), dict(zip(cols, kinds)), X, a, y, n_actions, env=env)


def test_noiseless_branch_recovers_coefficients():
    envs = generate_synthetic(400, seed=0, x2_noise=0.0)
    m = fit_environment_model(envs[0], SYN, {"X2"})
    eq = m.equation("X2", 0)
    assert eq.intercept == pytest.approx(1.0, abs=1e-6)
    assert eq.coefs["X0"] == pytest.approx(3.0, abs=1e-6)
    assert eq.coefs["X1"] == pytest.approx(5.0, abs=1e-6)


def test_constant_root():
    ds = _ds(["X"], ["cont"], np.full((10, 1), 0.5), np.zeros(10))
    eq = fit_node_equation(ds, "X", [])
    assert eq.intercept == pytest.approx(0.5)
    assert eq.coefs == {}
    assert np.allclose(eq.residuals, 0.0)


def test_ols_recovery_within_standard_errors():
    rng = np.random.default_rng(0)
    n = 5000
    Z = rng.normal(size=(n, 2))
    y = 1.0 + 2.0 * Z[:, 0] - 0.5 * Z[:, 1] + rng.normal(0, 0.3, n)
    ds = _ds(["Z0", "Z1"], ["cont", "cont"], Z, y)
    eq = fit_node_equation(ds, "Y", ["Z0", "Z1"])
    X = np.column_stack([np.ones(n), Z])
    cov = eq.noise_std ** 2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov))
    est = [eq.intercept, eq.coefs["Z0"], eq.coefs["Z1"]]
    assert np.all(np.abs(np.array(est) - [1.0, 2.0, -0.5]) < 3 * se)
    assert abs(eq.residuals.mean()) < 1e-8
    assert eq.noise_std >= 0


def test_shifted_set_shapes_the_model():
    envs = generate_synthetic(200, seed=1)
    m = fit_environment_model(envs[0], SYN, {"X0", "X2", "Y"})
    assert sorted(m.equations) == sorted([("X0", None), ("X2", 0), ("X2", 1), ("X2", 2), ("Y", None)],
                                         key=str)
    assert fit_environment_model(envs[0], SYN, set()).equations == {}
    for (node, _), eq in m.equations.items():
        expected = sorted(p for p in SYN.parent_list(node) if p != SYN.action)
        assert sorted(eq.coefs) == expected


def test_binary_node_gets_logit():
    g = parse_graph("node A action\nnode Z cont\nnode B bin\nnode Y outcome\n"
                    "edge Z -> B\nedge B -> Y\nintervene A => Y\n")
    rng = np.random.default_rng(2)
    n = 4000
    z = rng.normal(size=n)
    b = (rng.random(n) < 1 / (1 + np.exp(-(0.5 + 1.5 * z)))).astype(float)
    ds = _ds(["Z", "B"], ["cont", "bin"], np.column_stack([z, b]), b)
    eq = fit_environment_model(ds, g, {"B"}).equation("B")
    assert eq.form == "logit" and eq.noise_std == 0.0
    assert eq.intercept == pytest.approx(0.5, abs=0.15)
    assert eq.coefs["Z"] == pytest.approx(1.5, abs=0.2)


def test_rank_deficient_design():
    x = np.arange(10.0)
    ds = _ds(["P", "Q"], ["cont", "cont"], np.column_stack([x, 2 * x]), x)
    with pytest.raises(FitError, match="collinear"):
        fit_node_equation(ds, "Y", ["P", "Q"])
    eq = fit_node_equation(ds, "Y", ["P", "Q"], strict=False)
    assert abs(eq.residuals.mean()) < 1e-10


def _envs_with_slope(slopes, seed=0):
    out = []
    g = parse_graph("node A action\nnode Z cont\nnode Y outcome\nedge Z -> Y\nintervene A => Y\n")
    for k, s in enumerate(slopes):
        z = np.linspace(0, 1, 50)
        out.append(_ds(["Z"], ["cont"], z[:, None], 0.3 + s * z, env=f"e{k}"))
    return g, out


def test_interval_from_two_environments():
    g, envs = _envs_with_slope([0.05, 0.10])
    spec = fit_spec(envs, g, {"Y"})
    assert spec.bounds[("Y", None)].coefs["Z"] == pytest.approx((0.05, 0.10))


def test_identical_environments_degenerate():
    g, envs = _envs_with_slope([0.2, 0.2])
    spec = fit_spec(envs, g, {"Y"})
    assert spec.is_degenerate(1e-10)


def test_synthetic_interval_contains_truth_range():
    envs = generate_synthetic(3000, seed=0)
    spec = fit_spec(envs, SYN, {"X0", "X2", "Y"})
    lo, hi = spec.bounds[("X2", 0)].coefs["X1"]
    assert lo <= 2.0 + 0.05 and hi >= 10.0 - 0.05
    normed, rec = normalize_all(envs)
    nspec = fit_spec(normed, SYN, {"X0", "X2", "Y"})
    scale = rec.scale["X1"] / rec.scale["X2"]
    nlo, nhi = nspec.bounds[("X2", 0)].coefs["X1"]
    assert nlo <= 2.0 * scale * 1.01 and nhi >= 10.0 * scale * 0.99


def test_bounds_are_ordered_and_contain_fits():
    envs, _ = normalize_all(generate_synthetic(500, seed=3))
    models = [fit_environment_model(d, SYN, {"X0", "X2", "Y"}) for d in envs]
    spec = aggregate_bounds(models, envs)
    for key, bb in spec.bounds.items():
        for lo, hi in bb.intervals().values():
            assert lo <= hi
        assert bb.sigma[0] >= 0
        for m in models:
            eq = m.equations[key]
            assert bb.intercept[0] <= eq.intercept <= bb.intercept[1]
            for z, c in eq.coefs.items():
                assert bb.coefs[z][0] <= c <= bb.coefs[z][1]
    for lo, hi in spec.value_bounds.values():
        assert 0.0 <= lo <= hi


def test_predictions_inside_value_bounds():
    envs, _ = normalize_all(generate_synthetic(500, seed=4))
    spec = fit_spec(envs, SYN, {"X0", "X2", "Y"})
    for d in envs:
        vals = simulate(spec.nominal, d, d.actions)
        for node in ("X2", "Y"):
            lo, hi = spec.value_bounds[node]
            inside = (vals[node] >= lo - 1e-9) & (vals[node] <= hi + 1e-9)
            assert inside.mean() >= 0.99


def test_zero_noise_arithmetic():
    g = parse_graph("node A action\nnode X2 cont\nnode Y outcome\nedge X2 -> Y\nintervene A => Y\n")
    m = StructuralModel(g, {("Y", None): NodeEquation("Y", 0.5, {"X2": 0.2})})
    out = simulate(m, {"X2": np.array([1.0])}, [0])
    assert out["Y"][0] == pytest.approx(0.7)


def test_environment_one_simulation_matches_formulas():
    g = SYN
    eqs = {("X2", a): NodeEquation("X2", 1.0, {"X0": c0, "X1": c1}, branch=a)
           for a, (c0, c1) in enumerate(((3, 5), (5, 4), (5, 5)))}
    eqs[("Y", None)] = NodeEquation("Y", 0.05, {"X2": 5.0, "X1": 0.1, "X0": 0.2})
    m = StructuralModel(g, eqs, n_actions=3)
    ctx = {"X0": np.array([5.0, 4.0]), "X1": np.array([5.0, 6.0])}
    out = simulate(m, ctx, [0, 0])
    x2 = 1 + 3 * ctx["X0"] + 5 * ctx["X1"]
    assert np.allclose(out["X2"], x2, atol=1e-6)
    assert np.allclose(out["Y"], 5 * x2 + 0.1 * ctx["X1"] + 0.2 * ctx["X0"] + 0.05, atol=1e-6)


def test_resampled_mean_matches_zero_noise():
    envs = generate_synthetic(1000, seed=5)
    spec = fit_spec(envs, SYN, {"X0", "X2", "Y"})
    n = 10_000
    ctx = {"X0": np.full(n, 5.0), "X1": np.full(n, 5.0)}
    a = np.zeros(n, int)
    zero = simulate(spec.nominal, ctx, a)["Y"]
    draw = simulate(spec.nominal, ctx, a, "resample", np.random.default_rng(0))["Y"]
    se = draw.std(ddof=1) / np.sqrt(n)
    assert abs(draw.mean() - zero.mean()) < 3 * se + 1e-12


def test_simulate_rejects_missing_context():
    m = StructuralModel(SYN, {("Y", None): NodeEquation("Y", 0.0, {"X2": 1.0})})
    with pytest.raises(KeyError):
        simulate(m, {"X0": np.zeros(1)}, [0])
    with pytest.raises(ValueError):
        simulate(m, {"X2": np.zeros(1)}, [0], noise_mode="loud")


def test_binary_root_filter():
    g = parse_graph("node A action\nnode B bin\nnode C bin\nnode Y outcome\n"
                    "edge B -> Y\nedge C -> Y\nintervene A => Y\n")
    rng = np.random.default_rng(0)
    envs = []
    for k, rate in enumerate((0.2, 0.6)):
        b = (np.arange(1000) % 2).astype(float)
        c = (rng.random(1000) < rate).astype(float)
        envs.append(_ds(["B", "C"], ["bin", "bin"], np.column_stack([b, c]), b, env=f"e{k}"))
    kept, dropped = filter_binary_roots({"B", "C", "Y"}, envs, g)
    assert dropped == {"B"} and kept == {"C", "Y"}


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 10_000))
def test_simulate_then_fit_closed_loop(b0, b1, seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(size=400)
    g = parse_graph("node A action\nnode Z cont\nnode Y outcome\nedge Z -> Y\nintervene A => Y\n")
    truth = StructuralModel(g, {("Y", None): NodeEquation("Y", b0, {"Z": b1},
                                                          residuals=rng.normal(0, 0.1, 400))})
    y = simulate(truth, {"Z": z}, np.zeros(400, int), "resample", rng)["Y"]
    eq = fit_node_equation(_ds(["Z"], ["cont"], z[:, None], y), "Y", ["Z"])
    assert abs(eq.intercept - b0) < 0.05 and abs(eq.coefs["Z"] - b1) < 0.05
