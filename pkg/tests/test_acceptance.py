"""Acceptance criteria, one block per criterion.

Each check reports through the ``record`` fixture; the terminal summary then
prints one PASS/FAIL line per criterion.  Checks known to fail are marked
``xfail(strict=True)`` and analyzed in the design notes.
"""

import time

import numpy as np
import pytest

from oracles import (avm_brute_force, enumerate_mip, model_arrays, random_avm_instance, random_lp,
                     random_mip, vertex_enumeration)
from semdro.baselines import kl_radius
from semdro.data import (SYNTHETIC_COLUMNS, SYNTHETIC_ENVS, SYNTHETIC_KINDS, BanditDataset,
                         generate_synthetic, load_voting, normalize_all, voting_fixture_path)
from semdro.experiments import ExperimentConfig, run_evaluation, run_learning
from semdro.graph import load_fixture
from semdro.mathprog import Model, solve_lp, solve_mip
from semdro.mathprog.encodings import encode_sigmoid, piecewise_sigmoid
from semdro.policy import Policy
from semdro.semcp import (SemcpConfig, build_evaluation_program, extract_worst_case_model,
                          learn_policy, solve_program, worst_case_evaluate)
from semdro.semfit import fit_spec
from semdro.shiftdetect import ShiftConfig, build_indicator, ci_test, detect_shifts

pytestmark = pytest.mark.acceptance

SYN = load_fixture("synthetic_well")
UNIFORM_WORST = 131.55          # uniform-policy value of the worst test environment, by enumeration


# ---------------------------------------------------------------------------
# 1. linearized program against brute force
# ---------------------------------------------------------------------------

def test_c1_linearization_exact(record):
    t0 = time.perf_counter()
    worst = 0.0
    for k in range(100):
        inst = random_avm_instance(np.random.default_rng(70_000 + k))
        prog = build_evaluation_program(inst.batch, inst.graph, inst.spec, eps=inst.aligned_eps(),
                                        weights=inst.weights)
        sol = solve_program(prog, SemcpConfig(tie_break=False))
        corner, interior, _ = avm_brute_force(inst, rng=np.random.default_rng(k))
        assert sol.optimal and interior >= corner - 1e-9
        worst = max(worst, abs(sol.objective - corner))
    secs = time.perf_counter() - t0
    ok = record(1, "100 instances", worst <= 1e-5 and secs < 120, f"max diff {worst:.1e}, {secs:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 2. piecewise sigmoid values
# ---------------------------------------------------------------------------

def _encoded(f_value):
    m = Model()
    f = m.add_var("f", -30, 30)
    v = m.add_var("v", 0, 1)
    m.add_constraint({f: 1}, "=", f_value)
    encode_sigmoid(m, f, v)
    m.set_objective({v: 1}, "min")
    return solve_mip(m)[v]


def test_c2_sigmoid_values(record):
    t0 = time.perf_counter()
    expect = {-2.0: 0.2, 3.0: 0.95, -3.0: 0.05}
    direct = {x: piecewise_sigmoid(x) for x in expect}
    encoded = {x: _encoded(x) for x in expect}
    secs = time.perf_counter() - t0
    ok = (all(direct[x] == y for x, y in expect.items())
          and all(abs(encoded[x] - y) < 1e-12 for x, y in expect.items()) and secs < 1.0)
    record(2, "values -2, 3, -3", ok, f"{secs * 1000:.0f}ms")
    assert ok


# ---------------------------------------------------------------------------
# 3. solvers against enumeration
# ---------------------------------------------------------------------------

def test_c3_solvers(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(31_337)
    lp_bad = 0
    for _ in range(100):
        m = random_lp(rng)
        sol = solve_lp(m)
        c, A, b, rel, lo, hi, sign = model_arrays(m)
        status, val = vertex_enumeration(c, A, b, rel, lo, hi)
        lp_bad += sol.status != status or (status == "optimal" and abs(sol.objective - sign * val) > 1e-6)
    mip_bad = 0
    for _ in range(50):
        m = random_mip(rng)
        sol = solve_mip(m)
        status, val = enumerate_mip(m)
        mip_bad += sol.status != status or (status == "optimal" and abs(sol.objective - val) > 1e-9)
    secs = time.perf_counter() - t0
    ok = record(3, "100 LPs, 50 MIPs", lp_bad == 0 and mip_bad == 0 and secs < 300,
                f"{lp_bad} LP and {mip_bad} MIP mismatches, {secs:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 4. shift detection
# ---------------------------------------------------------------------------

def test_c4_shift_detection(record):
    t0 = time.perf_counter()
    hit = excl = 0
    for seed in range(10):
        found = detect_shifts(generate_synthetic(1000, seed=seed), SYN, ShiftConfig(seed=seed)).shifted_set
        hit += {"X0", "X2", "Y"} <= found
        excl += "X1" not in found
    secs = time.perf_counter() - t0
    ok = record(4, "detection", hit >= 9 and excl >= 8, f"superset {hit}/10, X1 excluded {excl}/10, {secs:.0f}s")
    assert ok


def _null_pair(env, n, rep):
    out = []
    for half in range(2):
        X, a, y = env.sample(n, np.random.default_rng([rep, half, 41]))
        out.append(BanditDataset(SYNTHETIC_COLUMNS, dict(SYNTHETIC_KINDS), X, a, y, env.n_actions))
    return build_indicator(*out)


def test_c4_null_calibration(record):
    # X1 is the benchmark's unshifted variable; two draws of one training
    # environment make every replication a true null for its test
    t0 = time.perf_counter()
    env = SYNTHETIC_ENVS["train"][0]
    cfg = ShiftConfig(permutations=200)
    rejections = 0
    for rep in range(200):
        pooled, b = _null_pair(env, 1000, rep)
        rejections += ci_test(pooled.column("X1"), b, None, cfg, np.random.default_rng(rep)) < 0.05
    rate = rejections / 200
    secs = time.perf_counter() - t0
    ok = record(4, "null calibration", abs(rate - 0.05) <= 0.03, f"type-I {rate:.3f}, {secs:.0f}s")
    assert ok


# ---------------------------------------------------------------------------
# 5 and 10. evaluation accuracy and ordering
# ---------------------------------------------------------------------------

def _estimates(table):
    return {r["method"]: r for r in table.rows if r["status"] == "ok"}


@pytest.fixture(scope="module")
def well_eval():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(trials=1, rows_per_env=3000, methods=("semcp", "dro", "fdro", "nonrobust"))
    table = run_evaluation(cfg)
    return _estimates(table), time.perf_counter() - t0


def test_c5_semcp_accuracy(well_eval, record):
    est, secs = well_eval
    oracle = est["semcp"]["oracle_raw"]
    rel = abs(est["semcp"]["estimate_raw"] - oracle) / oracle
    # the sampled oracle agrees with the enumerated one
    assert oracle == pytest.approx(UNIFORM_WORST, rel=0.01)
    ok = record(5, "SEMCP within 10%", rel <= 0.10 and secs < 900,
                f"{est['semcp']['estimate_raw']:.2f} vs {oracle:.2f}, {secs:.0f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="KL-ball estimate stays positive on raw scale; see notes")
def test_c5_dro_negative(well_eval, record):
    est, _ = well_eval
    raw = est["dro"]["estimate_raw"]
    ok = record(5, "DRO unclipped < 0", raw < 0, f"DRO {raw:.2f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="factored KL estimate falls outside the DRO/SEMCP bracket; see notes")
def test_c5_fdro_between(well_eval, record):
    est, _ = well_eval
    d, f, s = (est[m]["estimate_raw"] for m in ("dro", "fdro", "semcp"))
    ok = record(5, "DRO < fDRO < SEMCP", min(d, s) < f < max(d, s), f"DRO {d:.2f}, fDRO {f:.2f}, SEMCP {s:.2f}")
    assert ok


@pytest.fixture(scope="module")
def mis_eval():
    cfg = ExperimentConfig(graph="synthetic_mis", trials=1, rows_per_env=3000, methods=("semcp", "dro"))
    return _estimates(run_evaluation(cfg))


def test_c10_misspecification_degrades(well_eval, mis_eval, record):
    well, _ = well_eval
    err_well = abs(well["semcp"]["error_raw"])
    err_mis = abs(mis_eval["semcp"]["error_raw"])
    ok = record(10, "mis error > well error", err_mis > err_well, f"{err_mis:.2f} vs {err_well:.2f}")
    assert ok


def test_c10_misspecified_beats_dro(mis_eval, record):
    err_mis = abs(mis_eval["semcp"]["error_raw"])
    err_dro = abs(mis_eval["dro"]["error_raw"])
    ok = record(10, "mis error < DRO error", err_mis < err_dro, f"{err_mis:.2f} vs {err_dro:.2f}")
    assert ok


# ---------------------------------------------------------------------------
# 6 and 7. policy invariance and learning
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def worst_case():
    envs, _ = normalize_all(generate_synthetic(3000, seed=0))
    shifted = detect_shifts(envs, SYN, ShiftConfig(max_rows=1000, permutations=200)).shifted_set
    spec = fit_spec(envs, SYN, shifted)
    res = worst_case_evaluate(envs, SYN, shifted, Policy.uniform(3, ("X0", "X1")), SemcpConfig(), spec)
    wc = extract_worst_case_model(res, spec.nominal)
    return envs, spec, res, wc


def test_c6_policy_invariance(worst_case, record):
    envs, spec, uniform, wc = worst_case
    # the invariance argument assumes positivity, so the learned argmax is softened
    learned = learn_policy(wc, envs[0]).soften(0.1)
    other = worst_case_evaluate(envs, SYN, spec.shifted, learned, SemcpConfig(), spec,
                                batch=uniform.program.batch)
    diffs = [abs(other.params[k][name] - v) for k in uniform.params for name, v in uniform.params[k].items()]
    worst = max(diffs)
    ok = record(6, "uniform vs learned", other.optimal and worst <= 1e-5,
                f"{len(diffs)} parameters, max diff {worst:.1e}")
    assert ok


def _analytic_argmax(wc, X0, X1):
    """Per-action outcome means written out from the worst-case equations."""
    y = wc.equation("Y")
    scores = []
    for a in range(3):
        e = wc.equation("X2", a)
        x2 = e.intercept + e.coefs["X0"] * X0 + e.coefs["X1"] * X1 + e.mu * e.sigma
        scores.append(y.intercept + y.coefs["X2"] * x2 + y.coefs["X1"] * X1 + y.coefs["X0"] * X0
                      + y.mu * y.sigma)
    return np.argmax(np.column_stack(scores), axis=1)


def test_c7_argmax_matches(worst_case, record):
    envs, _, _, wc = worst_case
    rng = np.random.default_rng(7)
    ctx = envs[int(rng.integers(3))]
    X = np.vstack([d.matrix(("X0", "X1")) for d in envs])[rng.choice(9000, 1000, replace=False)]
    pol = learn_policy(wc, ctx)
    match = float(np.mean(pol.greedy(X) == _analytic_argmax(wc, X[:, 0], X[:, 1])))
    ok = record(7, "argmax on 1000 contexts", match == 1.0, f"{match:.1%} match")
    assert ok


def test_c7_return_variance(record):
    cfg = ExperimentConfig(trials=10, rows_per_env=3000, methods=("semcp", "fdro"))
    table = run_learning(cfg)
    worst = {m: [r["return"] for r in table.rows if r["method"] == m and r["env"] == "worst"]
             for m in cfg.methods}
    assert all(len(v) == 10 for v in worst.values())
    v_sem, v_fdro = (float(np.var(worst[m], ddof=1)) for m in ("semcp", "fdro"))
    ok = record(7, "variance over 10 trials", v_sem < v_fdro, f"SEMCP {v_sem:.3g} vs fDRO {v_fdro:.3g}")
    assert ok


# ---------------------------------------------------------------------------
# 8. KL radius
# ---------------------------------------------------------------------------

def test_c8_kl_radius(record):
    envs, _ = normalize_all(generate_synthetic(3000, seed=0))
    delta = kl_radius(envs)
    ok = record(8, "radius in [1.7, 2.8]", 1.7 <= delta <= 2.8, f"delta {delta:.3f}")
    assert ok


# ---------------------------------------------------------------------------
# 9. voting loader on the bundled fixture
# ---------------------------------------------------------------------------

# (line in file, city, yob bin, sex, capped hh_size, action, reward), worked out by hand
FIXTURE_ROWS = [
    (1, 1, 0, 0, 4, 0, 0.0),
    (10, 1, 4, 0, 2, 1, -0.01),
    (19, 1, 3, 0, 4, 2, 0.98),
    (28, 2, 4, 0, 3, 3, 0.96),
    (37, 2, 0, 1, 2, 0, 0.0),
    (46, 3, 4, 1, 4, 2, 0.96),
    (55, 3, 4, 1, 4, 4, 0.94),
    (64, 4, 0, 1, 4, 0, 0.0),
    (73, 4, 4, 1, 1, 1, -0.04),
    (91, 14, 0, 0, 4, 0, 0.0),
    (100, 14, 4, 0, 2, 3, 0.93),
    (109, 5, 0, 0, 4, 0, 1.0),
    (118, 5, 0, 1, 1, 1, -0.06),
    (127, 6, 4, 0, 3, 2, -0.08),
    (136, 6, 0, 0, 4, 4, -0.10),
    (145, 13, 4, 1, 3, 0, 0.0),
    (154, 13, 2, 1, 2, 2, 0.91),
    (163, 15, 0, 0, 2, 2, -0.10),
    (172, 15, 4, 1, 4, 4, -0.12),
    (181, 8, 4, 1, 4, 2, 0.89),
]


def test_c9_voting_fixture_rows(record):
    path = voting_fixture_path()
    cities = [int(line.split(",")[8]) for line in path.read_text().splitlines()[1:]]
    envs = {d.meta["city"]: d for d in load_voting(path)}
    bad = 0
    for line, city, yob, sex, hh, act, rew in FIXTURE_ROWS:
        assert cities[line - 1] == city
        i = cities[:line - 1].count(city)          # position within its city
        d = envs[city]
        got = (d.X[i, d.index("yob")], d.X[i, d.index("sex")], d.X[i, d.index("hh_size")], d.actions[i])
        bad += got != (yob, sex, hh, act) or abs(d.rewards[i] - rew) > 1e-12
    ok = record(9, "20 fixture rows", bad == 0, f"{bad} mismatches")
    assert ok
