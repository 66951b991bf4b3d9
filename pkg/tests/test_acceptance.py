"""Acceptance gate for the dosing engine.

One test per shipped guarantee, each asserting its stated tolerance and
wall-clock budget, so ``pytest tests/test_acceptance.py -v`` prints one
pass/fail line per guarantee.

The final test audits the duality gap of every estimation solve recorded
while the earlier, estimation-heavy tests ran, so this module is meant to
run whole and in definition order (pytest's default).  A filtered run
that skips the earlier tests leaves that audit without data and it fails
loudly rather than vacuously passing.

The closed-loop cohort comparison dominates the runtime: it runs once and
is shared by the two tests that read it.  Expect roughly two hours total
on a single core.
"""

import itertools
import math
import time

import numpy as np
import pytest

from hepdose import lp_kernel
from hepdose.dosing import LossSpec, PolicySpec, hourly_loss, plan_ptc_sgm
from hepdose.dynamics import (DEFAULT_DOMAINS, PatientParams, mm_exact,
                              roll_x, sample_observation, simulate, step)
from hepdose.estimation import (ObservationSeries, benders_solve,
                                check_assignment, decode_assignment,
                                encode_trajectory, mle_grid, scenario_table)
from hepdose.evaluation import (binary_auc, confusion, dynamic_label_series,
                                persistence_label_series, pool_one_vs_all,
                                roc)
from hepdose.simulator import (B_BAR_5, SCENARIO_ALPHAS, SimulationConfig,
                               ptc_scenario_policy, run_cohort, synth_cohort)

from oracles import lp_vertex_solve, ode_mm

GAP_TOL = 1e-7                    # certified primal-dual agreement
EPS_SEARCH = 1e-3                 # cut-search convergence tolerance
HORIZONS = (48, 120, 240)         # record lengths for the consistency sweeps
SCALE = 2.0                       # reading noise scale used by the sweeps
K16 = tuple(float(v) for v in
            np.geomspace(DEFAULT_DOMAINS.k_range[0],
                         DEFAULT_DOMAINS.k_range[1], 16))

# Synthetic patient for the consistency and planning sweeps.  The
# elimination capacity is chosen so therapeutic-scale excitation crosses
# the kinetic breakpoint (x = k / (1 - alpha) = 10) in both directions:
# below it the decay is geometric (identifying retention), above it the
# run-off is linear (identifying capacity).  Retention and sensitivity sit
# on the scenario grid, so one scenario is exactly true.
SWEEP_TRUTH = PatientParams(alpha=0.5, k=5.0, b=B_BAR_5[3], yb=30.0)
U_THER = SWEEP_TRUTH.yb * (1 - SWEEP_TRUTH.alpha) / (7.5 * SWEEP_TRUTH.b)
PLAN_MESH = tuple(float(v) for v in np.linspace(0.0, 2.5 * U_THER, 8))
PLAN_LOSS = LossSpec("median_deviation")
PLAN_HORIZON = 4                  # small enough for exhaustive enumeration


class GapLedger:
    """Bounded duality-gap sink: keeps the count and the worst gap only.

    The audited runs below solve millions of small programs; storing one
    float per solve would cost hundreds of megabytes for no extra
    information.
    """

    def __init__(self):
        self.count = 0
        self.max = 0.0

    def append(self, gap):
        self.count += 1
        if gap > self.max:
            self.max = float(gap)


# One ledger per audited run, read by the certificate test at the end.
GAPS = {
    "grid_match": GapLedger(),
    "concentration": GapLedger(),
    "planning": GapLedger(),
    "cohort": GapLedger(),
}


# ---------------------------------------------------------------------------
# Record generators


def _excitation_doses(rng, T, hi, block=6):
    """Piecewise-constant infusion alternating high and near-zero blocks."""
    doses = np.zeros(T)
    t, high = 0, True
    while t < T:
        level = (rng.uniform(0.6 * hi, hi) if high
                 else rng.uniform(0.0, 0.25 * hi))
        doses[t:t + block] = level
        t += block
        high = not high
    return doses


def _sweep_record(seed, T=240, every=2):
    """One noisy record of SWEEP_TRUTH under mixed-regime excitation."""
    rng = np.random.default_rng(seed)
    doses = _excitation_doses(rng, T, hi=7.0)
    traj = simulate(SWEEP_TRUTH, doses)
    assert not traj.clamped.any(), f"seed {seed}: trajectory left the box"
    bp = SWEEP_TRUTH.k / (1.0 - SWEEP_TRUTH.alpha)
    assert (traj.x > bp + 0.5).any() and \
        ((traj.x > 0.05) & (traj.x < bp - 0.5)).any(), \
        f"seed {seed}: record does not visit both kinetic regimes"
    times = np.arange(every, T + 1, every)
    values = np.maximum(
        [sample_observation(float(v), SCALE, rng) for v in traj.y[times]],
        0.0)
    obs = ObservationSeries(doses=doses, times=times, values=values,
                            noise_scale=SCALE).validate()
    return obs, traj


def _on_grid_record(rng):
    """Random record whose truth lies on the (alpha, b, k) candidate grid."""
    for _ in range(100):
        alpha = float(rng.choice(DEFAULT_DOMAINS.alpha_set))
        b = float(rng.choice(B_BAR_5))
        k = float(rng.choice(K16[4:9]))      # capacities ~1.8 .. 32 IU/h
        yb = float(rng.uniform(25.0, 40.0))
        params = PatientParams(alpha=alpha, k=k, b=b, yb=yb)
        T = int(rng.integers(60, 121))
        hi = 2.0 * yb * (1.0 - alpha) / (7.5 * b)
        doses = _excitation_doses(rng, T, hi=hi)
        traj = simulate(params, doses)
        if traj.clamped.any():
            continue
        times = np.arange(2, T + 1, 2)
        values = np.maximum(
            [sample_observation(float(v), SCALE, rng)
             for v in traj.y[times]], 0.0)
        obs = ObservationSeries(doses=doses, times=times, values=values,
                                noise_scale=SCALE).validate()
        return obs, params
    raise AssertionError("could not draw an unclamped on-grid record")


def _true_scenario_index(table):
    return next(s.index for s in table.scenarios
                if s.alpha == SWEEP_TRUTH.alpha and s.b == SWEEP_TRUTH.b)


# ---------------------------------------------------------------------------
# 1. Piecewise elimination against the saturating-kinetics reference


def test_01_matched_piecewise_and_saturating_decay_agree():
    """20 matched decay pairs: same start, both monotone to zero, largest
    gap at the breakpoint crossing, closed form within 1e-8 of an ODE
    oracle, all inside 10 s."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(20260819)
    for _ in range(20):
        alpha = rng.uniform(0.35, 0.75)
        k = rng.uniform(3.0, 120.0)
        x0 = rng.uniform(2.0, 10.0) * k / (1.0 - alpha)
        # Matched saturating curve: equal zero-order rate at saturation
        # (vmax = k) and equal first-order hourly retention in the linear
        # regime (exp(-vmax/km) = alpha).
        vmax, km = k, k / (-math.log(alpha))
        bp = k / (1.0 - alpha)
        T = int(math.ceil((x0 - bp) / k)) + 80
        times = np.arange(T + 1, dtype=float)

        x_pw = roll_x(alpha, k, np.zeros(T), x0=x0)
        x_mm = mm_exact(x0, vmax, km, times)

        # exact agreement at t = 0
        assert x_pw[0] == x0
        assert abs(x_mm[0] - x0) <= 1e-9

        # both monotone decreasing to zero
        assert np.all(np.diff(x_pw) < 0.0)
        assert np.all(np.diff(x_mm) < 0.0)
        assert x_pw[-1] <= 1e-6 * x0 and x_mm[-1] <= 1e-6 * x0

        # closed form matches the fine-step ODE oracle
        assert np.max(np.abs(x_mm - ode_mm(x0, vmax, km, times))) <= 1e-8

        # the sup-norm gap sits at the regime hand-off
        t_star = int(np.argmax(np.abs(x_pw - x_mm)))
        t_cross = int(np.argmax(x_pw <= bp))
        assert abs(t_star - t_cross) <= 2, (t_star, t_cross)
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0, f"kinetics comparison took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2a. Solver against vertex enumeration


def test_02a_simplex_matches_vertex_enumeration_on_random_boxes():
    """100 random boxed programs (at most 8 variables) match exhaustive
    vertex enumeration to 1e-8, inside 30 s."""
    t0 = time.perf_counter()
    for i in range(100):
        rng = np.random.default_rng(31000 + i)
        n = int(rng.integers(2, 9))
        m = int(rng.integers(1, n))
        A = rng.normal(size=(m, n))
        rhs = A @ rng.uniform(0.5, 1.5, n)      # interior point => feasible
        lower = np.zeros(n)
        upper = rng.uniform(2.0, 4.0, n)
        c = rng.normal(size=n)
        sense = "min" if rng.random() < 0.5 else "max"
        problem = lp_kernel.LpProblem(c=c, A=A, rhs=rhs, lower=lower,
                                      upper=upper, sense=sense)
        sol = lp_kernel.solve(problem)
        status, _, val = lp_vertex_solve(c, A, rhs, lower, upper, sense=sense)
        assert sol.status == status == "optimal", (i, sol.status, status)
        assert abs(sol.objective - val) <= 1e-8, (i, sol.objective, val)
        assert lp_kernel.duality_gap(problem, sol) <= GAP_TOL
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0, f"oracle sweep took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 3. Cut-based search against the exhaustive grid


def test_03_cut_search_matches_exhaustive_grid_per_retention():
    """30 on-grid records: per retention value, the cut-based search lands
    within its convergence tolerance of the exhaustive grid optimum, with
    monotone bound traces, under 60 s per record."""
    rng = np.random.default_rng(33000)
    with lp_kernel.gap_audit(GAPS["grid_match"]):
        for _ in range(30):
            obs, _truth = _on_grid_record(rng)
            rec_start = time.perf_counter()
            for alpha in DEFAULT_DOMAINS.alpha_set:
                r = benders_solve(obs, alpha, EPS_SEARCH, K16, B_BAR_5)
                g = mle_grid(obs, ((alpha,), B_BAR_5, K16), refine=False)
                assert r.value <= g.log_likelihood + 1e-9
                assert r.value >= g.log_likelihood - EPS_SEARCH - 1e-9
                d = r.diagnostics
                assert all(x <= y + 1e-12 for x, y in
                           zip(d.lower_trace, d.lower_trace[1:]))
                assert all(x >= y - 1e-12 for x, y in
                           zip(d.upper_trace, d.upper_trace[1:]))
                assert d.upper_trace[-1] - d.lower_trace[-1] \
                    <= EPS_SEARCH + 1e-12
            rec_elapsed = time.perf_counter() - rec_start
            assert rec_elapsed < 60.0, f"record took {rec_elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 4. Posterior concentration on the true scenario


def test_04_posterior_concentrates_on_truth_as_records_grow():
    """30 replicates of excitation records: the true scenario's median
    weight exceeds 0.9 by 240 h and never falls as records lengthen, and
    the point estimate's relative errors never rise.  Under 10 min."""
    t0 = time.perf_counter()
    weights = {T: [] for T in HORIZONS}
    b_errs = {T: [] for T in HORIZONS}
    k_errs = {T: [] for T in HORIZONS}
    with lp_kernel.gap_audit(GAPS["concentration"]):
        for r in range(30):
            full, _ = _sweep_record(seed=1000 + r)
            for T in HORIZONS:
                table = scenario_table(full.truncated(T),
                                       SCENARIO_ALPHAS, B_BAR_5)
                weights[T].append(
                    table.scenarios[_true_scenario_index(table)].weight)
                m = table.map_scenario
                b_errs[T].append(abs(m.b - SWEEP_TRUTH.b) / SWEEP_TRUTH.b)
                k_errs[T].append(abs(m.k - SWEEP_TRUTH.k) / SWEEP_TRUTH.k)

    med_w = [float(np.median(weights[T])) for T in HORIZONS]
    med_b = [float(np.median(b_errs[T])) for T in HORIZONS]
    med_k = [float(np.median(k_errs[T])) for T in HORIZONS]
    assert med_w[-1] > 0.9, f"median true-scenario weight {med_w[-1]:.3f}"
    assert med_w[0] <= med_w[1] <= med_w[2], med_w
    assert med_b[0] >= med_b[1] >= med_b[2], med_b
    assert med_k[0] >= med_k[1] >= med_k[2], med_k
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0, f"concentration sweep took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 5. Scenario-weighted plans against the true-parameter oracle


def _true_tail_loss(state, candidate):
    """Loss of a candidate block under the true parameters, stepped from
    the patient's actual end-of-record state."""
    total, s = 0.0, state
    for u in candidate:
        s, _ = step(s, float(u), SWEEP_TRUTH)
        total += float(hourly_loss(s.y, SWEEP_TRUTH.yb, PLAN_LOSS))
    return total


def test_05_scenario_plans_approach_true_parameter_oracle():
    """30 replicates: the true-parameter loss gap between the
    scenario-weighted plan and the exhaustive true-parameter oracle never
    rises as records lengthen, and by 240 h the median gap is at most 10%
    of the oracle's own loss scale.  Under 15 min."""
    t0 = time.perf_counter()
    gaps = {T: [] for T in HORIZONS}
    oracle_losses = {T: [] for T in HORIZONS}
    with lp_kernel.gap_audit(GAPS["planning"]):
        for r in range(30):
            full, traj = _sweep_record(seed=2000 + r)
            for T in HORIZONS:
                obs_t = full.truncated(T)
                table = scenario_table(obs_t, SCENARIO_ALPHAS, B_BAR_5)
                plan = plan_ptc_sgm(table, obs_t.doses, PLAN_LOSS,
                                    n=PLAN_HORIZON, dose_mesh=PLAN_MESH,
                                    mode="exact_small")
                state = traj.states[T]
                best = min(_true_tail_loss(state, seq) for seq in
                           itertools.product(PLAN_MESH, repeat=PLAN_HORIZON))
                gap = _true_tail_loss(state, plan.doses) - best
                assert gap >= -1e-9, f"plan beat the exhaustive oracle: {gap}"
                gaps[T].append(gap)
                oracle_losses[T].append(best)

    med_gap = [float(np.median(gaps[T])) for T in HORIZONS]
    # Loss scale: the oracle's own median loss on the longest records --
    # the natural denominator for "within 10% of optimal".
    scale = float(np.median(oracle_losses[240]))
    assert med_gap[0] >= med_gap[1] >= med_gap[2], med_gap
    assert med_gap[-1] <= 0.1 * scale, (med_gap[-1], scale)
    elapsed = time.perf_counter() - t0
    assert elapsed < 900.0, f"planning sweep took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 6 + 7. Closed-loop cohort comparison (one shared run)


SG_MEDIAN = "ptc_sg10[median_deviation]"
SG_INDICATOR = "ptc_sg10[indicator]"
SG_BAND = "ptc_sg10[band_deviation]"


@pytest.fixture(scope="module")
def cohort_outcome():
    """Default 25-patient cohort, 10 replicates, five policy arms; runs
    once and is read by the two ordering tests below."""
    arms = [
        ptc_scenario_policy(10, "median_deviation"),
        ptc_scenario_policy(10, "indicator"),
        ptc_scenario_policy(10, "band_deviation"),
        PolicySpec(kind="naive"),
        PolicySpec(kind="weight_based"),
    ]
    t0 = time.perf_counter()
    with lp_kernel.gap_audit(GAPS["cohort"]):
        report = run_cohort(synth_cohort(25, seed=0), arms,
                            SimulationConfig())
    return {"report": report, "elapsed": time.perf_counter() - t0}


def test_06_scenario_policy_beats_protocol_baselines_in_band_time(
        cohort_outcome):
    """Cohort ordering: the scenario-weighted policy leads the fixed-step
    adjuster by >= 5 points of mean time in control and the adjuster leads
    the weight-based protocol by >= 5 points; the scenario policy also
    deviates less when out of band; every planning cycle stays under 60 s;
    whole run under 2 h."""
    report = cohort_outcome["report"]
    agg = report.aggregates
    tic = {name: agg[name]["time_in_control"] for name in report.policy_names}
    assert tic[SG_MEDIAN] >= tic["naive"] + 0.05, \
        f"scenario {tic[SG_MEDIAN]:.3f} vs fixed-step {tic['naive']:.3f}"
    assert tic["naive"] >= tic["weight_based"] + 0.05, \
        f"fixed-step {tic['naive']:.3f} vs weight-based {tic['weight_based']:.3f}"
    assert agg[SG_MEDIAN]["mean_deviation"] < agg["naive"]["mean_deviation"], \
        (agg[SG_MEDIAN]["mean_deviation"], agg["naive"]["mean_deviation"])
    for name in report.policy_names:
        assert agg[name]["max_cycle_time"] < 60.0, \
            (name, agg[name]["max_cycle_time"])
    assert cohort_outcome["elapsed"] < 7200.0, \
        f"cohort run took {cohort_outcome['elapsed']:.0f}s"


def test_07_median_deviation_loss_controls_best_among_losses(cohort_outcome):
    """Among the three planning losses, steering at the band median yields
    the highest mean time in control."""
    agg = cohort_outcome["report"].aggregates
    tic = {name: agg[name]["time_in_control"]
           for name in (SG_MEDIAN, SG_INDICATOR, SG_BAND)}
    assert tic[SG_MEDIAN] >= tic[SG_INDICATOR], tic
    assert tic[SG_MEDIAN] >= tic[SG_BAND], tic


# ---------------------------------------------------------------------------
# 8. Label forecasting against the carry-forward baseline


def test_08_model_forecasts_beat_carry_forward_labels():
    """Pooled micro-AUC of the model's label forecasts beats the
    carry-forward baseline by >= 0.05 on a swing-dosed cohort; the pooled
    curve equals the binary reduction it is defined through, exactly; the
    confusion matrix is a proper distribution over outcomes."""
    cohort = synth_cohort(25, seed=8, warmstart_hours=200,
                          dose_swing=(0.2, 2.4))
    dyn, per = [], []
    for p in cohort:
        y_true = simulate(p.params, p.warmstart.doses).y
        dyn.append(dynamic_label_series(p.warmstart, y_true, p.params.yb))
        per.append(persistence_label_series(p.warmstart, y_true,
                                            p.params.yb))
    auc_dyn = roc(dyn, "micro").auc
    auc_per = roc(per, "micro").auc
    assert auc_dyn >= auc_per + 0.05, (auc_dyn, auc_per)

    # two-path equivalence: report AUC == one-vs-all binary reduction
    assert binary_auc(*pool_one_vs_all(dyn)) == auc_dyn

    summary = confusion(dyn)
    assert math.fsum(np.asarray(summary["matrix"]).flat) == \
        pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# 9. Exact mixed-integer encoding round-trips


def _draw_mixed_regime_patient(rng, T=36):
    """Unclamped trajectory visiting both kinetic regimes with margin, so
    every branch indicator is uniquely determined and nontrivial."""
    for _ in range(200):
        alphas = DEFAULT_DOMAINS.alpha_set
        params = PatientParams(
            alpha=float(alphas[rng.integers(len(alphas))]),
            k=float(rng.uniform(2.0, 60.0)),
            b=float(np.exp(rng.uniform(np.log(0.1), np.log(2.0)))),
            yb=float(rng.uniform(25.0, 40.0)))
        u_ther = params.yb * (1.0 - params.alpha) / (7.5 * params.b)
        doses = _excitation_doses(rng, T, hi=2.5 * u_ther)
        traj = simulate(params, doses)
        if traj.clamped.any():
            continue
        bp = params.breakpoint
        x = traj.x[:T]
        if np.any(x > bp + 0.5) and np.any(x < bp - 0.5):
            return params, doses, traj
    raise AssertionError("could not draw a mixed-regime unclamped trajectory")


def test_09_trajectory_encoding_round_trips_exactly():
    """200 randomized round-trips through the branch-indicator encoding:
    every constraint row checks out (tight exactly where the indicators
    claim, never relying on relaxation slack), and decoding returns the
    original parameters and path exactly."""
    rng = np.random.default_rng(9000)
    for _ in range(200):
        params, doses, traj = _draw_mixed_regime_patient(rng)
        assign = encode_trajectory(params, doses, traj)
        report = check_assignment(assign, doses)
        assert report.ok and not report.violations, report.violations
        alpha, k, b, x = decode_assignment(assign)
        assert alpha == params.alpha
        assert k == pytest.approx(params.k, rel=1e-12)
        assert b == params.b
        np.testing.assert_allclose(x, traj.x, atol=1e-9)


# ---------------------------------------------------------------------------
# 2b. Duality certificates across every audited estimation solve
# (defined last so the ledgers above are full when it runs)


def test_02b_estimation_solves_carry_tight_duality_certificates():
    """Every estimation solve recorded by the sweeps above carried a
    duality gap of at most 1e-7."""
    for key, ledger in GAPS.items():
        assert ledger.count > 0, \
            f"no audited solves recorded for {key!r}; run this module whole"
        assert ledger.max <= GAP_TOL, \
            f"{key}: worst duality gap {ledger.max:.3e} over {ledger.count} solves"
