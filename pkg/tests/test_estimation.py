"""Estimation suite: profile likelihood, cut-based search, scenario weights,
pointwise posterior, and the mixed-integer encoding equivalence.

Truth parameters sit on the candidate grids used here, and dose patterns are
scaled so trajectories stay inside the state box (the recursion gain makes
steady aPTT = yb + 7.5*b*x at the default decay rates)."""

import math

import numpy as np
import pytest

from hepdose import lp_kernel
from hepdose.dynamics import (DEFAULT_DOMAINS, DEFAULT_GAMMAS, Domains,
                              PatientParams, roll_x, sample_observation,
                              simulate)
from hepdose.errors import (EstimationFailedError, InvalidParameterError,
                            NumericError)
from hepdose.estimation import (DEFAULT_B_GRID, EstimateConfig,
                                ObservationSeries, PriorSpec, UNIFORM_PRIOR,
                                benders_solve, big_m_bounds, bracket_mesh,
                                check_assignment, decode_assignment,
                                encode_trajectory, full_likelihood_lp,
                                log_likelihood_at, log_posterior_at,
                                mle_estimate, mle_grid, profile_loglik,
                                refined_mesh, roll_x_batch, scaled_posterior,
                                scenario_table)
from hepdose.estimation.likelihood import _forced_terms, _kernels

from oracles import l1_profile_bruteforce

K_MESH = np.geomspace(0.1, 5000.0, 32)
ALPHA_STAR = 0.630
K_STAR = float(K_MESH[13])            # ~9.34, breakpoint ~25 at alpha 0.630
B_STAR = float(DEFAULT_B_GRID[1])     # ~0.1468
YB_STAR = 30.0
SCALE = 2.0
TRUTH = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=B_STAR, yb=YB_STAR)
B_GRID_4 = tuple(DEFAULT_B_GRID[:4])
ALPHAS_3 = (0.500, 0.630, 0.707)


def excitation_doses(rng, T, hi=20.0, block=6):
    """Piecewise-constant dose pattern alternating high/low blocks."""
    doses = np.zeros(T)
    t = 0
    high = True
    while t < T:
        level = rng.uniform(0.6 * hi, hi) if high else rng.uniform(0.0, 0.25 * hi)
        doses[t:t + block] = level
        t += block
        high = not high
    return doses


def recovery_doses(rng, T, hi=14.0, block=8):
    """High blocks push x above the breakpoint (run-off identifies k);
    zero blocks let it decay geometrically below (identifies alpha)."""
    doses = np.zeros(T)
    t = 0
    high = True
    while t < T:
        if high:
            doses[t:t + block] = rng.uniform(10.0, hi)
        t += block
        high = not high
    return doses


def make_record(seed, T, every=1, noiseless=False, scale=SCALE, params=TRUTH,
                hi=20.0, doses_fn=None):
    rng = np.random.default_rng(seed)
    if doses_fn is None:
        doses = excitation_doses(rng, T, hi=hi)
    else:
        doses = doses_fn(rng, T)
    traj = simulate(params, doses)
    assert not traj.clamped.any(), "test record must stay inside the box"
    times = np.arange(every, T + 1, every)
    true_vals = traj.y[times]
    if noiseless:
        values = true_vals.copy()
    else:
        values = np.maximum(
            [sample_observation(v, scale, rng) for v in true_vals], 0.0)
    return ObservationSeries(doses=doses, times=times, values=values,
                             noise_scale=scale).validate(), traj


# ---------------------------------------------------------------------------
# Profile likelihood


class TestProfileLikelihood:
    def test_noiseless_truth_is_perfect_fit(self):
        obs, traj = make_record(seed=1, T=48, noiseless=True)
        value, triple, y_path = log_likelihood_at(obs, ALPHA_STAR, B_STAR,
                                                  K_STAR)
        expected = -obs.count * math.log(2.0 * SCALE)
        assert value == pytest.approx(expected, abs=1e-7)
        resid = obs.values - y_path[obs.times]
        assert np.max(np.abs(resid)) < 1e-6
        yb, y0, yb0 = triple
        assert yb == pytest.approx(YB_STAR, abs=1e-5)

    def test_wrong_b_scores_strictly_lower(self):
        obs, _ = make_record(seed=2, T=48, noiseless=True)
        v_true, _, _ = log_likelihood_at(obs, ALPHA_STAR, B_STAR, K_STAR)
        v_off, _, _ = log_likelihood_at(obs, ALPHA_STAR, 2.0 * B_STAR, K_STAR)
        assert v_off < v_true - 1.0

    def test_infeasible_when_forced_contribution_exceeds_box(self):
        tight = Domains(y_max=60.0)
        rng = np.random.default_rng(3)
        doses = np.full(24, 20.0)
        times = np.arange(1, 25)
        values = np.full(24, 50.0)
        obs = ObservationSeries(doses=doses, times=times, values=values,
                                noise_scale=SCALE).validate(tight)
        value, triple, path = log_likelihood_at(obs, 0.707, 5.0, 10.0,
                                                domains=tight)
        assert value == -math.inf and triple is None and path is None

    def test_path_bound_rows_generated_and_match_full_lp(self):
        # Doses spike between observations; the box ceiling is set just
        # below the unconstrained fit's peak so lazy range rows must fire.
        params = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=B_STAR, yb=30.0)
        T = 40
        doses = np.zeros(T)
        doses[10:16] = 28.0
        traj = simulate(params, doses)
        peak = traj.y.max()
        obs_times = np.array([t for t in range(1, T + 1)
                              if traj.y[t] < peak - 8.0][::2])
        obs = ObservationSeries(doses=doses, times=obs_times,
                                values=traj.y[obs_times], noise_scale=SCALE)
        tight = Domains(y_max=float(peak - 2.0))
        obs.validate(tight)
        prof = profile_loglik(obs, ALPHA_STAR, B_STAR, K_STAR, domains=tight,
                              need_path=True)
        assert prof.feasible
        assert prof.generated_rows > 0
        assert prof.y_path.max() <= tight.y_max + 1e-6
        problem = full_likelihood_lp(obs, ALPHA_STAR, B_STAR, K_STAR,
                                     domains=tight)
        sol = lp_kernel.solve(problem)
        assert sol.status == "optimal"
        full_value = (-sol.objective / SCALE
                      - obs.count * math.log(2.0 * SCALE))
        assert prof.value == pytest.approx(full_value, abs=1e-7)

    def test_reduced_equals_full_lp_on_probes(self):
        # Probes include capacities small enough that the dose pattern
        # drives the state out of the box: both routes must call those
        # infeasible, and must agree on the value everywhere else.
        obs, _ = make_record(seed=4, T=36)
        probes = [(0.500, 0.1, 2.0), (0.630, B_STAR, K_STAR),
                  (0.707, 0.3162, 50.0), (0.574, 0.2154, 0.5),
                  (0.673, 0.1, 400.0)]
        n_feasible = 0
        for alpha, b, k in probes:
            prof = profile_loglik(obs, alpha, b, k)
            sol = lp_kernel.solve(full_likelihood_lp(obs, alpha, b, k))
            if prof.feasible:
                n_feasible += 1
                assert sol.status == "optimal", (alpha, b, k)
                full_value = (-sol.objective / SCALE
                              - obs.count * math.log(2.0 * SCALE))
                assert prof.value == pytest.approx(full_value,
                                                   abs=1e-7), (alpha, b, k)
            else:
                assert sol.status == "infeasible", (alpha, b, k)
        assert n_feasible >= 2

    def test_cut_is_tangent_and_globally_valid(self):
        obs, _ = make_record(seed=5, T=48)
        prof = profile_loglik(obs, ALPHA_STAR, B_STAR, K_STAR, need_cut=True)
        cut = prof.opt_cut
        z_own = B_STAR * roll_x(ALPHA_STAR, K_STAR, obs.doses,
                                DEFAULT_DOMAINS.x_max)[1:]
        assert cut.g + cut.lam @ z_own == pytest.approx(prof.value, abs=1e-8)
        rng = np.random.default_rng(6)
        for _ in range(15):
            b = float(rng.uniform(0.1, 0.6))
            k = float(rng.uniform(0.5, 200.0))
            other = profile_loglik(obs, ALPHA_STAR, b, k)
            if not other.feasible:
                continue
            z = b * roll_x(ALPHA_STAR, k, obs.doses, DEFAULT_DOMAINS.x_max)[1:]
            assert other.value <= cut.g + cut.lam @ z + 1e-7

    def test_feasibility_cut_separates_and_admits(self):
        tight = Domains(y_max=60.0)
        doses = np.full(30, 20.0)
        times = np.arange(1, 31, 3)
        obs = ObservationSeries(doses=doses, times=times,
                                values=np.full(len(times), 50.0),
                                noise_scale=SCALE).validate(tight)
        bad = profile_loglik(obs, 0.707, 5.0, 10.0, domains=tight,
                             need_cut=True)
        assert not bad.feasible
        fc = bad.feas_cut
        z_bad = 5.0 * roll_x(0.707, 10.0, doses, tight.x_max)[1:]
        assert not fc.admits(z_bad)
        good = profile_loglik(obs, 0.707, 0.1, 200.0, domains=tight)
        assert good.feasible
        z_good = 0.1 * roll_x(0.707, 200.0, doses, tight.x_max)[1:]
        assert fc.admits(z_good)

    def test_mesh_oracle_agreement_small_horizon(self):
        obs, _ = make_record(seed=7, T=18, every=3)
        prof = profile_loglik(obs, ALPHA_STAR, B_STAR, K_STAR)
        A, B, c, cp, d, dp = _kernels(DEFAULT_GAMMAS, obs.horizon)
        x = roll_x(ALPHA_STAR, K_STAR, obs.doses, DEFAULT_DOMAINS.x_max)
        e, ep = _forced_terms(B_STAR * x, A, B, obs.horizon)

        def roll_y(y0, yb0, yb):
            y = y0 * A + yb0 * c + yb * d + e
            w = y0 * B + yb0 * cp + yb * dp + ep
            return np.concatenate([y, w])

        observed = list(zip(obs.times.tolist(), obs.values.tolist()))
        coarse = np.linspace(0.0, 150.0, 41)
        best, triple = l1_profile_bruteforce(roll_y, observed, SCALE,
                                             coarse, coarse, coarse)
        step = coarse[1] - coarse[0]
        fine = [np.linspace(max(0.0, v - step), min(150.0, v + step), 21)
                for v in triple]
        best, triple = l1_profile_bruteforce(roll_y, observed, SCALE, *fine)
        # LP dominates any mesh point; mesh can lag only by its resolution.
        assert prof.value >= best - 1e-9
        fine_step = fine[0][1] - fine[0][0]
        lipschitz = obs.count / SCALE
        assert prof.value - best <= 3.0 * lipschitz * fine_step

    def test_profile_triple_consistent_with_pointwise(self):
        obs, _ = make_record(seed=8, T=36)
        value, (yb, y0, yb0), _ = log_likelihood_at(obs, ALPHA_STAR, B_STAR,
                                                    K_STAR)
        params = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=B_STAR, yb=yb,
                               y0=y0, yb0=yb0)
        assert log_posterior_at(obs, params) == pytest.approx(value, abs=1e-8)

    def test_profile_dominates_fixed_probes(self):
        obs, _ = make_record(seed=9, T=30)
        prof = profile_loglik(obs, ALPHA_STAR, B_STAR, K_STAR)
        rng = np.random.default_rng(10)
        for _ in range(20):
            yb, y0, yb0 = rng.uniform(0.0, 150.0, size=3)
            params = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=B_STAR,
                                   yb=yb, y0=y0, yb0=yb0)
            assert log_posterior_at(obs, params) <= prof.value + 1e-9

    def test_low_information_flag_and_truncation(self):
        obs, _ = make_record(seed=11, T=24, every=12)
        assert obs.count == 2 and obs.low_information
        full, _ = make_record(seed=11, T=48, every=6)
        cut = full.truncated(24)
        assert cut.horizon == 24
        assert cut.times.max() <= 24
        np.testing.assert_array_equal(cut.doses, full.doses[:24])


# ---------------------------------------------------------------------------
# Cut-based search


class TestBenders:
    def test_single_candidate_terminates_in_one_iteration(self):
        obs, _ = make_record(seed=20, T=48)
        prof = profile_loglik(obs, ALPHA_STAR, B_STAR, K_STAR)
        r = benders_solve(obs, ALPHA_STAR, 1e-6, [K_STAR], [B_STAR])
        assert r.diagnostics.iterations == 1
        assert r.value == pytest.approx(prof.value, abs=1e-9)
        assert r.k == K_STAR and r.b == B_STAR

    def test_matches_grid_oracle_per_alpha(self):
        obs, _ = make_record(seed=21, T=72)
        eps = 1e-4
        for alpha in ALPHAS_3:
            r = benders_solve(obs, alpha, eps, K_MESH, B_GRID_4)
            g = mle_grid(obs, ((alpha,), B_GRID_4, K_MESH), refine=False)
            assert r.value <= g.log_likelihood + 1e-6
            assert r.value >= g.log_likelihood - eps - 1e-6
            d = r.diagnostics
            assert all(x <= y + 1e-12 for x, y in
                       zip(d.lower_trace, d.lower_trace[1:]))
            assert all(x >= y - 1e-12 for x, y in
                       zip(d.upper_trace, d.upper_trace[1:]))
            assert d.upper_trace[-1] - d.lower_trace[-1] <= eps + 1e-12

    def test_infeasible_everywhere_raises(self):
        tight = Domains(y_max=60.0)
        doses = np.full(30, 20.0)
        times = np.arange(1, 31, 3)
        obs = ObservationSeries(doses=doses, times=times,
                                values=np.full(len(times), 50.0),
                                noise_scale=SCALE).validate(tight)
        with pytest.raises(EstimationFailedError):
            benders_solve(obs, 0.707, 1e-3, [5.0, 10.0], [4.0, 8.0],
                          domains=tight)

    def test_iteration_cap_raises_numeric_error(self):
        obs, _ = make_record(seed=22, T=48)
        with pytest.raises(NumericError):
            benders_solve(obs, ALPHA_STAR, 1e-9, K_MESH, B_GRID_4,
                          max_iterations=1)

    def test_mle_methods_agree(self):
        obs, _ = make_record(seed=23, T=96)
        cfg = EstimateConfig(alphas=ALPHAS_3, bs=B_GRID_4, k_mesh=K_MESH,
                             epsilon=1e-4, refine=False)
        rg = mle_estimate(obs, "grid", cfg)
        rb = mle_estimate(obs, "benders", cfg)
        assert rg.params.alpha == rb.params.alpha
        assert rb.log_likelihood == pytest.approx(rg.log_likelihood,
                                                  abs=1e-4 + 1e-6)

    def test_missing_data_record_estimates(self):
        obs, _ = make_record(seed=24, T=72, every=2)
        cfg = EstimateConfig(alphas=(ALPHA_STAR,), bs=B_GRID_4, k_mesh=K_MESH)
        r = mle_estimate(obs, "benders", cfg)
        assert np.isfinite(r.log_likelihood)

    def test_mle_grid_single_point_returns_truth(self):
        obs, _ = make_record(seed=25, T=48, noiseless=True)
        r = mle_grid(obs, ((ALPHA_STAR,), (B_STAR,), np.array([K_STAR])),
                     refine=False)
        assert (r.params.alpha, r.params.b, r.params.k) == (
            ALPHA_STAR, B_STAR, K_STAR)
        assert r.log_likelihood == pytest.approx(
            -obs.count * math.log(2.0 * SCALE), abs=1e-7)

    def test_mle_grid_all_infeasible_raises(self):
        tight = Domains(y_max=60.0)
        doses = np.full(30, 20.0)
        times = np.arange(1, 31, 3)
        obs = ObservationSeries(doses=doses, times=times,
                                values=np.full(len(times), 50.0),
                                noise_scale=SCALE).validate(tight)
        with pytest.raises(EstimationFailedError):
            mle_grid(obs, ((0.707,), (4.0, 8.0), np.array([5.0, 10.0])),
                     domains=tight)

    def test_low_information_flagged_in_diagnostics(self):
        obs, _ = make_record(seed=26, T=24, every=12)
        r = mle_grid(obs, ((ALPHA_STAR,), (B_STAR,), np.array([K_STAR])))
        assert r.diagnostics["low_information"] is True

    def test_recovery_on_long_record(self):
        # T=240, observations every 2 h.  The dose pattern crosses the
        # breakpoint in both directions so decay segments identify alpha
        # and run-off segments identify k; the response gain is large
        # enough that one alpha notch shifts aPTT well past the noise.
        strong = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=0.3162,
                               yb=YB_STAR)
        obs, _ = make_record(seed=27, T=240, every=2, scale=1.5,
                             params=strong, hi=12.0)
        cfg = EstimateConfig(alphas=DEFAULT_DOMAINS.alpha_set,
                             bs=tuple(DEFAULT_B_GRID[:6]), k_mesh=K_MESH)
        r = mle_estimate(obs, "benders", cfg)
        assert r.params.alpha == ALPHA_STAR
        assert abs(r.params.b - 0.3162) / 0.3162 <= 0.10
        assert abs(r.params.k - K_STAR) / K_STAR <= 0.15

    def test_grid_recovery_short_record(self):
        strong = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=0.3162,
                               yb=YB_STAR)
        obs, _ = make_record(seed=29, T=96, every=2, scale=0.75,
                             params=strong, doses_fn=recovery_doses)
        r = mle_grid(obs, ((0.574, ALPHA_STAR, 0.673),
                           tuple(DEFAULT_B_GRID[2:6]), K_MESH))
        assert r.params.alpha == ALPHA_STAR
        assert abs(r.params.b - 0.3162) / 0.3162 <= 0.25
        assert abs(r.params.k - K_STAR) / K_STAR <= 0.30

    def test_roll_x_batch_matches_scalar(self):
        rng = np.random.default_rng(28)
        doses = excitation_doses(rng, 40)
        ks = np.array([0.5, K_STAR, 80.0, 4000.0])
        X = roll_x_batch(ALPHA_STAR, ks, doses, DEFAULT_DOMAINS.x_max)
        for i, k in enumerate(ks):
            np.testing.assert_allclose(
                X[i], roll_x(ALPHA_STAR, float(k), doses,
                             DEFAULT_DOMAINS.x_max), atol=1e-12)

    def test_mesh_helpers(self):
        fine = refined_mesh(K_MESH, K_STAR)
        assert fine[0] >= K_MESH[12] - 1e-12 and fine[-1] <= K_MESH[14] + 1e-12
        br = bracket_mesh(K_MESH, K_STAR)
        assert br.min() >= K_MESH[0] and br.max() <= K_MESH[-1]
        assert np.all(np.diff(br) > 0)


# ---------------------------------------------------------------------------
# Scenario table


class TestScenarioTable:
    def test_single_scenario_weight_one(self):
        obs, _ = make_record(seed=40, T=48)
        t = scenario_table(obs, (ALPHA_STAR,), (B_STAR,), k_mesh=K_MESH)
        assert len(t.scenarios) == 1
        assert t.scenarios[0].weight == pytest.approx(1.0, abs=1e-12)
        assert t.scenarios[0].raw_weight == pytest.approx(1.0, abs=1e-12)

    def test_true_scenario_heaviest_on_noiseless_record(self):
        # Doses must cross the breakpoint both ways: a record that stays in
        # the run-off regime is identical under every decay rate and the
        # scenario weights tie by design.
        strong = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=float(B_GRID_4[3]),
                               yb=YB_STAR)
        obs, _ = make_record(seed=41, T=96, every=2, noiseless=True,
                             params=strong, doses_fn=recovery_doses)
        t = scenario_table(obs, DEFAULT_DOMAINS.alpha_set, B_GRID_4,
                           k_mesh=K_MESH)
        sc = t.map_scenario
        assert (sc.alpha, sc.b) == (ALPHA_STAR, float(B_GRID_4[3]))
        others = [s.weight for s in t.scenarios if s.index != sc.index]
        assert sc.weight > max(others)

    def test_weight_normalization_invariants(self):
        obs, _ = make_record(seed=42, T=48)
        t = scenario_table(obs, ALPHAS_3, B_GRID_4, k_mesh=K_MESH)
        ws = np.array([s.weight for s in t.scenarios])
        raws = np.array([s.raw_weight for s in t.scenarios])
        assert ws.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(ws >= 0.0)
        assert raws.max() == pytest.approx(1.0, abs=1e-12)

    def test_constant_prior_leaves_weights_unchanged(self):
        obs, _ = make_record(seed=43, T=48)
        t0 = scenario_table(obs, ALPHAS_3, B_GRID_4, k_mesh=K_MESH)
        t1 = scenario_table(obs, ALPHAS_3, B_GRID_4,
                            prior=PriorSpec(kinetic=lambda a, k, b: 7.3),
                            k_mesh=K_MESH)
        for s0, s1 in zip(t0.scenarios, t1.scenarios):
            assert s1.weight == pytest.approx(s0.weight, abs=1e-9)
            assert s1.log_post == pytest.approx(s0.log_post + 7.3, abs=1e-6)

    def test_order_independence(self):
        obs, _ = make_record(seed=44, T=48)
        t_fwd = scenario_table(obs, ALPHAS_3, B_GRID_4, k_mesh=K_MESH)
        t_rev = scenario_table(obs, ALPHAS_3[::-1], B_GRID_4[::-1],
                               k_mesh=K_MESH)
        fwd = {(s.alpha, s.b): s.weight for s in t_fwd.scenarios}
        rev = {(s.alpha, s.b): s.weight for s in t_rev.scenarios}
        for key, w in fwd.items():
            assert rev[key] == pytest.approx(w, abs=1e-9)

    def test_bracket_hints_never_lose_to_their_hint(self):
        # A hinted search brackets the previous incumbent, so it may refine
        # past the full sweep but must never fall below it.
        obs, _ = make_record(seed=45, T=48)
        full = scenario_table(obs, (ALPHA_STAR,), B_GRID_4, k_mesh=K_MESH)
        hints = [s.k if s.feasible else None for s in full.scenarios]
        warm = scenario_table(obs, (ALPHA_STAR,), B_GRID_4, k_mesh=K_MESH,
                              hints=hints)
        for sf, sw in zip(full.scenarios, warm.scenarios):
            assert sw.log_post >= sf.log_post - 1e-6
            assert abs(math.log(sw.k / sf.k)) < 1.0

    def test_all_infeasible_raises(self):
        tight = Domains(y_max=60.0)
        doses = np.full(30, 20.0)
        times = np.arange(1, 31, 3)
        obs = ObservationSeries(doses=doses, times=times,
                                values=np.full(len(times), 50.0),
                                noise_scale=SCALE).validate(tight)
        with pytest.raises(EstimationFailedError):
            scenario_table(obs, (0.707,), (4.0, 8.0), domains=tight,
                           k_mesh=np.array([5.0, 10.0]))

    def test_top_m_breaks_ties_by_grid_order(self):
        obs, _ = make_record(seed=46, T=48)
        t = scenario_table(obs, (ALPHA_STAR,), (B_STAR, B_STAR),
                           k_mesh=K_MESH)
        assert t.scenarios[0].weight == pytest.approx(
            t.scenarios[1].weight, abs=1e-9)
        top = t.top(1)
        assert top[0].index == 0
        assert len(t.top(5)) == 2

    def test_terminal_state_matches_truth_on_noiseless_record(self):
        obs, traj = make_record(seed=47, T=48, noiseless=True)
        t = scenario_table(obs, (ALPHA_STAR,), (B_STAR,), k_mesh=K_MESH)
        sc = t.scenarios[0]
        assert sc.x_end == pytest.approx(traj.x[-1], abs=1e-8)
        assert sc.y_end == pytest.approx(traj.y[-1], abs=1e-5)
        assert sc.yb_end == pytest.approx(traj.yb_t[-1], abs=1e-5)

    def test_weight_concentrates_with_longer_records(self):
        strong = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=float(B_GRID_4[3]),
                               yb=YB_STAR)
        grids = (DEFAULT_DOMAINS.alpha_set, B_GRID_4)
        true_w = {48: [], 192: []}
        for seed in (50, 51, 52, 53):
            long_obs, _ = make_record(seed=seed, T=192, every=2, scale=1.0,
                                      params=strong, doses_fn=recovery_doses)
            for T in (48, 192):
                obs = long_obs.truncated(T)
                t = scenario_table(obs, *grids, k_mesh=K_MESH)
                w = next(s.weight for s in t.scenarios
                         if (s.alpha, s.b) == (ALPHA_STAR, float(B_GRID_4[3])))
                true_w[T].append(w)
        assert np.median(true_w[192]) >= np.median(true_w[48])
        assert np.median(true_w[192]) > 0.5


# ---------------------------------------------------------------------------
# Pointwise posterior


class TestPosterior:
    def test_uniform_prior_equals_likelihood(self):
        obs, _ = make_record(seed=60, T=36)
        value, (yb, y0, yb0), _ = log_likelihood_at(obs, ALPHA_STAR, B_STAR,
                                                    K_STAR)
        params = PatientParams(alpha=ALPHA_STAR, k=K_STAR, b=B_STAR, yb=yb,
                               y0=y0, yb0=yb0)
        assert log_posterior_at(obs, params, UNIFORM_PRIOR) == pytest.approx(
            value, abs=1e-8)

    def test_scaled_posterior_properties(self):
        obs, _ = make_record(seed=61, T=48)
        cfg = EstimateConfig(alphas=ALPHAS_3, bs=B_GRID_4, k_mesh=K_MESH)
        r = mle_estimate(obs, "grid", cfg)
        map_value = r.log_posterior
        assert scaled_posterior(obs, r.params, UNIFORM_PRIOR,
                                map_value) == pytest.approx(1.0, abs=1e-9)
        rng = np.random.default_rng(62)
        for _ in range(25):
            # Probes on the search grid (random initial conditions) can
            # never beat the grid MAP.
            probe = PatientParams(
                alpha=ALPHAS_3[rng.integers(3)],
                k=float(K_MESH[rng.integers(K_MESH.size)]),
                b=float(B_GRID_4[rng.integers(4)]),
                yb=float(rng.uniform(20.0, 60.0)),
                y0=float(rng.uniform(20.0, 90.0)),
                yb0=float(rng.uniform(20.0, 60.0)))
            sp = scaled_posterior(obs, probe, UNIFORM_PRIOR, map_value)
            assert 0.0 <= sp <= 1.0 + 1e-9

    def test_infeasible_point_is_minus_inf_and_scales_to_zero(self):
        obs, _ = make_record(seed=63, T=36)
        bad = PatientParams(alpha=0.707, k=0.5, b=9.0, yb=30.0)
        assert log_posterior_at(obs, bad) == -math.inf
        assert scaled_posterior(obs, bad, UNIFORM_PRIOR, 0.0) == 0.0

    def test_tight_prior_pulls_map_on_short_record(self):
        obs, _ = make_record(seed=64, T=18, every=6)
        grid = ((ALPHA_STAR,), tuple(DEFAULT_B_GRID[:6]), K_MESH)
        mle = mle_grid(obs, grid)
        center = float(DEFAULT_B_GRID[4])
        assert mle.params.b != center
        pull = PriorSpec(kinetic=lambda a, k, b: -abs(b - center) / 0.01)
        mapr = mle_grid(obs, grid, prior=pull)
        assert abs(mapr.params.b - center) < abs(mle.params.b - center)

    def test_prior_must_be_finite(self):
        obs, _ = make_record(seed=65, T=24)
        bad = PriorSpec(kinetic=lambda a, k, b: -math.inf)
        with pytest.raises(InvalidParameterError):
            log_posterior_at(obs, TRUTH, bad)


# ---------------------------------------------------------------------------
# Mixed-integer encoding equivalence


def _draw_patient(rng):
    alphas = DEFAULT_DOMAINS.alpha_set
    alpha = float(alphas[rng.integers(len(alphas))])
    k = float(rng.uniform(2.0, 60.0))
    b = float(np.exp(rng.uniform(np.log(0.1), np.log(2.0))))
    yb = float(rng.uniform(25.0, 40.0))
    return PatientParams(alpha=alpha, k=k, b=b, yb=yb)


def _draw_unclamped(rng, T=36):
    """Unclamped trajectory that visits both kinetic regimes with margin,
    so branch indicators are uniquely determined and nontrivial."""
    for _ in range(200):
        params = _draw_patient(rng)
        u_ther = params.yb * (1.0 - params.alpha) / (7.5 * params.b)
        doses = excitation_doses(rng, T, hi=2.5 * u_ther)
        traj = simulate(params, doses)
        if traj.clamped.any():
            continue
        bp = params.breakpoint
        x = traj.x[:T]
        if np.any(x > bp + 0.5) and np.any(x < bp - 0.5):
            return params, doses, traj
    raise AssertionError("could not draw a mixed-regime unclamped trajectory")


class TestReformulation:
    def test_roundtrip_50_draws(self):
        rng = np.random.default_rng(70)
        both_modes = 0
        for _ in range(50):
            params, doses, traj = _draw_unclamped(rng)
            assign = encode_trajectory(params, doses, traj)
            rep = check_assignment(assign, doses)
            assert rep.ok, rep.violations
            alpha, k, b, x = decode_assignment(assign)
            assert alpha == params.alpha
            assert k == pytest.approx(params.k, rel=1e-12)
            assert b == params.b
            np.testing.assert_allclose(x, traj.x, atol=1e-9)
            if 0 < assign.nu.sum() < len(assign.nu):
                both_modes += 1
        assert both_modes == 50

    def test_wrong_branch_indicator_fails(self):
        rng = np.random.default_rng(71)
        params, doses, traj = _draw_unclamped(rng)
        assign = encode_trajectory(params, doses, traj)
        s = assign.z[:-1] - assign.c - assign.w
        t = int(np.argmax(np.abs(s)))
        assert abs(s[t]) > 1e-6
        assign.nu[t] = 1.0 - assign.nu[t]
        assert not check_assignment(assign, doses).ok

    def test_wrong_rate_selector_fails(self):
        rng = np.random.default_rng(72)
        params, doses, traj = _draw_unclamped(rng)
        assign = encode_trajectory(params, doses, traj)
        hot = int(np.argmax(assign.iota))
        other = (hot + 1) % len(assign.iota)
        assign.iota[hot], assign.iota[other] = 0.0, 1.0
        assert not check_assignment(assign, doses).ok

    def test_tight_row_cannot_hide_in_big_m_slack(self):
        rng = np.random.default_rng(73)
        params, doses, traj = _draw_unclamped(rng)
        assign = encode_trajectory(params, doses, traj)
        hot = int(np.argmax(assign.iota))
        assign.w_i[hot, 3] += 1e-4
        assign.w[3] += 1e-4
        assert not check_assignment(assign, doses).ok

    def test_perturbed_path_fails(self):
        rng = np.random.default_rng(74)
        params, doses, traj = _draw_unclamped(rng)
        assign = encode_trajectory(params, doses, traj)
        assign.z[5] += 1e-3
        assert not check_assignment(assign, doses).ok

    def test_breakpoint_tie_admits_either_branch(self):
        params = PatientParams(alpha=0.5, k=1.0, b=1.0, yb=30.0)
        doses = np.array([2.0, 1.0])
        traj = simulate(params, doses)
        assert traj.x[1] == pytest.approx(params.breakpoint, abs=1e-12)
        assign = encode_trajectory(params, doses, traj)
        assert check_assignment(assign, doses).ok
        assign.nu[1] = 1.0 - assign.nu[1]
        assert check_assignment(assign, doses).ok

    def test_big_m_values_from_bounds(self):
        doses = np.full(12, 10.0)
        mm = big_m_bounds(doses)
        assert mm.z_max == DEFAULT_DOMAINS.b_range[1] * DEFAULT_DOMAINS.x_max
        assert np.all(mm.w_rows > 0)
        assert mm.branch1_hi > 0 and np.all(mm.branch1_lo > 0)
        assert np.isfinite(mm.branch2_hi) and np.all(np.isfinite(mm.branch2_lo))
