import numpy as np
import pytest

from carecontracts import estimation
from carecontracts.errors import (
    CohortFormatError,
    CollinearCovariatesError,
    EstimationError,
    InsufficientControlsError,
    StageError,
)
from carecontracts.estimation import (
    AssumptionWarning,
    PatientRecord,
    cox_partial_likelihood,
    criterion_from_name,
    death_before_discharge,
    fit_cox,
    fit_propensity,
    load_cohort,
    match_one_to_one,
    outcome_rates,
    response_scores,
    run_pipeline,
    save_cohort,
)
from carecontracts.synthetic import SyntheticCohortSpec, generate_cohort


def make_record(i, z, e, t=10, los=5.0, event=1):
    return PatientRecord(
        id=f"r{i}", covariates=tuple(z), treatment=e, event_time=t, los=los, event_observed=event
    )


def logistic_cohort(rng, n, coefficients, intercept=0.0):
    p = len(coefficients)
    z = rng.normal(size=(n, p))
    prob = 1.0 / (1.0 + np.exp(-(intercept + z @ np.asarray(coefficients))))
    e = (rng.random(n) < prob).astype(int)
    return [make_record(i, z[i], int(e[i])) for i in range(n)], z, e


def survival_records(rng, n, beta, censor_scale=None):
    """Exponential proportional-hazards sample rounded up to whole days."""
    p = len(beta)
    z = rng.normal(size=(n, p))
    rate = 0.02 * np.exp(z @ np.asarray(beta))
    death = rng.exponential(1.0 / rate)
    if censor_scale is not None:
        censor = rng.exponential(censor_scale, n)
        observed = (death <= censor).astype(int)
        time = np.minimum(death, censor)
    else:
        observed = np.ones(n, dtype=int)
        time = death
    days = np.maximum(1, np.ceil(time)).astype(int)
    return [
        make_record(i, z[i], 0, t=int(days[i]), los=float(days[i]) + 1.0, event=int(observed[i]))
        for i in range(n)
    ]


class TestFitPropensity:
    def test_recovers_planted_coefficients(self, rng):
        truth = np.array([0.8, -0.5, 0.3])
        cohort, _, _ = logistic_cohort(rng, 5000, truth, intercept=-0.4)
        model = fit_propensity(cohort)
        assert model.coefficients[0] == pytest.approx(-0.4, abs=0.15)
        assert model.coefficients[1:] == pytest.approx(truth, abs=0.1)
        assert model.score_norm <= 1e-8
        assert np.all((model.scores > 0) & (model.scores < 1))

    def test_null_model_slopes_near_zero(self, rng):
        cohort, _, _ = logistic_cohort(rng, 4000, [0.0, 0.0, 0.0])
        model = fit_propensity(cohort)
        for slope, se in zip(model.coefficients[1:], model.standard_errors[1:]):
            assert abs(slope) <= 3 * se

    def test_all_treated_rejected(self, rng):
        cohort = [make_record(i, rng.normal(size=2), 1) for i in range(50)]
        with pytest.raises(EstimationError):
            fit_propensity(cohort)

    def test_collinear_covariates_rejected(self, rng):
        z = rng.normal(size=200)
        cohort = [
            make_record(i, (float(z[i]), 2.0 * float(z[i])), int(rng.random() < 0.5))
            for i in range(200)
        ]
        with pytest.raises(CollinearCovariatesError):
            fit_propensity(cohort)


class TestMatching:
    def test_case_study_shape(self, rng):
        """728 treated out of 25,934 yields a matched cohort of 1,456."""
        n = 25_934
        scores = rng.uniform(0.01, 0.99, n)
        treated = set(rng.choice(n, size=728, replace=False).tolist())
        cohort = [make_record(i, (0.0,), int(i in treated)) for i in range(n)]
        result = match_one_to_one(cohort, scores)
        assert len(result.records) == 1456
        assert len(result.pairs) == 728

    def test_unique_nearest_neighbors(self):
        cohort = [
            make_record(0, (0.0,), 1),
            make_record(1, (0.0,), 1),
            make_record(2, (0.0,), 0),
            make_record(3, (0.0,), 0),
        ]
        scores = np.array([0.2, 0.8, 0.21, 0.79])
        result = match_one_to_one(cohort, scores)
        assert set(result.pairs) == {("r1", "r3"), ("r0", "r2")}

    def test_caliper_drops_isolated_treated(self):
        cohort = [make_record(0, (0.0,), 1), make_record(1, (0.0,), 0)]
        scores = np.array([0.5, 0.55])
        result = match_one_to_one(cohort, scores, caliper=0.01)
        assert result.dropped_treated == ("r0",)
        assert result.records == ()

    def test_insufficient_controls(self):
        cohort = [make_record(0, (0.0,), 1), make_record(1, (0.0,), 1), make_record(2, (0.0,), 0)]
        with pytest.raises(InsufficientControlsError):
            match_one_to_one(cohort, np.array([0.4, 0.5, 0.45]))

    def test_greedy_local_optimality(self, rng):
        """Swapping the controls of any two pairs never shrinks the total distance."""
        n = 400
        scores = rng.uniform(0, 1, n)
        cohort = [make_record(i, (0.0,), int(i < 60)) for i in range(n)]
        result = match_one_to_one(cohort, scores)
        index = {f"r{i}": i for i in range(n)}
        pairs = [(index[a], index[b]) for a, b in result.pairs]
        for i in range(0, len(pairs), 7):
            for j in range(i + 1, len(pairs), 11):
                (t1, c1), (t2, c2) = pairs[i], pairs[j]
                current = abs(scores[t1] - scores[c1]) + abs(scores[t2] - scores[c2])
                swapped = abs(scores[t1] - scores[c2]) + abs(scores[t2] - scores[c1])
                assert current <= swapped + 1e-12


class TestFitCox:
    def test_recovers_planted_coefficients(self, rng):
        truth = (0.5, -0.3)
        records = survival_records(rng, 10_000, truth, censor_scale=200.0)
        events = sum(r.event_observed for r in records)
        assert 0.1 < 1 - events / len(records) < 0.35  # meaningful censoring share
        fit = fit_cox(records)
        assert fit.beta == pytest.approx(truth, abs=0.05)
        assert fit.gradient_norm <= 1e-8

    def test_likelihood_never_decreases(self, rng):
        records = survival_records(rng, 800, (0.7, -0.4, 0.2))
        fit = fit_cox(records)
        assert all(b >= a - 1e-9 for a, b in zip(fit.ll_trace, fit.ll_trace[1:]))

    def test_flat_covariate_rejected(self, rng):
        records = [
            make_record(i, (1.0, float(rng.normal())), 0, t=int(i % 17) + 1)
            for i in range(100)
        ]
        with pytest.raises(CollinearCovariatesError):
            fit_cox(records)

    def test_gradient_matches_finite_differences(self, rng):
        records = survival_records(rng, 300, (0.4, -0.2))
        times = np.array([r.event_time for r in records], dtype=float)
        events = np.array([r.event_observed for r in records])
        z = np.array([r.covariates for r in records])
        for _ in range(5):
            beta = rng.uniform(-0.8, 0.8, 2)
            _, grad, _ = cox_partial_likelihood(beta, times, events, z)
            h = 1e-6
            for k in range(2):
                step = np.zeros(2)
                step[k] = h
                up, _, _ = cox_partial_likelihood(beta + step, times, events, z)
                down, _, _ = cox_partial_likelihood(beta - step, times, events, z)
                fd = (up - down) / (2 * h)
                assert grad[k] == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_censored_records_enter_risk_sets_only(self, rng):
        """Censoring a record changes the likelihood only through event terms."""
        records = survival_records(rng, 120, (0.3,))
        beta = np.array([0.1])
        times = np.array([r.event_time for r in records], dtype=float)
        z = np.array([r.covariates for r in records])
        all_events = np.ones(len(records), dtype=int)
        ll_all, _, _ = cox_partial_likelihood(beta, times, all_events, z)
        one_censored = all_events.copy()
        one_censored[0] = 0
        ll_cens, _, _ = cox_partial_likelihood(beta, times, one_censored, z)
        assert ll_cens != ll_all


class TestResponseScores:
    def _fit_like(self, beta):
        return estimation.CoxFit(
            beta=np.asarray(beta, dtype=float),
            log_partial_likelihood=0.0,
            iterations=0,
            gradient_norm=0.0,
            ll_trace=(0.0,),
        )

    def test_identical_fits_give_zero_scores(self, rng):
        cohort = [make_record(i, rng.normal(size=2), 0) for i in range(10)]
        fit = self._fit_like([0.5, -0.2])
        table = response_scores(fit, fit, cohort)
        assert np.all(table.scores == 0.0)
        assert np.all(table.classes == 0)  # strict inequality at the cutoff

    def test_dot_product(self):
        cohort = [make_record(0, (2.0, 1.0), 0)]
        table = response_scores(self._fit_like([0.0, 1.0]), self._fit_like([1.0, 0.0]), cohort)
        assert table.scores[0] == pytest.approx(1.0, abs=1e-15)

    def test_dimension_mismatch(self, rng):
        cohort = [make_record(0, (1.0, 2.0), 0)]
        with pytest.raises(EstimationError):
            response_scores(self._fit_like([1.0]), self._fit_like([1.0, 2.0]), cohort)

    def test_planted_class_agreement(self, rng):
        spec = SyntheticCohortSpec(n=5000, treated_fraction=0.5)
        records, truth = generate_cohort(spec, 99)
        arm0 = [r for r in records if r.treatment == 0]
        arm1 = [r for r in records if r.treatment == 1]
        table = response_scores(fit_cox(arm0), fit_cox(arm1), records)
        agreement = float(np.mean(table.classes == truth.true_classes))
        assert agreement >= 0.95


class TestOutcomeRates:
    def test_planted_cell_rates(self, rng):
        spec = SyntheticCohortSpec(n=100_000, treated_fraction=0.5)
        records, truth = generate_cohort(spec, 7)
        table = estimation.ResponseScoreTable(
            ids=tuple(r.id for r in records),
            scores=truth.true_classes.astype(float) - 0.5,
            classes=truth.true_classes,
            cutoff=0.0,
        )
        rates = outcome_rates(table, records, death_before_discharge)
        for (r, e), expected in {
            (0, 0): 0.51,
            (0, 1): 0.75,
            (1, 0): 0.66,
            (1, 1): 0.85,
        }.items():
            assert rates.pi_hat[(r, e)] == pytest.approx(expected, abs=0.01)
        assert rates.gamma_hat == pytest.approx(0.44, abs=0.01)
        assert sum(rates.counts.values()) == len(records)

    def test_orientation_flag(self, rng):
        spec = SyntheticCohortSpec(n=2000, treated_fraction=0.5)
        records, truth = generate_cohort(spec, 3)
        table = estimation.ResponseScoreTable(
            ids=tuple(r.id for r in records),
            scores=truth.true_classes.astype(float) - 0.5,
            classes=truth.true_classes,
            cutoff=0.0,
        )
        survival = outcome_rates(table, records, death_before_discharge, orientation="survival")
        mortality = outcome_rates(table, records, death_before_discharge, orientation="mortality")
        for cell in survival.pi_hat:
            assert survival.pi_hat[cell] == pytest.approx(1 - mortality.pi_hat[cell], abs=1e-12)
            assert survival.raw_rate[cell] == mortality.pi_hat[cell]

    def test_empty_cell_flagged(self):
        records = [make_record(0, (0.0,), 1, t=3, los=10.0), make_record(1, (0.0,), 1, t=9, los=2.0)]
        table = estimation.ResponseScoreTable(
            ids=("r0", "r1"), scores=np.array([1.0, 1.0]), classes=np.array([1, 1]), cutoff=0.0
        )
        rates = outcome_rates(table, records)
        assert (0, 0) in rates.empty_cells
        assert rates.pi_hat[(0, 0)] is None
        assert rates.counts[(0, 0)] == 0
        with pytest.raises(EstimationError):
            rates.to_model_params()

    def test_class_shares_sum_to_one(self, rng):
        spec = SyntheticCohortSpec(n=1000, treated_fraction=0.5)
        records, truth = generate_cohort(spec, 5)
        table = estimation.ResponseScoreTable(
            ids=tuple(r.id for r in records),
            scores=truth.true_classes.astype(float) - 0.5,
            classes=truth.true_classes,
            cutoff=0.0,
        )
        rates = outcome_rates(table, records)
        share_bad = float(np.mean(table.classes == 0))
        assert rates.gamma_hat + share_bad == 1.0

    def test_criterion_parsing(self):
        record = make_record(0, (0.0,), 0, t=10, los=20.0)
        assert criterion_from_name("death-before-discharge")(record) == 1
        assert criterion_from_name("death-within:9")(record) == 0
        assert criterion_from_name("death-within:10")(record) == 1
        with pytest.raises(EstimationError):
            criterion_from_name("readmission")


class TestCohortCsv:
    def test_round_trip(self, tmp_path, rng):
        spec = SyntheticCohortSpec(n=50, treated_fraction=0.4)
        records, _ = generate_cohort(spec, 11)
        path = tmp_path / "cohort.csv"
        save_cohort(records, path)
        loaded = load_cohort(path)
        assert loaded == records

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,treat,t,los,event,z1\n")
        with pytest.raises(CohortFormatError, match="line 1"):
            load_cohort(path)

    def test_bad_row_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,e,t,los,event,z1\np1,1,5,3.0,1,0.2\np2,1,oops,3.0,1,0.2\n")
        with pytest.raises(CohortFormatError, match="line 3"):
            load_cohort(path)

    def test_nonpositive_time_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("id,e,t,los,event,z1\np1,1,0,3.0,1,0.2\n")
        with pytest.raises(CohortFormatError, match="line 2"):
            load_cohort(path)


class TestPipeline:
    def test_recovers_planted_parameters(self, bundled_pipeline):
        spec, truth, result = bundled_pipeline
        params = result.params
        assert params.pi00 == pytest.approx(spec.pi00, abs=0.02)
        assert params.pi01 == pytest.approx(spec.pi01, abs=0.02)
        assert params.pi10 == pytest.approx(spec.pi10, abs=0.02)
        assert params.pi11 == pytest.approx(spec.pi11, abs=0.02)
        assert params.gamma == pytest.approx(spec.gamma, abs=0.02)
        assert result.diagnostics.n_matched == 2 * result.diagnostics.n_treated
        assert not result.diagnostics.assumption_warnings

    def test_recovers_planted_cox_coefficients(self, bundled_pipeline):
        spec, _, result = bundled_pipeline
        assert result.diagnostics.cox_control["beta"] == pytest.approx(
            spec.beta_control, abs=0.05
        )
        assert result.diagnostics.cox_treated["beta"] == pytest.approx(
            spec.beta_treated, abs=0.05
        )

    def test_empty_cohort_fails_at_first_stage(self):
        with pytest.raises(StageError) as excinfo:
            run_pipeline([])
        assert excinfo.value.stage == "fit_propensity"

    def test_deterministic(self, rng):
        spec = SyntheticCohortSpec(n=4000, treated_fraction=0.3)
        records, _ = generate_cohort(spec, 21)
        a = run_pipeline(records)
        b = run_pipeline(records)
        assert a.params == b.params
        assert a.rates.counts == b.rates.counts
        assert np.array_equal(a.score_table.scores, b.score_table.scores)

    def test_assumption_violation_warns_but_succeeds(self):
        # plant an ordering violation: treating good responders hurts them
        spec = SyntheticCohortSpec(
            n=20_000, treated_fraction=0.5, pi10=0.85, pi11=0.55, gamma=0.5
        )
        records, _ = generate_cohort(spec, 31)
        with pytest.warns(AssumptionWarning):
            result = run_pipeline(records)
        assert result.diagnostics.assumption_warnings

    def test_histogram_export_shape(self, bundled_pipeline):
        _, _, result = bundled_pipeline
        hist = result.diagnostics.histogram
        assert len(hist["bin_edges"]) == len(hist["counts"]) + 1
        assert sum(hist["counts"]) == result.diagnostics.n_matched
