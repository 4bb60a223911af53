import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signolearn.errors import (
    AllRestartsFailedError,
    BadConfigError,
    DataFormatError,
    DimensionMismatchError,
    NonPositiveInputError,
    ZeroVarianceError,
)
from signolearn.regressor import (
    SrConfig,
    TargetSpec,
    evaluate_recovery,
    fit_sr,
    generate_benchmark_data,
    score_fit,
    sr_loss_and_grad,
)
from signolearn.signomial import Signomial, Term, canonicalize, equivalent


def monomial_spec(name="prod", exponents=(1.0, 1.0), alpha=1.0, samples=(200, 1000)):
    m = len(exponents)
    return TargetSpec(
        name=name,
        truth=Signomial([Term(alpha, tuple(exponents))]),
        ranges=tuple((1.0, 5.0) for _ in range(m)),
        samples=samples,
        num_terms=1,
    )


# --- loss ------------------------------------------------------------------------


def test_loss_zero_at_exact_generator():
    rng = np.random.default_rng(0)
    s = Signomial([Term(2.0, (1.0, -0.5))])
    X = rng.uniform(1, 5, size=(50, 2))
    y = 2.0 * X[:, 0] * X[:, 1] ** -0.5
    loss, _ = sr_loss_and_grad(s, X, y)
    assert loss == pytest.approx(0.0, abs=1e-22)


def test_loss_is_squared_residual():
    s = Signomial([Term(1.0, (0.0,))])  # constant 1
    loss, _ = sr_loss_and_grad(s, [[2.0]], [3.0])
    assert loss == pytest.approx(4.0)


def test_loss_includes_l1_on_exponents():
    s = Signomial([Term(1.5, (2.0, -1.0))])
    X = [[1.5, 2.0]]
    y = [4.0]
    base, g0 = sr_loss_and_grad(s, X, y, l1_penalty=0.0)
    full, g1 = sr_loss_and_grad(s, X, y, l1_penalty=0.1)
    assert full == pytest.approx(base + 0.1 * 3.0, rel=1e-12)
    np.testing.assert_array_equal(g0, g1)  # penalty is prox-handled, not in grad


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(20):
        k, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        alphas = rng.normal(0, 2, size=k)
        betas = rng.uniform(-1.5, 1.5, size=(k, m))
        X = rng.uniform(0.5, 3.0, size=(12, m))
        y = rng.normal(0, 3, size=12)
        s = Signomial.from_arrays(alphas, betas)
        _, grad = sr_loss_and_grad(s, X, y)

        theta0 = np.concatenate([alphas, betas.ravel()])
        h = 1e-6 * np.maximum(1.0, np.abs(theta0))

        def loss_at(theta):
            a, b = theta[:k], theta[k:].reshape(k, m)
            val, _ = sr_loss_and_grad(Signomial.from_arrays(a, b), X, y)
            return val

        fd = np.zeros_like(theta0)
        for i in range(len(theta0)):
            up, dn = theta0.copy(), theta0.copy()
            up[i] += h[i]
            dn[i] -= h[i]
            fd[i] = (loss_at(up) - loss_at(dn)) / (2 * h[i])
        assert np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12) < 1e-5


def test_loss_input_validation():
    s = Signomial([Term(1.0, (1.0,))])
    with pytest.raises(DataFormatError):
        sr_loss_and_grad(s, np.empty((0, 1)), [])
    with pytest.raises(DimensionMismatchError):
        sr_loss_and_grad(s, [[1.0]], [1.0, 2.0])
    with pytest.raises(NonPositiveInputError):
        sr_loss_and_grad(s, [[-1.0]], [1.0])
    with pytest.raises(DimensionMismatchError):
        sr_loss_and_grad(s, [[1.0, 2.0]], [1.0])
    with pytest.raises(DataFormatError):
        sr_loss_and_grad(s, [[1.0]], [np.nan])


# --- config -----------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(BadConfigError):
        SrConfig(num_terms=0).validate()
    with pytest.raises(BadConfigError):
        SrConfig(lambda_struct=1e-4, lambda_refine=1e-3).validate()
    with pytest.raises(BadConfigError):
        SrConfig(restarts=0).validate()
    with pytest.raises(BadConfigError):
        SrConfig(seed_list=()).validate()
    with pytest.raises(BadConfigError):
        SrConfig(noise_sigma=-0.1).validate()


def test_default_restarts_depend_on_term_count():
    assert SrConfig(num_terms=1).resolved_restarts() == 4
    assert SrConfig(num_terms=3).resolved_restarts() == 8
    assert SrConfig(num_terms=3, restarts=2).resolved_restarts() == 2


# --- fitting ----------------------------------------------------------------------


def test_fit_recovers_product_of_two_features():
    rng = np.random.default_rng(0)
    X = rng.uniform(1, 5, size=(200, 2))
    y = 2.0 * X[:, 0] * X[:, 1]
    s, stats = fit_sr(X, y, SrConfig(num_terms=1), seed=0)
    assert s.num_terms == 1
    assert s.alphas[0] == pytest.approx(2.0, abs=1e-3)
    np.testing.assert_allclose(s.betas[0], [1.0, 1.0], atol=1e-3)
    assert stats.final_mse < 1e-10


def test_fit_constant_target_zeroes_all_exponents():
    rng = np.random.default_rng(5)
    X = rng.uniform(1, 5, size=(150, 2))
    y = np.full(150, 4.2)
    s, _ = fit_sr(X, y, SrConfig(num_terms=1), seed=1)
    assert s.num_terms == 1
    np.testing.assert_array_equal(s.betas[0], [0.0, 0.0])
    assert s.alphas[0] == pytest.approx(4.2, rel=1e-6)


def test_fit_zeroes_irrelevant_feature_exactly():
    rng = np.random.default_rng(9)
    X = rng.uniform(1, 5, size=(300, 2))
    y = 2.0 * X[:, 0] + 0.01 * rng.standard_normal(300)
    s, _ = fit_sr(X, y, SrConfig(num_terms=1), seed=3)
    assert s.betas[0, 1] == 0.0
    assert s.betas[0, 0] == pytest.approx(1.0, abs=0.01)


def test_fit_output_satisfies_sparsity_floor():
    # every reported exponent is either exactly zero or above the zero
    # threshold, and every coefficient is above the prune threshold
    rng = np.random.default_rng(2)
    X = rng.uniform(1, 5, size=(250, 3))
    y = 3.0 * X[:, 0] ** 2 + 5.0 / X[:, 1] + 0.01 * rng.standard_normal(250)
    for seed in (0, 1, 2):
        s, _ = fit_sr(X, y, SrConfig(num_terms=2), seed=seed)
        for t in s.terms:
            assert abs(t.alpha) >= 1e-4
            for b in t.beta:
                assert b == 0.0 or abs(b) >= 5e-3


def test_fit_multi_term_never_worse_than_stage_a():
    rng = np.random.default_rng(8)
    X = rng.uniform(1, 5, size=(200, 2))
    y = 3.0 * X[:, 0] ** 2 + 5.0 / X[:, 1] + 0.01 * rng.standard_normal(200)
    for seed in (0, 4, 7):
        _, stats = fit_sr(X, y, SrConfig(num_terms=2), seed=seed)
        assert stats.final_mse <= stats.stage_a_best_mse + 1e-12


def test_fit_recovers_two_term_expression():
    spec = TargetSpec(
        name="two-term",
        truth=Signomial([Term(3.0, (2.0, 0.0)), Term(5.0, (0.0, -1.0))]),
        ranges=((1.0, 5.0), (1.0, 5.0)),
        samples=(200, 1000),
        num_terms=2,
    )
    res = evaluate_recovery(spec, SrConfig(num_terms=2))
    assert res.recovery_rate == 1.0


def test_fit_is_deterministic():
    rng = np.random.default_rng(1)
    X = rng.uniform(1, 5, size=(100, 2))
    y = X[:, 0] * X[:, 1] + 0.01 * rng.standard_normal(100)
    s1, st1 = fit_sr(X, y, SrConfig(num_terms=1), seed=11)
    s2, st2 = fit_sr(X, y, SrConfig(num_terms=1), seed=11)
    assert s1.to_dict() == s2.to_dict()
    assert st1.to_dict() == st2.to_dict()


def test_all_restarts_failed_k1():
    # seed chosen so that every L-BFGS start overflows at the initial point
    X = np.full((50, 4), 1e308)
    y = np.ones(50)
    with pytest.raises(AllRestartsFailedError):
        fit_sr(X, y, SrConfig(num_terms=1), seed=57)


def test_all_restarts_failed_k3():
    # seed chosen so that every Adam run sees a non-finite loss immediately
    X = np.full((50, 3), 1e308)
    y = np.ones(50)
    with pytest.raises(AllRestartsFailedError):
        fit_sr(X, y, SrConfig(num_terms=3), seed=45)


def test_monomial_recovery_across_random_seeds():
    # single random monomial, noiseless: at least 4 of the 5 standard seeds
    # must recover it after canonicalization
    rng = np.random.default_rng(123)
    m = 3
    exponents = tuple(rng.uniform(-3, 3, size=m))
    spec = TargetSpec(
        name="random-monomial",
        truth=Signomial([Term(float(rng.uniform(0.5, 3)), exponents)]),
        ranges=tuple((1.0, 5.0) for _ in range(m)),
        samples=(200, 200),
        num_terms=1,
    )
    cfg = SrConfig(num_terms=1, noise_sigma=0.0)
    res = evaluate_recovery(spec, cfg)
    assert sum(s.recovered for s in res.seeds) >= 4


# --- benchmark data ---------------------------------------------------------------


def test_generated_data_matches_truth_when_noiseless():
    spec = monomial_spec(exponents=(1.0, 2.0), alpha=1.5)
    ds = generate_benchmark_data(spec, 300, 0.0, seed=4)
    truth = 1.5 * ds.X[:, 0] * ds.X[:, 1] ** 2
    np.testing.assert_allclose(ds.y, truth, rtol=1e-12)


def test_generated_noise_has_requested_scale():
    spec = monomial_spec(samples=(20, 1000))
    ds = generate_benchmark_data(spec, 1000, 0.01, seed=8)
    truth = ds.X[:, 0] * ds.X[:, 1]
    resid_std = np.std(ds.y - truth)
    # chi-square concentration: with n=1000 the sample std of N(0, 0.01)
    # stays within about 5% of 0.01
    assert 0.008 <= resid_std <= 0.012


def test_generation_is_deterministic():
    spec = monomial_spec()
    a = generate_benchmark_data(spec, 250, 0.01, seed=3)
    b = generate_benchmark_data(spec, 250, 0.01, seed=3)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    c = generate_benchmark_data(spec, 250, 0.01, seed=4)
    assert not np.array_equal(a.X, c.X)


def test_positive_domain_restriction():
    spec = TargetSpec(
        name="crossing",
        truth=Signomial([Term(1.0, (2.0,))]),
        ranges=((-5.0, 5.0),),
        samples=(20, 1000),
        num_terms=1,
        positive_domain_only=True,
    )
    ds = generate_benchmark_data(spec, 500, 0.0, seed=0)
    assert ds.X.min() >= 5e-3
    assert ds.X.max() <= 5.0


def test_sample_count_must_stay_in_spec_range():
    spec = monomial_spec(samples=(100, 200))
    with pytest.raises(BadConfigError):
        generate_benchmark_data(spec, 99, 0.0, seed=0)
    with pytest.raises(BadConfigError):
        generate_benchmark_data(spec, 201, 0.0, seed=0)
    with pytest.raises(BadConfigError):
        generate_benchmark_data(spec, 150, -0.5, seed=0)


def test_spec_rejects_bad_ranges():
    with pytest.raises(DataFormatError):
        TargetSpec("bad", Signomial([Term(1.0, (1.0,))]), ((5.0, 1.0),), (20, 100), 1)
    with pytest.raises(DataFormatError):
        # crosses zero without the positive-domain flag
        TargetSpec("bad", Signomial([Term(1.0, (1.0,))]), ((-1.0, 1.0),), (20, 100), 1)
    with pytest.raises(DataFormatError):
        # entirely non-positive, flag cannot help
        TargetSpec(
            "bad", Signomial([Term(1.0, (1.0,))]), ((-5.0, -1.0),), (20, 100), 1,
            positive_domain_only=True,
        )
    with pytest.raises(DimensionMismatchError):
        TargetSpec("bad", Signomial([Term(1.0, (1.0,))]), ((1.0, 2.0),) * 2, (20, 100), 1)


def test_spec_json_round_trip():
    spec = TargetSpec(
        name="jin-like",
        truth=Signomial(
            [Term(8.0, (2.0, 0.0)), Term(8.0, (0.0, 3.0)), Term(-15.0, (0.0, 0.0))]
        ),
        ranges=((-5.0, 5.0), (-5.0, 5.0)),
        samples=(20, 1000),
        num_terms=3,
        positive_domain_only=True,
    )
    back = TargetSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
    assert back == spec
    with pytest.raises(DataFormatError):
        TargetSpec.from_dict({"name": "x"})


# --- scoring ----------------------------------------------------------------------


def test_score_perfect_fit():
    s = Signomial([Term(2.0, (1.0,))])
    X = np.array([[1.0], [2.0], [3.0]])
    y = 2.0 * X[:, 0]
    score = score_fit(s, X, y)
    # the log-domain evaluation round-trips through exp, so "exact" means
    # a residual at the bottom of double precision
    assert score.mse == pytest.approx(0.0, abs=1e-28)
    assert score.nmse == pytest.approx(0.0, abs=1e-28)
    assert score.r2 == pytest.approx(1.0, abs=1e-15)


def test_score_mean_predictor_has_zero_r2():
    X = np.array([[1.0], [2.0], [3.0]])
    y = np.array([1.0, 2.0, 6.0])
    s = Signomial([Term(float(y.mean()), (0.0,))])
    score = score_fit(s, X, y)
    assert score.r2 == pytest.approx(0.0, abs=1e-12)
    assert score.nmse == pytest.approx(1.0, rel=1e-12)


def test_score_hand_worked_example():
    # identity fit on x=(1,2,4) against y=(1,2,3): SSres=1, SStot=2,
    # mse=1/3, nmse=0.5, r2=0.5 by direct formula
    s = Signomial([Term(1.0, (1.0,))])
    X = np.array([[1.0], [2.0], [4.0]])
    y = np.array([1.0, 2.0, 3.0])
    score = score_fit(s, X, y)
    assert score.mse == pytest.approx(1 / 3, rel=1e-12)
    assert score.nmse == pytest.approx(0.5, rel=1e-12)
    assert score.r2 == pytest.approx(0.5, rel=1e-12)


def test_score_zero_variance_still_carries_mse():
    s = Signomial([Term(1.0, (0.0,))])
    X = np.array([[1.0], [2.0]])
    y = np.array([3.0, 3.0])
    with pytest.raises(ZeroVarianceError) as exc_info:
        score_fit(s, X, y)
    assert exc_info.value.mse == pytest.approx(4.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_score_r2_is_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    s = Signomial([Term(1.0, (1.0,)), Term(-0.5, (2.0,))])
    X = rng.uniform(0.5, 3.0, size=(20, 1))
    y = rng.normal(2, 1, size=20)
    perm = rng.permutation(20)
    a = score_fit(s, X, y)
    b = score_fit(s, X[perm], y[perm])
    assert a.r2 == pytest.approx(b.r2, rel=1e-12)


# --- recovery protocol ------------------------------------------------------------


def test_recovery_of_simple_product():
    res = evaluate_recovery(monomial_spec(), SrConfig(num_terms=1))
    assert res.recovery_rate == 1.0
    assert [s.seed for s in res.seeds] == [42, 43, 44, 45, 46]
    for s in res.seeds:
        assert s.recovered
        assert s.r2 > 0.999
        assert s.wall_time_seconds > 0
        assert 200 <= s.n_samples <= 1000


def test_recovery_fails_structurally_when_k_too_small():
    spec = TargetSpec(
        name="needs-two",
        truth=Signomial([Term(3.0, (2.0, 0.0)), Term(5.0, (0.0, -1.0))]),
        ranges=((1.0, 5.0), (1.0, 5.0)),
        samples=(200, 400),
        num_terms=2,
    )
    res = evaluate_recovery(spec, SrConfig(num_terms=1))
    assert res.recovery_rate == 0.0
    for s in res.seeds:
        assert s.r2 is not None  # accuracy still reported


def test_recovery_result_serialization_is_stable():
    spec = monomial_spec(samples=(200, 300))
    r1 = evaluate_recovery(spec, SrConfig(num_terms=1))
    r2 = evaluate_recovery(spec, SrConfig(num_terms=1))
    assert json.dumps(r1.to_dict(), sort_keys=True) == json.dumps(
        r2.to_dict(), sort_keys=True
    )
    with_timing = r1.to_dict(include_timing=True)
    assert "wallTimeSeconds" in with_timing["seeds"][0]


def test_recovery_equivalence_judged_in_canonical_form():
    # a fit returning a permuted, unsnapped version of the truth still counts
    truth = Signomial([Term(2.0, (1.0, 0.0)), Term(3.0, (0.0, 1.0))])
    fitted = Signomial([Term(3.001, (0.0, 0.9995)), Term(1.999, (1.0001, 0.0))])
    assert equivalent(canonicalize(fitted), canonicalize(truth))
