import math

import numpy as np
import pytest

from kpattern.models import ClippedRelu, Tanh, WindowScheme, init_cnn_theorem, init_fcn_standard
from kpattern.numerics import Rng, subset_mask
from kpattern.problems import (
    KPattern,
    Parity,
    Permutation,
    Uniform,
    random_kpattern,
    random_parity,
    random_permutation_fixing,
)
from kpattern.theory import (
    BoundReport,
    InsufficientCoverage,
    OgdTrace,
    construct_ustar,
    corollary_params,
    drift_bounds,
    loss_diff_bound,
    q_threshold,
    thm1_bound,
    thm2_bounds,
    ustar_norm_bound,
    verify_construction,
    verify_construction_exact,
    verify_drift,
    verify_ogd_regret,
    verify_permutation_identity,
)
from kpattern.training import TrainConfig, train


class TestConstructUstar:
    def test_pigeonhole_failure(self):
        # q = 2 < 2^3 sign patterns: coverage is impossible
        scheme = WindowScheme.boolean(6, 3)
        params = init_cnn_theorem(Rng(0), 2, scheme)
        pattern = random_kpattern(Rng(1), 6, 3)
        with pytest.raises(InsufficientCoverage):
            construct_ustar(params.W, params.b, pattern, scheme.positions)

    def test_k1_hand_case(self):
        # two neurons with opposite signs, identity table g(z) = z: the
        # network output equals the selected coordinate on every input
        n = 6
        scheme = WindowScheme.boolean(n, 1)
        W = np.array([[1.0], [-1.0]])
        b = np.array([0.0, 0.0])  # 1/k - 1 = 0 for k=1
        jstar = 3
        pattern = KPattern(n=n, k=1, jstar=jstar, table=np.array([1.0, -1.0]))
        result = construct_ustar(W, b, pattern, scheme.positions)
        assert np.array_equal(result.U[jstar - 1], [1.0, -1.0])
        from kpattern.models import CnnParams, cnn_forward
        from kpattern.problems import sign_vectors

        params = CnnParams(W, b, result.U)
        X = sign_vectors(n)
        h = cnn_forward(params, scheme, ClippedRelu(1.0), X)
        assert np.array_equal(h, X[:, jstar - 1])

    def test_norm_bound_formula(self):
        assert ustar_norm_bound(2, 64) == 2.0**3 * 2 / 8.0  # == 2.0
        scheme = WindowScheme.boolean(10, 2)
        params = init_cnn_theorem(Rng(3), 64, scheme)
        pattern = random_kpattern(Rng(4), 10, 2)
        result = construct_ustar(params.W, params.b, pattern, scheme.positions)
        assert result.norm <= ustar_norm_bound(2, 64)

    def test_rejects_bad_first_layer(self):
        scheme = WindowScheme.boolean(6, 2)
        pattern = random_kpattern(Rng(0), 6, 2)
        with pytest.raises(ValueError):
            construct_ustar(np.ones((8, 2)), np.full(8, -0.5), pattern,
                            scheme.positions)

    def test_exact_verifier(self):
        for k in (1, 2, 3):
            scheme = WindowScheme.boolean(10, k)
            q = q_threshold(k, 0.05)
            params = init_cnn_theorem(Rng(10 + k), q, scheme)
            pattern = random_kpattern(Rng(20 + k), 10, k)
            out = verify_construction_exact(params.W, params.b, pattern, scheme)
            assert out["exact_zero_loss"] and out["exact_accuracy"]

    def test_float_verifier(self):
        scheme = WindowScheme.boolean(10, 2)
        params = init_cnn_theorem(Rng(5), 142, scheme)
        pattern = random_kpattern(Rng(6), 10, 2)
        out = verify_construction(params.W, params.b, pattern, scheme,
                                  ClippedRelu(1.0))
        assert out["accuracy"] == 1.0
        assert out["hinge_loss"] < 1e-14

    def test_success_rate_at_threshold(self):
        # coverage failure rate stays within delta plus binomial slack
        k, delta, trials = 3, 0.2, 200
        q = q_threshold(k, delta)
        scheme = WindowScheme.boolean(8, k)
        pattern = random_kpattern(Rng(0), 8, k)
        failures = 0
        for t in range(trials):
            params = init_cnn_theorem(Rng(1000 + t), q, scheme)
            try:
                construct_ustar(params.W, params.b, pattern, scheme.positions)
            except InsufficientCoverage:
                failures += 1
        margin = 3 * math.sqrt(delta * (1 - delta) * trials)
        assert failures <= delta * trials + margin


class TestQThreshold:
    def test_arithmetic_examples(self):
        assert q_threshold(3, 0.1) == 282
        assert q_threshold(4, 0.05) == 740

    def test_near_one_delta(self):
        # ceil(8 * ln(1/delta)) + 1 -> 2 as delta -> 1
        assert q_threshold(0, 0.999999) == 2

    def test_validation(self):
        with pytest.raises(ValueError):
            q_threshold(3, 0.0)
        with pytest.raises(ValueError):
            q_threshold(3, 1.0)


class TestThm1Bound:
    def test_arithmetic(self):
        b = thm1_bound(16, 3, 1024, 1000, 1.0)
        assert b.drift_term == 36.0
        assert b.comparator_term == 9.0
        assert b.gradient_term == 2.048
        assert b.total == 47.048

    def test_limits(self):
        small = thm1_bound(16, 3, 10**12, 10**12, 1.0)
        assert small.total < 1e-3

    def test_scaling_in_q(self):
        b1 = thm1_bound(16, 3, 512, 1000, 1.0)
        b2 = thm1_bound(16, 3, 1024, 1000, 1.0)
        assert b2.drift_term == b1.drift_term / 2
        assert b2.comparator_term == pytest.approx(b1.comparator_term / math.sqrt(2))
        assert b2.gradient_term == pytest.approx(b1.gradient_term * math.sqrt(2))


class TestThm2Bounds:
    def test_arithmetic(self):
        b = thm2_bounds(10, 3, 4, 1.0)
        assert b.w_bound == pytest.approx(40.0 / 84.0)
        assert b.u_bound == pytest.approx(4.0 / 120.0)
        b2 = thm2_bounds(16, 8, 64, 1.0)
        assert b2.w_bound == pytest.approx(1024.0 / 6435.0)
        assert b2.u_bound == pytest.approx(64.0 / 12870.0)

    def test_k_equals_n_branch(self):
        b = thm2_bounds(6, 6, 3, 1.0)
        assert b.w_bound == 18.0  # C(5,5) = 1 branch

    def test_monotone_in_k_up_to_half(self):
        n, q = 16, 8
        values = [thm2_bounds(n, k, q).w_bound for k in range(1, n // 2 + 1)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_large_n_log_space(self):
        b = thm2_bounds(300, 150, 4, 1.0)
        assert 0.0 < b.u_bound < 1e-80

    def test_validation(self):
        with pytest.raises(ValueError):
            thm2_bounds(5, 6, 4)


class TestDriftBounds:
    def test_arithmetic(self):
        b = drift_bounds(10, 0.01, 100, 16, 3, 1.0)
        assert b.u_bound == pytest.approx(1.0)
        assert b.w_bound == pytest.approx(1e-4 * 100 * 16 * math.sqrt(300))

    def test_zero_steps(self):
        b = drift_bounds(0, 0.01, 100, 16, 3, 1.0)
        assert b.u_bound == 0.0 and b.w_bound == 0.0

    def test_loss_diff(self):
        v = loss_diff_bound(10, 0.01, 100, 16, 3, 1.0, [0.5, 0.0, 1.5])
        assert v == pytest.approx(1e-4 * 100 * 16 * 3 * 10.0 * 2.0)


class TestVerifyDrift:
    def test_theorem_run_within_bounds(self):
        n, k, q = 8, 2, 32
        rng = Rng(0)
        scheme = WindowScheme.boolean(n, k)
        params = init_cnn_theorem(rng.split(0), q, scheme)
        pattern = random_kpattern(rng.split(1), n, k)
        cfg = TrainConfig(steps=50, eta_theorem=True, theorem_mode=True,
                          record_stride=1)
        _, traj = train(params, ClippedRelu(1.0), pattern.evaluate, Uniform(n),
                        cfg, scheme=scheme)
        reports = verify_drift(traj, n, k, q, 1.0)
        assert all(r.passed for r in reports)
        assert reports[0].detail["c_free_bound_held"]


class TestOgdRegret:
    def test_trivial_single_step(self):
        trace = OgdTrace(losses=np.array([0.0]),
                         comparator_losses=np.array([0.0]),
                         grad_norms=np.array([0.0]),
                         theta1_norm=0.0, comparator_norm=0.0, eta=0.1)
        report = verify_ogd_regret(trace)
        assert report.passed
        assert report.measured == 0.0

    def test_quadratic_hand_oracle(self):
        # f_t(theta) = theta^2 in 1-D, theta_1 = 1, eta = 0.1, theta* = 0
        eta, T = 0.1, 10
        theta = 1.0
        losses, grads = [], []
        for _ in range(T):
            losses.append(theta**2)
            grads.append(abs(2 * theta))
            theta = theta - eta * 2 * theta
        trace = OgdTrace(losses=np.array(losses),
                         comparator_losses=np.zeros(T),
                         grad_norms=np.array(grads),
                         theta1_norm=1.0, comparator_norm=0.0, eta=eta)
        report = verify_ogd_regret(trace)
        assert report.passed

    def test_cnn_frozen_w_run_passes(self):
        n, k, q = 8, 2, 32
        rng = Rng(3)
        scheme = WindowScheme.boolean(n, k)
        params = init_cnn_theorem(rng.split(0), q, scheme)
        pattern = random_kpattern(rng.split(1), n, k)
        built = construct_ustar(params.W, params.b, pattern, scheme.positions)
        cfg = TrainConfig(steps=60, eta_theorem=True, theorem_mode=True,
                          frozen=frozenset({"W", "b"}), record_stride=1)
        _, traj = train(params, ClippedRelu(1.0), pattern.evaluate, Uniform(n),
                        cfg, scheme=scheme, comparator_u=built.U)
        trace = OgdTrace.from_trajectory(traj, traj.metadata["comparator_norm"])
        assert len(trace.losses) == 60
        report = verify_ogd_regret(trace)
        assert report.passed

    def test_requires_positive_eta(self):
        trace = OgdTrace(losses=np.array([1.0]), comparator_losses=np.array([0.0]),
                         grad_norms=np.array([1.0]), theta1_norm=0.0,
                         comparator_norm=1.0, eta=0.0)
        with pytest.raises(ValueError):
            verify_ogd_regret(trace)


class TestPermutationIdentity:
    def test_identity_permutation_zero_difference(self):
        n = 8
        params = init_fcn_standard(Rng(0), 4, n)
        report = verify_permutation_identity(
            params, Tanh(), subset_mask([1, 2]), j=5, perm=Permutation.identity(n)
        )
        assert report.measured == 0.0

    def test_transposition_case(self):
        n = 8
        params = init_fcn_standard(Rng(1), 4, n)
        params.u[...] = Rng(2).signs(4)
        perm = Permutation.of_mapping({2: 3, 3: 2}, n)
        report = verify_permutation_identity(
            params, Tanh(), subset_mask([1, 2]), j=5, perm=perm
        )
        assert report.measured <= 1e-12
        assert report.detail["u_grad_difference"] <= 1e-12

    def test_random_triples(self):
        n = 10
        rng = Rng(7)
        for trial in range(20):
            trial_rng = rng.split(trial)
            params = init_fcn_standard(trial_rng.split(0), 3, n)
            params.u[...] = trial_rng.split(1).signs(3)
            k = int(trial_rng.split(2).integers(1, 5))
            parity = random_parity(trial_rng.split(3), n, k)
            j = int(trial_rng.split(4).integers(1, n + 1))
            perm = random_permutation_fixing(trial_rng.split(5), n, j)
            report = verify_permutation_identity(params, Tanh(), parity.mask,
                                                 j, perm)
            assert report.passed, f"trial {trial}: {report.measured}"

    def test_rejects_non_fixing_permutation(self):
        n = 6
        params = init_fcn_standard(Rng(0), 2, n)
        perm = Permutation.of_mapping({1: 2, 2: 1}, n)
        with pytest.raises(ValueError):
            verify_permutation_identity(params, Tanh(), subset_mask([3]), j=1,
                                        perm=perm)


class TestCorollary:
    def test_headline_value(self):
        p = corollary_params(16, 0.1, 1.0)
        assert p.q == pytest.approx(100 * 4096 * math.log(16) ** 2)
        assert p.q == pytest.approx(3.149e6, rel=1e-3)

    def test_scaling(self):
        p1 = corollary_params(16, 0.1, 1.0)
        p2 = corollary_params(16, 0.05, 1.0)
        assert p2.q == 4.0 * p1.q
        assert p2.T == 4.0 * p1.T

    def test_zero_constant_rejected(self):
        with pytest.raises(ValueError):
            corollary_params(16, 0.1, 0.0)


class TestBoundReport:
    def test_pass_semantics(self):
        rep = BoundReport(name="x", inputs={}, theoretical=1.0, measured=0.9)
        assert rep.passed and rep.margin == pytest.approx(0.1)
        rep2 = BoundReport(name="x", inputs={}, theoretical=1.0, measured=1.5,
                           tolerance=0.1)
        assert not rep2.passed
        assert "FAIL" in rep2.to_text()
