import numpy as np
import pytest

from kpattern.numerics import Rng, subset_mask
from kpattern.problems import (
    CapacityError,
    Empirical,
    KPattern,
    Parity,
    Permutation,
    Uniform,
    iter_sign_chunks,
    population_expectation,
    position_count,
    random_kpattern,
    random_parity,
    random_permutation_fixing,
    sample,
    sign_vectors,
)


class TestSignVectors:
    def test_index_convention(self):
        X = sign_vectors(3)
        assert np.array_equal(X[0], [1, 1, 1])
        assert np.array_equal(X[1], [-1, 1, 1])  # bit 0 set -> coordinate 1 is -1
        assert np.array_equal(X[6], [1, -1, -1])

    def test_cap(self):
        with pytest.raises(CapacityError):
            sign_vectors(25)

    def test_chunks_cover_in_order(self):
        full = sign_vectors(6)
        rebuilt = np.concatenate([chunk for _, chunk in iter_sign_chunks(6)])
        assert np.array_equal(full, rebuilt)


class TestKPattern:
    def test_hand_evaluation(self):
        # AND-style table on k=2: +1 only on (+1, +1), which is index 0
        table = np.array([1.0, -1.0, -1.0, -1.0])
        f = KPattern(n=4, k=2, jstar=2, table=table)
        assert f.evaluate(np.array([-1.0, 1.0, 1.0, -1.0])) == 1.0
        assert f.evaluate(np.array([1.0, -1.0, 1.0, -1.0])) == -1.0

    def test_constant_pattern(self):
        f = KPattern(n=5, k=2, jstar=1, table=np.ones(4))
        X = sign_vectors(5)
        assert np.all(f.evaluate(X) == 1.0)

    def test_against_direct_lookup_oracle(self):
        rng = Rng(2)
        f = random_kpattern(rng, n=8, k=3)
        X = sign_vectors(8)
        got = f.evaluate(X)
        # oracle: explicit per-row window lookup with its own bit packing
        for row, expect in zip(X, got):
            window = row[f.jstar - 1 : f.jstar - 1 + f.k]
            idx = sum((1 << i) for i, v in enumerate(window) if v < 0)
            assert f.table[idx] == expect

    def test_validation(self):
        with pytest.raises(ValueError):
            KPattern(n=4, k=2, jstar=4, table=np.ones(4))
        with pytest.raises(ValueError):
            KPattern(n=4, k=2, jstar=1, table=np.array([1.0, 0.5, 1.0, 1.0]))
        with pytest.raises(ValueError):
            KPattern(n=4, k=2, jstar=1, table=np.ones(3))

    def test_length_mismatch(self):
        f = KPattern(n=4, k=2, jstar=1, table=np.ones(4))
        with pytest.raises(ValueError):
            f.evaluate(np.ones(5))


class TestParity:
    def test_hand_values(self):
        chi = Parity.of_indices(3, [1, 2])
        assert chi.evaluate(np.array([1.0, -1.0, 1.0])) == -1.0
        chi1 = Parity.of_indices(3, [1])
        X = sign_vectors(3)
        assert np.array_equal(chi1.evaluate(X), X[:, 0])

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            Parity(4, 0)
        with pytest.raises(ValueError):
            Parity(3, 1 << 3)

    def test_consecutive_embedding_matches_pattern(self):
        rng = Rng(9)
        for trial in range(10):
            n = 10
            k = int(rng.split(trial).integers(1, 5))
            j = int(rng.split(100 + trial).integers(1, n - k + 2))
            chi = Parity.consecutive(n, k, j)
            assert chi.is_consecutive
            f = chi.as_kpattern()
            X = sign_vectors(n)
            assert np.array_equal(chi.evaluate(X), f.evaluate(X))

    def test_random_parity_cross_check(self):
        rng = Rng(4)
        chi = random_parity(rng, 10, 4)
        if chi.is_consecutive:
            f = chi.as_kpattern()
            X = sign_vectors(10)
            assert np.array_equal(chi.evaluate(X), f.evaluate(X))
        else:
            with pytest.raises(ValueError):
                chi.as_kpattern()


class TestPermutation:
    def test_identity(self):
        pi = Permutation.identity(5)
        x = Rng(0).signs(5)
        assert np.array_equal(pi.apply(x), x)

    def test_swap_set_image(self):
        pi = Permutation.of_mapping({2: 3, 3: 2}, n=4)
        assert pi.permute_set(subset_mask([1, 2])) == subset_mask([1, 3])

    def test_character_identity_exhaustive(self):
        rng = Rng(8)
        n = 8
        pi = random_permutation_fixing(rng, n, j=5)
        mask = subset_mask([1, 2, 6])
        chi_I = Parity(n, mask)
        chi_pi_I = Parity(n, pi.permute_set(mask))
        X = sign_vectors(n)
        assert np.array_equal(chi_I.evaluate(pi.apply(X)), chi_pi_I.evaluate(X))

    def test_inverse(self):
        pi = random_permutation_fixing(Rng(3), 7, j=2)
        X = sign_vectors(7)[:17]
        assert np.array_equal(pi.inverse().apply(pi.apply(X)), X)

    def test_not_a_permutation(self):
        with pytest.raises(ValueError):
            Permutation(np.array([0, 0, 1]))


class TestDistributions:
    def test_odd_monomial_exact_zero(self):
        chi = Parity.of_indices(5, [1])
        assert population_expectation(chi.evaluate, Uniform(5)) == 0.0

    def test_character_orthonormality(self):
        n = 6
        chi_a = Parity.of_indices(n, [1, 3])
        chi_b = Parity.of_indices(n, [2, 3, 5])
        prod = lambda X: chi_a.evaluate(X) * chi_b.evaluate(X)
        assert population_expectation(prod, Uniform(n)) == 0.0
        same = lambda X: chi_a.evaluate(X) * chi_a.evaluate(X)
        assert population_expectation(same, Uniform(n)) == 1.0

    def test_hinge_of_zero_network(self):
        # ell(0, y) = 1 exactly for every input
        fn = lambda X: np.maximum(1.0 - 0.0 * X[:, 0], 0.0)
        assert population_expectation(fn, Uniform(4)) == 1.0

    def test_capacity_guard(self):
        with pytest.raises(CapacityError):
            population_expectation(lambda X: X[:, 0], Uniform(25))

    def test_monte_carlo_mode(self):
        chi = Parity.of_indices(6, [2])
        mean, se = population_expectation(
            chi.evaluate, Uniform(6), mc_samples=4000, rng=Rng(1)
        )
        assert abs(mean) < 5 * se + 0.05
        assert se > 0

    def test_empirical(self):
        pts = np.array([[1.0, -1.0], [1.0, 1.0]])
        dist = Empirical(pts)
        assert population_expectation(lambda X: X[:, 1], dist) == 0.0
        with pytest.raises(ValueError):
            Empirical(np.zeros((0, 3)))

    def test_sample_shapes(self):
        X = sample(Uniform(5), 10, Rng(0))
        assert X.shape == (10, 5)
        assert set(np.unique(X)) <= {-1.0, 1.0}


class TestRandomGenerators:
    def test_kpattern_forced_jstar(self):
        f = random_kpattern(Rng(0), n=6, k=6)
        assert f.jstar == 1

    def test_kpattern_deterministic(self):
        a = random_kpattern(Rng(42), 10, 3)
        b = random_kpattern(Rng(42), 10, 3)
        assert a.jstar == b.jstar and np.array_equal(a.table, b.table)

    def test_permutation_fixing_distribution(self):
        # all draws fix j; images of index 1 roughly uniform over the rest
        rng = Rng(17)
        n, j = 6, 3
        counts = np.zeros(n)
        draws = 10_000
        for t in range(draws):
            pi = random_permutation_fixing(rng.split(t), n, j)
            assert pi.fixes(j)
            counts[int(pi.perm[0])] += 1
        # index 1 maps uniformly over the n-1 non-fixed slots; binomial
        # sanity check per cell
        expected = draws / (n - 1)
        for slot in range(n):
            if slot == j - 1:
                assert counts[slot] == 0
                continue
            sd = np.sqrt(draws * (1 / (n - 1)) * (1 - 1 / (n - 1)))
            assert abs(counts[slot] - expected) < 4 * sd


def test_position_count():
    assert position_count(12, 3) == 10
    assert position_count(5, 5) == 1
    with pytest.raises(ValueError):
        position_count(4, 5)
