"""Model construction, clamping transforms, and file formats.

Derived expectations come from independent re-computation: potentials from
an explicit pair loop, clamped log Z values from raw partial sums over
states with itertools, never from the code under test.
"""

import itertools
import math

import numpy as np
import pytest

from bmapprox.model import (
    BoltzmannModel,
    ModelFormatError,
    PatternSet,
    chain_edges,
    clamp_to_one,
    condition_on_visibles,
    load_model,
    load_patterns,
    load_structure,
    potential,
    random_model,
    save_model,
    save_patterns,
)


def raw_potential(model, s):
    """Independent evaluation: explicit loops, pair terms summed over i < j."""
    value = model.constant
    for i in range(model.n):
        value += model.bias[i] * s[i]
        for j in range(i + 1, model.n):
            value += model.coupling[i, j] * s[i] * s[j]
    return value


def raw_log_partial_sum(model, fixed):
    """log sum of exp(potential) over all states agreeing with ``fixed``.

    fixed maps node index -> 0/1. Enumerates with itertools, sums in the
    exp domain after subtracting the max.
    """
    free = [i for i in range(model.n) if i not in fixed]
    values = []
    for bits in itertools.product((0, 1), repeat=len(free)):
        s = np.zeros(model.n)
        for i, v in fixed.items():
            s[i] = v
        for i, v in zip(free, bits):
            s[i] = v
        values.append(raw_potential(model, s))
    top = max(values)
    return top + math.log(sum(math.exp(v - top) for v in values))


class TestPotential:
    def test_zero_model(self):
        model = BoltzmannModel(np.zeros(4), np.zeros((4, 4)))
        for bits in itertools.product((0, 1), repeat=4):
            assert potential(model, np.array(bits, dtype=float)) == 0.0

    def test_hand_sum_n2(self):
        coupling = np.array([[0.0, 3.0], [3.0, 0.0]])
        model = BoltzmannModel(np.array([1.0, 2.0]), coupling)
        assert potential(model, [1, 1]) == pytest.approx(6.0)
        assert potential(model, [1, 0]) == pytest.approx(1.0)
        assert potential(model, [0, 0]) == pytest.approx(0.0)

    def test_matches_independent_loop(self):
        rng = np.random.default_rng(11)
        for seed in range(20):
            model = random_model(8, "full", 1.0, seed)
            s = rng.integers(0, 2, 8).astype(float)
            assert potential(model, s) == pytest.approx(raw_potential(model, s), abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        for seed in range(10):
            model = random_model(6, "full", 1.0, seed)
            s = rng.integers(0, 2, 6).astype(float)
            perm = rng.permutation(6)
            permuted = BoltzmannModel(
                model.bias[perm], model.coupling[np.ix_(perm, perm)], model.constant
            )
            assert potential(permuted, s[perm]) == pytest.approx(
                potential(model, s), abs=1e-12
            )

    def test_length_mismatch(self):
        model = random_model(4, "full", 1.0, 0)
        with pytest.raises(ValueError):
            potential(model, [0, 1, 0])

    def test_non_binary_state(self):
        model = random_model(3, "full", 1.0, 0)
        with pytest.raises(ValueError):
            potential(model, [0.5, 0, 1])


class TestRandomModel:
    def test_sigma_zero_gives_zero_parameters(self):
        model = random_model(8, "full", 0.0, 123)
        assert np.all(model.bias == 0.0)
        assert np.all(model.coupling == 0.0)

    def test_determinism(self):
        a = random_model(8, "full", 1.0, 42)
        b = random_model(8, "full", 1.0, 42)
        assert np.array_equal(a.bias, b.bias)
        assert np.array_equal(a.coupling, b.coupling)

    def test_unit_variance_over_seeds(self):
        # 36 parameters per model (8 biases + 28 couplings), pooled over seeds.
        draws = []
        for seed in range(10_000):
            model = random_model(8, "full", 1.0, seed)
            draws.extend(model.bias)
            draws.extend(model.coupling[i, j] for i in range(8) for j in range(i + 1, 8))
        assert np.var(draws, ddof=1) == pytest.approx(1.0, abs=0.05)

    def test_chain_topology(self):
        model = random_model(6, "chain", 1.0, 3)
        for i in range(6):
            for j in range(i + 1, 6):
                if j == i + 1:
                    assert model.coupling[i, j] != 0.0
                else:
                    assert model.coupling[i, j] == 0.0

    def test_custom_edges(self):
        model = random_model(5, "custom", 1.0, 9, edges=[(0, 3), (4, 1)])
        assert model.coupling[0, 3] != 0.0
        assert model.coupling[1, 4] != 0.0
        assert model.coupling[0, 1] == 0.0

    def test_bad_edges(self):
        with pytest.raises(ValueError):
            random_model(5, "custom", 1.0, 0, edges=[(2, 2)])
        with pytest.raises(ValueError):
            random_model(5, "custom", 1.0, 0, edges=[(0, 7)])
        with pytest.raises(ValueError):
            random_model(5, "custom", 1.0, 0, edges=[(0, 1), (1, 0)])

    def test_symmetry_and_zero_diagonal(self):
        model = random_model(7, "full", 2.0, 77)
        assert np.array_equal(model.coupling, model.coupling.T)
        assert np.all(np.diag(model.coupling) == 0.0)


class TestClampToOne:
    def test_zero_coupling_folds_bias_only(self):
        model = BoltzmannModel(np.array([0.5, -1.0, 2.0]), np.zeros((3, 3)))
        reduced = clamp_to_one(model, {1})
        assert reduced.constant == pytest.approx(-1.0)
        assert np.allclose(reduced.bias, [0.5, 2.0])
        assert reduced.parent_index == (0, 2)

    def test_log_z_identity_n3(self):
        model = random_model(3, "full", 1.0, 17)
        reduced = clamp_to_one(model, {0})
        want = raw_log_partial_sum(model, {0: 1})
        got = raw_log_partial_sum(reduced, {})
        assert got == pytest.approx(want, abs=1e-12)

    def test_pair_constant_counts_coupling_once(self):
        model = random_model(5, "full", 1.0, 8)
        reduced = clamp_to_one(model, {1, 3})
        expected = model.bias[1] + model.bias[3] + model.coupling[1, 3]
        assert reduced.constant == pytest.approx(expected, abs=1e-12)

    def test_composition(self):
        model = random_model(6, "full", 1.0, 21)
        joint = clamp_to_one(model, {1, 4})
        step1 = clamp_to_one(model, {1})
        # node 4 becomes index 3 after removing node 1
        step2 = clamp_to_one(step1, {3})
        assert joint.parent_index == step2.parent_index
        assert joint.constant == pytest.approx(step2.constant, abs=1e-12)
        assert np.allclose(joint.bias, step2.bias, atol=1e-12)
        assert np.array_equal(joint.coupling, step2.coupling)

    def test_log_z_identity_sweep(self):
        rng = np.random.default_rng(99)
        for seed in range(15):
            model = random_model(6, "full", 1.0, seed)
            size = rng.integers(1, 5)
            nodes = rng.choice(6, size=size, replace=False)
            reduced = clamp_to_one(model, set(int(i) for i in nodes))
            want = raw_log_partial_sum(model, {int(i): 1 for i in nodes})
            got = raw_log_partial_sum(reduced, {})
            assert abs(got - want) < 1e-12

    def test_clamp_all_nodes(self):
        model = random_model(3, "full", 1.0, 4)
        reduced = clamp_to_one(model, {0, 1, 2})
        assert reduced.n == 0
        want = raw_potential(model, np.ones(3))
        assert reduced.constant == pytest.approx(want, abs=1e-12)

    def test_out_of_range(self):
        model = random_model(3, "full", 1.0, 0)
        with pytest.raises(ValueError):
            clamp_to_one(model, {5})


class TestConditionOnVisibles:
    def test_all_zero_values_keep_hidden_network(self):
        model = random_model(5, "full", 1.0, 31)
        reduced = condition_on_visibles(model, [0, 1], [0, 0])
        assert np.allclose(reduced.bias, model.bias[2:])
        assert np.array_equal(reduced.coupling, model.coupling[2:, 2:])
        assert reduced.constant == pytest.approx(model.constant)

    def test_single_one_shifts_biases(self):
        model = random_model(4, "full", 1.0, 32)
        reduced = condition_on_visibles(model, [2], [1])
        keep = [0, 1, 3]
        assert np.allclose(reduced.bias, model.bias[keep] + model.coupling[keep, 2])

    def test_conditional_enumeration_matches(self):
        rng = np.random.default_rng(70)
        for seed in range(10):
            model = random_model(6, "full", 1.0, seed)
            visible = [0, 2, 5]
            values = rng.integers(0, 2, 3)
            reduced = condition_on_visibles(model, visible, values)
            fixed = dict(zip(visible, (int(v) for v in values)))
            assert raw_log_partial_sum(reduced, {}) == pytest.approx(
                raw_log_partial_sum(model, fixed), abs=1e-12
            )

    def test_overlap_rejected(self):
        model = random_model(4, "full", 1.0, 0)
        with pytest.raises(ValueError):
            condition_on_visibles(model, [1, 1], [0, 1])


class TestValidation:
    def test_asymmetric_coupling_rejected(self):
        coupling = np.zeros((2, 2))
        coupling[0, 1] = 1.0
        with pytest.raises(ValueError):
            BoltzmannModel(np.zeros(2), coupling)

    def test_nonzero_diagonal_rejected(self):
        coupling = np.eye(3)
        with pytest.raises(ValueError):
            BoltzmannModel(np.zeros(3), coupling)

    def test_immutable_arrays(self):
        model = random_model(3, "full", 1.0, 0)
        with pytest.raises(ValueError):
            model.bias[0] = 5.0


class TestModelFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        model = random_model(7, "full", 1.0, 55)
        shifted = BoltzmannModel(model.bias, model.coupling, constant=0.125)
        path = tmp_path / "m.bmtx"
        save_model(shifted, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.bias, shifted.bias)
        assert np.array_equal(loaded.coupling, shifted.coupling)
        assert loaded.constant == shifted.constant

    def test_defaults_and_comments(self, tmp_path):
        path = tmp_path / "m.bmtx"
        path.write_text("# comment\n\nbm 3\nb 1 2.5\nw 0 2 -1.0\n")
        model = load_model(path)
        assert model.n == 3
        assert model.bias[1] == 2.5
        assert model.bias[0] == 0.0
        assert model.coupling[0, 2] == -1.0
        assert model.constant == 0.0

    @pytest.mark.parametrize(
        "text",
        [
            "b 0 1.0\n",  # missing header
            "bm 2\nb 5 1.0\n",  # index out of range
            "bm 2\nw 0 0 1.0\n",  # self-coupling
            "bm 3\nw 0 1 1.0\nw 1 0 2.0\n",  # duplicate pair
            "bm 2\nc 1.0\nc 2.0\n",  # duplicate constant
            "bm 2\nq 0 1\n",  # unknown record
            "bm 2\nb 0 abc\n",  # bad float
        ],
    )
    def test_parse_errors(self, tmp_path, text):
        path = tmp_path / "bad.bmtx"
        path.write_text(text)
        with pytest.raises(ModelFormatError):
            load_model(path)

    def test_error_names_line(self, tmp_path):
        path = tmp_path / "bad.bmtx"
        path.write_text("bm 2\nb 0 1.0\nw 0 0 1.0\n")
        with pytest.raises(ModelFormatError, match="line 3"):
            load_model(path)

    def test_structure_load(self, tmp_path):
        path = tmp_path / "s.bmtx"
        path.write_text("bm 4\nw 2 3 0\nw 0 1 0\n")
        n, edges = load_structure(path)
        assert n == 4
        assert edges == ((0, 1), (2, 3))


class TestPatternFiles:
    def test_round_trip(self, tmp_path):
        ps = PatternSet(4, np.array([[0, 1, 1, 0], [1, 1, 1, 1], [0, 0, 0, 0]]))
        path = tmp_path / "p.pat"
        save_patterns(ps, path)
        loaded = load_patterns(path)
        assert loaded.visible_count == 4
        assert np.array_equal(loaded.patterns, ps.patterns)

    def test_bad_width(self, tmp_path):
        path = tmp_path / "p.pat"
        path.write_text("pat 3\n0 1\n")
        with pytest.raises(ModelFormatError):
            load_patterns(path)

    def test_bad_token(self, tmp_path):
        path = tmp_path / "p.pat"
        path.write_text("pat 2\n0 2\n")
        with pytest.raises(ModelFormatError):
            load_patterns(path)


def test_chain_edges_shape():
    assert chain_edges(4) == ((0, 1), (1, 2), (2, 3))
    assert chain_edges(1) == ()
