from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import exact_envelopes, normal_equations

from lil._blob import FormatError
from lil.core import SortedDataset, avg_log2_bound, lower_bounds, validate_index
from lil.datasets import DatasetSpec, gen_lookups, generate
from lil.rmi import (
    CubicModel,
    LinearModel,
    ModelKind,
    RmiConfig,
    TrainedRmi,
    fit_cubic,
    fit_linear,
    leaf_index,
    rmi_lookup,
    rmi_size_bytes,
    train_rmi,
)


def ds(keys):
    keys = np.asarray(keys, dtype=np.uint64)
    return SortedDataset(keys, np.zeros(keys.shape[0], np.uint64))


CONFIGS = [("linear", "linear"), ("linear", "cubic"), ("cubic", "linear"), ("cubic", "cubic")]

small_sets = st.lists(st.integers(0, 700), min_size=2, max_size=80, unique=True).map(sorted)


class TestFitLinear:
    def test_collinear(self):
        m = fit_linear([(0, 0), (1, 1), (2, 2)])
        assert m.slope == pytest.approx(1.0) and m.predict(0) == pytest.approx(0.0)

    def test_single_point(self):
        assert fit_linear([(5, 7)]) == LinearModel(0.0, 7.0, 5)

    def test_normal_equations(self):
        pts = [(0, 0), (2, 1), (4, 4)]
        slope, intercept = normal_equations(pts)
        m = fit_linear(pts)
        assert (slope, intercept) == (Fraction(1), Fraction(-1, 3))
        assert m.slope == pytest.approx(float(slope))
        assert m.predict(0) == pytest.approx(float(intercept))

    @given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 1000)), min_size=2, max_size=30,
                    unique_by=lambda p: p[0]))
    def test_matches_exact_least_squares(self, pts):
        pts = sorted(pts)
        slope, intercept = normal_equations(pts)
        m = fit_linear(pts)
        assert m.slope == pytest.approx(float(slope), rel=1e-9, abs=1e-12)
        assert m.predict(0) == pytest.approx(float(intercept), rel=1e-6, abs=1e-6)

    def test_large_keys_keep_precision(self):
        base = (1 << 63) + 12345
        m = fit_linear([(base + i, i) for i in range(10)])
        assert m.slope == pytest.approx(1.0) and m.predict(base + 4) == pytest.approx(4.0)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fit_linear([])


class TestFitCubic:
    def test_collinear_gives_line(self):
        pts = [(x, 3 * x + 2) for x in range(0, 50, 5)]
        m = fit_cubic(pts)
        assert abs(m.a) < 1e-8 and abs(m.b) < 1e-8
        for x, y in pts:
            assert m.predict(x) == pytest.approx(y, abs=1e-8)

    def test_three_points_is_linear_fallback(self):
        pts = [(0, 0), (2, 1), (4, 4)]
        m = fit_cubic(pts)
        lin = fit_linear(pts)
        assert m.a == 0 and m.b == 0
        for x in range(0, 5):
            assert m.predict(x) == pytest.approx(lin.predict(x))

    def test_recovers_cubic(self):
        xs = np.arange(0, 1001, 7, dtype=np.uint64)
        t = xs / 994.0
        ys = t**3
        m = fit_cubic((xs, ys))
        assert max(abs(m.predict(int(x)) - y) for x, y in zip(xs, ys)) < 1e-6

    def test_keys_normalized(self):
        m = fit_cubic([(100, 0), (200, 1), (300, 2), (500, 3)])
        assert m.origin == 100 and m.scale == pytest.approx(1 / 400)


def manual_rmi(slope, intercept, n=100, b=4):
    cfg = RmiConfig("linear", "linear", b)
    s1 = np.array([1.0, 0.0, 0.0, slope, intercept])
    leaves = np.tile(np.array([1.0, 0.0, 0.0, 0.0, 0.0]), (b, 1))
    zeros = np.zeros(b, np.int64)
    return TrainedRmi(cfg, 0, s1, np.zeros(b, np.uint64), leaves, zeros, zeros, n, 0, 10**6)


class TestLeafIndex:
    @pytest.mark.parametrize("x, want", [(60, 2), (130, 3), (0, 0), (99, 3), (25, 1)])
    def test_identity_stage1(self, x, want):
        # f1(x) = x and n = 100, so f1(x) / n = x / 100
        assert leaf_index(manual_rmi(1.0, 0.0), x) == want

    def test_negative_prediction_clamps_to_zero(self):
        # f1(0) / n = -0.2
        assert leaf_index(manual_rmi(1.0, -20.0), 0) == 0


class TestTrain:
    def test_uniform_single_leaf_is_exact(self):
        d = ds(np.arange(1000))
        r = train_rmi(d, RmiConfig("linear", "linear", 1))
        (env,) = r.leaf_env
        assert env.under <= 1 and env.over <= 1

    def test_single_leaf_is_global_linear_model(self):
        d = generate(DatasetSpec("lognormal", 5000, 3))
        r = train_rmi(d, RmiConfig("linear", "linear", 1))
        glob = fit_linear((d.keys, np.arange(d.n, dtype=np.float64)))
        (leaf,) = r.leaves
        assert leaf == glob
        q = gen_lookups(d, 2000, 1, "uniform").queries
        env = r.leaf_env[0]
        est = np.clip(np.floor(np.array([glob.predict(int(x)) for x in q]) + 0.5), 0, d.n).astype(np.int64)
        lo, hi = r.lookup_many(q)
        assert np.array_equal(lo, np.maximum(est - env.under, 0))
        assert np.array_equal(hi, np.minimum(est + env.over + 1, d.n + 1))

    def test_rejects_zero_branching(self):
        with pytest.raises(ValueError):
            RmiConfig("linear", "linear", 0)

    def test_unknown_model_kind(self):
        with pytest.raises(ValueError, match="unknown model kind"):
            RmiConfig("quadratic", "linear", 2)

    def test_empty_leaf_predicts_partition_start(self):
        # two tight clusters far apart leave the middle leaves empty
        keys = np.concatenate([np.arange(0, 50), np.arange(10**9, 10**9 + 50)])
        d = ds(keys)
        r = train_rmi(d, RmiConfig("linear", "linear", 16))
        routed = np.bincount(r.leaf_index_many(d.keys), minlength=16)
        empty = np.flatnonzero(routed == 0)
        assert empty.size > 0
        starts = np.concatenate([[0], np.cumsum(routed)[:-1]])
        for j in empty:
            leaf = r.leaves[j]
            assert leaf.slope == 0 and leaf.intercept == starts[j]
        assert validate_index(r, d, np.arange(0, 10**9 + 60, 10**6, dtype=np.uint64)).violations == 0

    def test_deterministic(self):
        d = generate(DatasetSpec("lognormal", 20000, 9))
        for s1, s2 in CONFIGS:
            cfg = RmiConfig(s1, s2, 32)
            assert train_rmi(d, cfg).to_bytes() == train_rmi(d, cfg).to_bytes()

    def test_more_leaves_do_not_hurt_on_average(self):
        d = generate(DatasetSpec("lognormal", 100_000, 5))
        q = gen_lookups(d, 10_000, 2).queries
        one = avg_log2_bound(*train_rmi(d, RmiConfig("linear", "linear", 1)).lookup_many(q))
        many = avg_log2_bound(*train_rmi(d, RmiConfig("linear", "linear", 256)).lookup_many(q))
        assert many <= one


class TestEnvelopes:
    @settings(max_examples=60)
    @given(small_sets, st.integers(1, 9), st.sampled_from(CONFIGS))
    def test_exact_over_every_query(self, keys, b, kinds):
        """Envelopes equal the brute-force maxima over every integer in the key range."""
        d = ds(keys)
        r = train_rmi(d, RmiConfig(kinds[0], kinds[1], b))
        brute = exact_envelopes(r.leaf_index, lambda x: r.estimate(x)[1], keys)
        for j, env in enumerate(r.leaf_env):
            assert tuple(env) == brute.get(j, (0, 0))

    @settings(max_examples=40)
    @given(small_sets, st.integers(1, 9), st.sampled_from(CONFIGS))
    def test_shrinking_any_envelope_breaks_a_lookup(self, keys, b, kinds):
        d = ds(keys)
        r = train_rmi(d, RmiConfig(kinds[0], kinds[1], b))
        xs = np.arange(keys[0], keys[-1] + 1, dtype=np.uint64)
        truth = lower_bounds(d, xs)
        leaf = r.leaf_index_many(xs)
        est = np.array([r.estimate(int(x))[1] for x in xs])
        for j, env in enumerate(r.leaf_env):
            mine = leaf == j
            if env.under > 0:
                assert np.any(truth[mine] < est[mine] - (env.under - 1))
            if env.over > 0:
                assert np.any(truth[mine] > est[mine] + (env.over - 1))

    def test_training_pairs_within_envelope(self):
        d = generate(DatasetSpec("outlier_tail", 20_000, 4))
        r = train_rmi(d, RmiConfig("linear", "cubic", 64))
        for i in range(0, d.n, 97):
            j, est = r.estimate(int(d.keys[i]))
            env = r.leaf_env[j]
            assert est - env.under <= i <= est + env.over


class TestLookup:
    @settings(max_examples=80)
    @given(st.lists(st.integers(0, 2**64 - 1), min_size=2, max_size=200, unique=True).map(sorted),
           st.integers(1, 64), st.sampled_from(CONFIGS), st.lists(st.integers(0, 2**64 - 1), max_size=50))
    def test_valid_for_any_query(self, keys, b, kinds, extra):
        d = ds(keys)
        r = train_rmi(d, RmiConfig(kinds[0], kinds[1], b))
        q = np.array(keys + extra + [0, 2**64 - 1] + [k + 1 for k in keys if k < 2**64 - 1], dtype=np.uint64)
        assert validate_index(r, d, q).violations == 0

    @pytest.mark.parametrize("kind", ["uniform", "lognormal", "outlier_tail"])
    def test_valid_at_scale(self, kind):
        d = generate(DatasetSpec(kind, 200_000, 11))
        for s1, s2 in CONFIGS:
            r = train_rmi(d, RmiConfig(s1, s2, 128))
            for mode in ("existing", "uniform"):
                assert validate_index(r, d, gen_lookups(d, 20_000, 3, mode).queries).violations == 0

    def test_out_of_range_queries(self):
        d = ds([100, 200, 300])
        r = train_rmi(d, RmiConfig("linear", "linear", 2))
        assert 0 in rmi_lookup(r, 5)
        assert 3 in rmi_lookup(r, 301)
        assert 0 in r.lookup(100)


class TestSizeAndFormat:
    def test_size_accounting(self):
        d = generate(DatasetSpec("uniform", 5000, 1))
        assert rmi_size_bytes(train_rmi(d, RmiConfig("linear", "linear", 1))) == 64
        assert rmi_size_bytes(train_rmi(d, RmiConfig("linear", "linear", 100))) == 3232
        a = train_rmi(d, RmiConfig("linear", "linear", 50)).size_bytes()
        b = train_rmi(d, RmiConfig("linear", "linear", 100)).size_bytes()
        assert b - 32 == 2 * (a - 32)
        assert train_rmi(d, RmiConfig("cubic", "cubic", 10)).size_bytes() == 32 + 10 * 48 + 16

    @pytest.mark.parametrize("kinds", CONFIGS)
    def test_round_trip(self, kinds):
        d = generate(DatasetSpec("lognormal", 5000, 2))
        r = train_rmi(d, RmiConfig(kinds[0], kinds[1], 16))
        blob = r.to_bytes()
        assert blob[:4] == b"RMI1"
        back = TrainedRmi.from_bytes(blob)
        assert back.to_bytes() == blob
        q = gen_lookups(d, 1000, 1, "uniform").queries
        assert all(np.array_equal(a, b) for a, b in zip(r.lookup_many(q), back.lookup_many(q)))

    def test_corrupt_blob(self):
        d = ds([1, 2, 3])
        blob = train_rmi(d, RmiConfig()).to_bytes()
        with pytest.raises(FormatError):
            TrainedRmi.from_bytes(b"XXXX" + blob[4:])
        with pytest.raises(FormatError):
            TrainedRmi.from_bytes(blob[:-3])

    def test_model_views(self):
        d = generate(DatasetSpec("uniform", 1000, 2))
        r = train_rmi(d, RmiConfig("cubic", "linear", 4))
        assert isinstance(r.stage1, CubicModel)
        assert all(isinstance(m, LinearModel) for m in r.leaves)
        assert r.cfg.stage1 == ModelKind.CUBIC
