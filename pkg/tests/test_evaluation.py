import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_act_dcf, brute_cllr, brute_eer, brute_min_dcf
from spkver.corpus import ScoreSet, TrialFileError, TrialList
from spkver.evaluation import (
    CalibrationModel,
    DcfParams,
    FusionModel,
    ScoreNorm,
    act_dcf,
    calibrate,
    calibration_objective,
    cllr,
    det_points,
    eer,
    empirical_weights,
    fuse,
    min_dcf,
    report,
    run_strategy,
    split_devset,
)

seeds = st.integers(0, 10**6)


def _random_set(rng, n=None):
    n = int(rng.integers(2, 51)) if n is None else n
    key = rng.random(n) < rng.uniform(0.1, 0.9)
    key[0], key[1] = True, False
    # coarse rounding makes ties common
    scores = np.round(rng.normal(0, 2, n) + key * rng.uniform(0, 3), int(rng.integers(0, 3)))
    return scores, key


def _gaussian_llrs(rng, n_tar=4000, n_non=4000, d=2.0):
    """Scores that are exact LLRs: targets ~ N(d/2, d), nontargets ~ N(-d/2, d)."""
    s = np.concatenate([rng.normal(d / 2, np.sqrt(d), n_tar), rng.normal(-d / 2, np.sqrt(d), n_non)])
    return s, np.arange(n_tar + n_non) < n_tar


class TestMetricsAgainstOracles:
    def test_thousand_random_sets(self):
        rng = np.random.default_rng(2024)
        params = DcfParams(0.05, 1.0, 1.0)
        for _ in range(1000):
            s, k = _random_set(rng)
            assert abs(eer(s, k) - brute_eer(s, k)) < 1e-10
            assert abs(min_dcf(s, k, params)[0] - brute_min_dcf(s, k, 0.05)) < 1e-10
            assert abs(act_dcf(s, k, params) - brute_act_dcf(s, k, 0.05)) < 1e-10
            assert abs(cllr(s, k) - brute_cllr(s, k)) < 1e-10

    @given(seeds, st.floats(0.001, 0.5), st.floats(0.1, 10), st.floats(0.1, 10))
    def test_min_dcf_oracle_any_costs(self, seed, p, cm, cf):
        s, k = _random_set(np.random.default_rng(seed), 20)
        assert abs(min_dcf(s, k, DcfParams(p, cm, cf))[0] - brute_min_dcf(s, k, p, cm, cf)) < 1e-10


class TestEer:
    def test_cases(self):
        assert eer([3, 4, 5, 1, 2, 3.5], [1, 1, 1, 0, 0, 0]) == pytest.approx(1 / 3)
        assert eer([5, 6, 1, 2], [1, 1, 0, 0]) == 0.0
        assert eer([5, 6, 1, 2], [0, 0, 1, 1]) == 1.0

    def test_errors(self):
        with pytest.raises(ValueError):
            eer([1.0, 2.0], [True, True])
        with pytest.raises(ValueError):
            eer([1.0, 2.0], [True])

    @given(seeds)
    def test_label_swap_symmetry(self, seed):
        s, k = _random_set(np.random.default_rng(seed))
        assert eer(-s, ~k) == pytest.approx(eer(s, k), abs=1e-12)

    @given(seeds)
    def test_monotone_transform_invariance(self, seed):
        s, k = _random_set(np.random.default_rng(seed))
        t = np.exp(0.5 * s) + 3 * s
        assert eer(t, k) == pytest.approx(eer(s, k), abs=1e-12)
        assert min_dcf(t, k)[0] == pytest.approx(min_dcf(s, k)[0], abs=1e-12)


class TestDcf:
    def test_cases(self):
        assert min_dcf([5, 6, 1, 2], [1, 1, 0, 0])[0] == 0.0
        assert min_dcf(np.zeros(6), [1, 0, 1, 0, 0, 0])[0] == pytest.approx(1.0)
        assert act_dcf([1e6, 1e6, -1e6], [1, 1, 0]) == 0.0
        assert DcfParams().bayes_threshold == pytest.approx(4.59512, abs=1e-5)
        assert act_dcf(np.zeros(4), [1, 0, 1, 0]) == pytest.approx(1.0)

    def test_threshold_achieves_minimum(self, rng):
        s, k = _random_set(rng, 40)
        value, th = min_dcf(s, k)
        p_miss, p_fa = np.mean(s[k] < th), np.mean(s[~k] >= th)
        assert value == pytest.approx((0.01 * p_miss + 0.99 * p_fa) / 0.01)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            DcfParams(p_target=1.0)
        with pytest.raises(ValueError):
            DcfParams(c_fa=0.0)

    @given(seeds, st.floats(0.001, 0.5))
    def test_min_never_exceeds_act(self, seed, p):
        s, k = _random_set(np.random.default_rng(seed))
        params = DcfParams(p)
        assert min_dcf(s, k, params)[0] <= act_dcf(s, k, params) + 1e-12
        assert min_dcf(s, k, params)[0] <= 1.0 + 1e-12


class TestCllr:
    def test_cases(self):
        assert cllr(np.zeros(4), [1, 0, 1, 0]) == pytest.approx(1.0)
        assert cllr([1e6, -1e6], [1, 0]) == pytest.approx(0.0, abs=1e-12)
        assert cllr([np.log(3), np.log(1 / 3)], [1, 0]) == pytest.approx(np.log(4 / 3) / np.log(2))

    def test_report_fields(self, rng):
        s, k = _random_set(rng, 30)
        out = report(s, k)
        assert set(out) == {"eer", "min_dcf", "act_dcf", "cllr", "n_target", "n_nontarget"}
        assert out["n_target"] + out["n_nontarget"] == 30
        assert "cllr" not in report(s, k, llr=False)

    def test_det_points(self):
        pts = det_points([1.0, 2.0, 3.0], [0, 1, 1])
        assert pts[0] == (1.0, 1.0, 0.0) and pts[-1] == (float("inf"), 0.0, 1.0)
        pfa = [p[1] for p in pts]
        pmiss = [p[2] for p in pts]
        assert pfa == sorted(pfa, reverse=True) and pmiss == sorted(pmiss)


class TestCalibration:
    def test_recovers_identity_on_true_llrs(self, rng):
        s, k = _gaussian_llrs(rng)
        model = calibrate(s, k, 0.5)
        assert abs(model.a - 1) < 0.05 and abs(model.b) < 0.05

    def test_improves_affinely_distorted_llrs(self, rng):
        s, k = _gaussian_llrs(rng)
        distorted = 2 * s + 1
        model = calibrate(distorted, k, 0.5)
        assert cllr(model.apply(distorted), k) < cllr(distorted, k)
        assert abs(model.a - 0.5) < 0.03 and abs(model.b + 0.5) < 0.05

    def test_reversed_polarity(self, rng):
        s, k = _gaussian_llrs(rng)
        model = calibrate(-s, k, 0.5)
        assert model.a < 0 and cllr(model.apply(-s), k) < 1

    def test_constant_scores_carry_no_information(self):
        k = np.arange(20) < 5
        model = calibrate(np.full(20, 0.7), k, 0.5)
        llr = model.apply(np.full(20, 0.7))
        assert np.allclose(llr, 0, atol=1e-8)
        assert cllr(llr, k) == pytest.approx(1.0)

    def test_beats_grid(self, rng):
        s, k = _gaussian_llrs(rng, 300, 500, 3.0)
        s = 0.3 * s - 0.4
        model = calibrate(s, k, 0.5)
        best = cllr(model.apply(s), k)
        for a in np.linspace(-5, 5, 41):
            for b in np.linspace(-5, 5, 41):
                assert best <= cllr(a * s + b, k) + 1e-12

    @given(seeds, st.floats(0.01, 0.9))
    def test_objective_never_increases(self, seed, prior):
        s, k = _random_set(np.random.default_rng(seed), 40)
        history = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = calibrate(s, k, prior, history=history)
        assert all(b <= a + 1e-15 for a, b in zip(history, history[1:]))
        assert np.isfinite(model.a) and np.isfinite(model.b)

    def test_objective_is_one_bit_at_zero(self, rng):
        s, k = _random_set(rng, 30)
        assert calibration_objective(0.0, 0.0, s, k, 0.2) == pytest.approx(1.0)

    def test_separable_is_clipped(self):
        with pytest.warns(RuntimeWarning):
            model = calibrate([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1])
        assert max(abs(model.a), abs(model.b)) <= 100.0

    def test_errors(self):
        with pytest.raises(ValueError):
            calibrate([1.0, 2.0], [1, 1])
        with pytest.raises(ValueError):
            calibrate([1.0, 2.0], [1, 0], prior=0.0)
        with pytest.raises(ValueError):
            CalibrationModel(np.nan, 0.0)


def _score_set(trials, scores):
    return ScoreSet(trials, scores)


class TestFuse:
    def _trials(self, n):
        return tuple((f"m{i}", f"t{i}") for i in range(n))

    def test_single_equal_is_identity(self, rng):
        a = _score_set(self._trials(5), rng.standard_normal(5))
        out = fuse([a], FusionModel.equal(1))
        assert np.array_equal(out.scores, a.scores) and out.stage == "fused"

    def test_scaled_weights(self, rng):
        tr = self._trials(30)
        s, k = _random_set(rng, 30)
        a, b = _score_set(tr, s), _score_set(tr, rng.standard_normal(30))
        out = fuse([a, b], FusionModel((2.0, 0.0), "fixed"))
        assert np.allclose(out.scores, 2 * s)
        assert eer(out.scores, k) == pytest.approx(eer(s, k))
        same = fuse([a, a], FusionModel.equal(2))
        assert eer(same.scores, k) == pytest.approx(eer(s, k))

    @given(seeds, st.permutations(range(4)))
    def test_equal_weights_permutation_invariant(self, seed, order):
        rng = np.random.default_rng(seed)
        tr = self._trials(6)
        sets = [_score_set(tr, rng.standard_normal(6)) for _ in range(4)]
        base = fuse(sets, FusionModel.equal(4)).scores
        assert np.allclose(fuse([sets[i] for i in order], FusionModel.equal(4)).scores, base)

    def test_errors(self, rng):
        a = _score_set(self._trials(3), rng.standard_normal(3))
        b = _score_set(self._trials(3)[::-1], rng.standard_normal(3))
        with pytest.raises(TrialFileError):
            fuse([a, b], FusionModel.equal(2))
        with pytest.raises(ValueError):
            fuse([a], FusionModel.equal(2))
        with pytest.raises(ValueError):
            FusionModel((0.2, 0.3), "equal")
        with pytest.raises(ValueError):
            FusionModel((np.inf,), "fixed")

    def test_empirical_weights(self, rng):
        tr = self._trials(200)
        k = np.arange(200) < 50
        good = _score_set(tr, k * 3.0 + rng.standard_normal(200))
        bad = _score_set(tr, k * 0.5 + rng.standard_normal(200))
        model = empirical_weights([good, bad], k)
        assert sum(model.weights) == pytest.approx(1.0)
        assert model.weights[0] > model.weights[1]
        assert model.mode == "empirical"


def _dev_eval(rng, n_sys=2, n_dev=400, n_eval=300):
    dev_tr = tuple((f"m{i}", f"d{i}") for i in range(n_dev))
    ev_tr = tuple((f"m{i}", f"e{i}") for i in range(n_eval))
    kd = rng.random(n_dev) < 0.3
    ke = rng.random(n_eval) < 0.3
    dev = [ScoreSet(dev_tr, kd * (1 + j) + rng.standard_normal(n_dev) * (1 + 0.5 * j) + j) for j in range(n_sys)]
    ev = [ScoreSet(ev_tr, ke * (1 + j) + rng.standard_normal(n_eval) * (1 + 0.5 * j) + j) for j in range(n_sys)]
    return TrialList(dev_tr, tuple(kd)), dev, ev, ke


class TestSplit:
    def test_halves_are_disjoint_and_balanced(self, rng):
        trials, *_ = _dev_eval(rng)
        split = split_devset(trials, 3)
        assert not set(split.first) & set(split.second)
        assert len(split.first) + len(split.second) == len(trials)
        labels = trials.labels
        assert abs(labels[split.first].sum() - labels[split.second].sum()) <= 1
        assert np.array_equal(split_devset(trials, 3).first, split.first)
        assert len(split.devset_I) == len(split.first)

    def test_needs_key(self):
        with pytest.raises(TrialFileError):
            split_devset(TrialList((("a", "b"),)))


class TestStrategies:
    def test_fixed2_matches_manual_chain(self, rng):
        trials, dev, ev, _ = _dev_eval(rng)
        split = split_devset(trials, 1)
        labels = trials.labels
        norms = [ScoreNorm.fit(d.scores[split.second]) for d in dev]
        fused_dev = sum(n.apply(d.scores) for d, n in zip(dev, norms)) / 2
        fused_ev = sum(n.apply(e.scores) for e, n in zip(ev, norms)) / 2
        cal = calibrate(fused_dev[split.first], labels[split.first], 0.01)
        out = run_strategy("Fixed2", dev, ev, split)
        assert np.allclose(out.llr.scores, cal.apply(fused_ev), atol=1e-12)
        assert out.llr.stage == "llr"

    def test_fixed1_is_mean_of_swapped_branches(self, rng):
        trials, dev, ev, _ = _dev_eval(rng)
        split = split_devset(trials, 2)
        swapped = type(split)(trials, split.second, split.first)
        a = run_strategy("Fixed2", dev, ev, split).llr.scores
        b = run_strategy("Fixed2", dev, ev, swapped).llr.scores
        assert np.allclose(run_strategy("Fixed1", dev, ev, split).llr.scores, (a + b) / 2)

    def test_identical_halves_make_fixed1_equal_fixed2(self, rng):
        n = 100
        tr = tuple((f"m{i}", f"d{i}") for i in range(2 * n))
        k = np.tile(rng.random(n) < 0.4, 2)
        s = np.tile(k[:n] + rng.standard_normal(n), 2)
        trials = TrialList(tr, tuple(k))
        split = type(split_devset(trials))(trials, np.arange(n), np.arange(n, 2 * n))
        ev = [ScoreSet(tuple((f"m{i}", f"e{i}") for i in range(50)), rng.standard_normal(50))]
        dev = [ScoreSet(tr, s)]
        f1 = run_strategy("Fixed1", dev, ev, split).llr.scores
        f2 = run_strategy("Fixed2", dev, ev, split).llr.scores
        assert np.allclose(f1, f2, atol=1e-12)

    def test_fixed3_with_one_hot_weights_is_calibrated_subsystem(self, rng):
        trials, dev, ev, _ = _dev_eval(rng)
        split = split_devset(trials, 0)
        labels = trials.labels
        norm = ScoreNorm.fit(dev[0].scores[split.second])
        cal = calibrate(norm.apply(dev[0].scores)[split.second], labels[split.second], 0.01)
        out = run_strategy("Fixed3", dev, ev, split, weights=(1.0, 0.0))
        assert np.allclose(out.llr.scores, cal.apply(norm.apply(ev[0].scores)))

    def test_fusion_helps_and_aliases(self, rng):
        trials, dev, ev, ke = _dev_eval(rng, n_dev=2000, n_eval=2000)
        split = split_devset(trials, 0)
        fused = run_strategy("Open1", dev, ev, split).llr.scores
        assert eer(fused, ke) <= min(eer(e.scores, ke) for e in ev)
        assert len(run_strategy("Fixed1", dev, ev, split).branches) == 2

    def test_errors(self, rng):
        trials, dev, ev, _ = _dev_eval(rng)
        split = split_devset(trials, 0)
        with pytest.raises(ValueError):
            run_strategy("Fixed9", dev, ev, split)
        with pytest.raises(ValueError):
            run_strategy("Fixed1", dev, ev[:1], split)
