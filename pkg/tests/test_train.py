"""Training loop, loss, splits, metric suite, and age-specific models."""

import math

import numpy as np
import pytest

from helpers import check_gradient
from lungsound.data import CycleRecord, SynthSpec, synth_corpus
from lungsound.errors import DataError
from lungsound.metrics import MetricReport, collapse_to_binary, scores_from_rates
from lungsound.model import ModelConfig
from lungsound.tensor import Tensor
from lungsound.train import (
    TrainConfig,
    evaluate,
    patient_kfold,
    train,
    train_age_specific,
    wcce_loss,
)


def tiny_model_cfg(n_bands=12, n_classes=2):
    return ModelConfig(channels=(8,), n_classes=n_classes, n_mel_rows_in=n_bands)


def tiny_train_cfg(**kw):
    defaults = dict(
        epochs=5, batch_size=16, lr0=1e-3, weight_decay=0.0, seed=0,
        task="multiclass", specaugment=False,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


def tiny_corpus(seed=0, n=16, snr=15.0, bands=12, frames=12, classes=2):
    return synth_corpus(
        SynthSpec(
            n_classes=classes, n_bands=bands, n_frames=frames,
            n_per_class=n, snr_db=snr, seed=seed,
        )
    )


# -- WCCE -------------------------------------------------------------------------


class TestWcceLoss:
    def test_perfect_predictions_near_zero(self):
        logits = Tensor(np.array([[20.0, -20.0], [-20.0, 20.0]], np.float32))
        loss = wcce_loss(logits, np.array([0, 1]), np.array([1, 1]))
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_predictions_closed_form(self):
        # balanced counts: loss = |C| * log|C| / N with w_c = 1/count_c
        n_per, n_classes = 10, 4
        n = n_per * n_classes
        logits = Tensor(np.zeros((n, n_classes), np.float32))
        labels = np.repeat(np.arange(n_classes), n_per)
        counts = np.full(n_classes, n_per)
        loss = wcce_loss(logits, labels, counts)
        assert loss.item() == pytest.approx(math.log(n_classes) / n_per, rel=1e-5)

    def test_doubling_counts_halves_loss(self):
        logits = Tensor(np.random.default_rng(0).normal(size=(6, 3)).astype(np.float32))
        labels = np.array([0, 1, 2, 0, 1, 2])
        l1 = wcce_loss(logits, labels, np.array([2, 2, 2])).item()
        l2 = wcce_loss(Tensor(logits.data.copy()), labels, np.array([4, 4, 4])).item()
        assert l2 == pytest.approx(l1 / 2, rel=1e-6)

    def test_zero_count_for_present_class_errors(self):
        with pytest.raises(DataError):
            wcce_loss(Tensor(np.zeros((2, 2), np.float32)), np.array([0, 1]), np.array([1, 0]))

    def test_gradient_vs_finite_differences(self):
        logits = np.random.default_rng(1).normal(size=(5, 3)).astype(np.float32)
        labels = np.array([0, 2, 1, 1, 0])
        counts = np.array([2, 2, 1])

        def loss(t):
            return wcce_loss(t["logits"], labels, counts)

        check_gradient(loss, {"logits": logits})


# -- patient k-fold ------------------------------------------------------------------


def records_for(patients):
    recs = []
    for pid, n in patients.items():
        for i in range(n):
            recs.append(
                CycleRecord(
                    audio_path="x", onset_s=0.0, offset_s=1.0, label=0,
                    patient_id=pid, clip_id=f"{pid}-{i}",
                )
            )
    return recs


class TestPatientKfold:
    def test_five_patients_five_folds(self):
        recs = records_for({f"p{i}": 3 for i in range(5)})
        splits = patient_kfold(recs, k=5, seed=0)
        for train_idx, val_idx in splits:
            val_pids = {recs[i].patient_id for i in val_idx}
            assert len(val_pids) == 1

    def test_no_patient_in_both_sides(self):
        recs = records_for({f"p{i}": i + 1 for i in range(8)})
        for train_idx, val_idx in patient_kfold(recs, k=3, seed=1):
            tr = {recs[i].patient_id for i in train_idx}
            va = {recs[i].patient_id for i in val_idx}
            assert not tr & va

    def test_validation_folds_partition_everything(self):
        recs = records_for({f"p{i}": 2 + i % 3 for i in range(7)})
        splits = patient_kfold(recs, k=4, seed=2)
        seen = np.concatenate([v for _, v in splits])
        assert sorted(seen.tolist()) == list(range(len(recs)))

    def test_too_few_patients(self):
        with pytest.raises(DataError):
            patient_kfold(records_for({"a": 4, "b": 2}), k=3)

    def test_deterministic_for_seed(self):
        recs = records_for({f"p{i}": 2 for i in range(9)})
        a = patient_kfold(recs, k=3, seed=7)
        b = patient_kfold(recs, k=3, seed=7)
        assert all(np.array_equal(x[1], y[1]) for x, y in zip(a, b))


# -- metric suite --------------------------------------------------------------------


from helpers import PUBLISHED_METRIC_ROWS as PUBLISHED_ROWS


class TestMetricFormulas:
    @pytest.mark.parametrize("sp,se,as_,hs,ts", PUBLISHED_ROWS)
    def test_published_rows_within_rounding(self, sp, se, as_, hs, ts):
        got_as, got_hs, got_ts = scores_from_rates(se, sp)
        assert abs(got_as - as_) <= 0.01 + 1e-9
        if hs is not None:
            assert abs(got_hs - hs) <= 0.01 + 1e-9
        if ts is not None:
            assert abs(got_ts - ts) <= 0.01 + 1e-9

    def test_perfect_scores(self):
        assert scores_from_rates(100.0, 100.0) == (100.0, 100.0, 100.0)

    def test_zero_rates_harmonic_guard(self):
        as_, hs, ts = scores_from_rates(0.0, 0.0)
        assert (as_, hs, ts) == (0.0, 0.0, 0.0)

    def test_identities_enforced_at_construction(self):
        with pytest.raises(ValueError):
            MetricReport(50.0, 50.0, 60.0, 50.0, 55.0, np.zeros((2, 2)), 0)

    def test_from_confusion_multiclass(self):
        conf = np.array([
            [8, 1, 1],   # normal: 8/10 correct
            [2, 6, 2],   # class 1: 6/10
            [1, 2, 7],   # class 2: 7/10
        ])
        rep = MetricReport.from_confusion(conf)
        assert rep.sp == pytest.approx(80.0)
        assert rep.se == pytest.approx(100.0 * 13 / 20)

    def test_binary_collapse(self):
        np.testing.assert_array_equal(collapse_to_binary(np.array([0, 1, 2, 3, 0])), [0, 1, 1, 1, 0])


# -- training -------------------------------------------------------------------------


class TestTrain:
    def test_separable_toy_reaches_high_train_as(self):
        corpus = tiny_corpus(n=25, snr=15.0)  # 50 samples, 2 classes
        cfg = tiny_train_cfg(epochs=30, batch_size=16, lr0=2e-3)
        result = train(corpus, tiny_model_cfg(), cfg)
        report = evaluate(result.model, corpus, "multiclass")
        assert report.as_score > 95.0, report.as_score
        assert len(result.history) == 30

    def test_initial_loss_near_random_predictor(self):
        corpus = tiny_corpus(n=25)
        cfg = tiny_train_cfg(epochs=1, lr0=0.0)
        result = train(corpus, tiny_model_cfg(), cfg)
        expected = 2 * math.log(2) / 50  # |C| log|C| / N, w_c = 1/count
        assert result.history[0].loss == pytest.approx(expected, rel=0.20)

    def test_fixed_seed_reproducible_loss_curves(self):
        corpus = tiny_corpus(n=8)
        cfg = tiny_train_cfg(epochs=3, specaugment=True, seed=11)
        h1 = [e.loss for e in train(corpus, tiny_model_cfg(), cfg).history]
        h2 = [e.loss for e in train(corpus, tiny_model_cfg(), cfg).history]
        assert h1 == h2

    def test_lr_schedule_endpoints(self):
        corpus = tiny_corpus(n=4)
        cfg = tiny_train_cfg(epochs=4, lr0=1e-3)
        hist = train(corpus, tiny_model_cfg(), cfg).history
        assert hist[0].lr == pytest.approx(1e-3)
        assert hist[-1].lr == pytest.approx(0.0, abs=1e-12)

    def test_empty_dataset_errors(self):
        with pytest.raises(DataError):
            train([], tiny_model_cfg(), tiny_train_cfg())

    def test_mask_applied_and_model_shrinks(self):
        from lungsound.masks import FrequencyMask

        corpus = tiny_corpus(n=6, bands=12)
        keep = np.ones(12, dtype=bool)
        keep[:4] = False
        mask = FrequencyMask(keep)
        result = train(corpus, tiny_model_cfg(n_bands=12), tiny_train_cfg(epochs=1), mask=mask)
        assert result.model.cfg.n_mel_rows_in == 8


class TestEvaluate:
    def test_degenerate_predictor_zero_se(self):
        corpus = tiny_corpus(n=10)
        cfg = tiny_model_cfg()
        from lungsound.model import CnnTsa

        model = CnnTsa(cfg, seed=0)
        model.params["head.weight"].data[...] = 0.0
        model.params["head.bias"].data[...] = np.array([1.0, 0.0])  # always normal
        report = evaluate(model, corpus, "multiclass")
        assert report.se == 0.0
        assert report.sp == 100.0

    def test_binary_collapse_of_multiclass_model(self):
        corpus = tiny_corpus(n=10, classes=3, bands=12)
        cfg = tiny_model_cfg(n_classes=3)
        result = train(corpus, cfg, tiny_train_cfg(epochs=2))
        report = evaluate(result.model, corpus, "binary")
        assert report.confusion.shape == (2, 2)

    def test_empty_set_errors(self):
        from lungsound.model import CnnTsa

        with pytest.raises(DataError):
            evaluate(CnnTsa(tiny_model_cfg(), 0), [], "binary")

    def test_report_identities_hold(self):
        corpus = tiny_corpus(n=12)
        result = train(corpus, tiny_model_cfg(), tiny_train_cfg(epochs=2))
        rep = evaluate(result.model, corpus, "multiclass")
        as_, hs, ts = scores_from_rates(rep.se, rep.sp)
        assert rep.as_score == pytest.approx(as_, abs=1e-9)
        assert rep.hs == pytest.approx(hs, abs=1e-9)
        assert rep.ts == pytest.approx(ts, abs=1e-9)


# -- age-specific ----------------------------------------------------------------------


def aged_corpus(seed=0):
    corpus = tiny_corpus(seed=seed, n=12)
    for i, s in enumerate(corpus):
        s.provenance.age_years = 8.0 if i % 2 == 0 else 40.0
    return corpus


class TestAgeSpecific:
    def test_combined_is_mean_of_strata(self):
        corpus = aged_corpus()
        cfg = tiny_train_cfg(epochs=2)
        result = train_age_specific(corpus, tiny_model_cfg(), cfg)
        assert result.combined.se == pytest.approx(
            (result.child_report.se + result.adult_report.se) / 2
        )
        assert result.combined.as_score == pytest.approx(
            (result.child_report.as_score + result.adult_report.as_score) / 2
        )

    def test_all_child_dataset_errors(self):
        corpus = tiny_corpus(n=6)
        for s in corpus:
            s.provenance.age_years = 5.0
        with pytest.raises(DataError, match="adult"):
            train_age_specific(corpus, tiny_model_cfg(), tiny_train_cfg(epochs=1))

    def test_unknown_age_excluded(self):
        from lungsound.train import split_by_age

        corpus = aged_corpus()
        corpus[0].provenance.age_years = None
        child, adult = split_by_age(corpus, 18.0)
        assert len(child) + len(adult) == len(corpus) - 1

    def test_combined_example_rule(self):
        # child AS=65, adult AS=57 -> combined AS=61
        child = MetricReport.from_rates(60.0, 70.0)   # AS 65
        adult = MetricReport.from_rates(50.0, 64.0)   # AS 57
        from lungsound.train import combine_reports

        combined = combine_reports(child, adult)
        assert combined.as_score == pytest.approx(61.0)
        assert combined.se == pytest.approx(55.0)


    def test_divergence_aborts_with_epoch(self):
        import warnings

        corpus = tiny_corpus(n=6, bands=8, frames=8)
        cfg = tiny_train_cfg(epochs=4, batch_size=6, lr0=1e30)
        from lungsound.errors import DivergenceError

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            with pytest.raises(DivergenceError) as err:
                train(corpus, tiny_model_cfg(n_bands=8), cfg)
        assert err.value.epoch == 0
