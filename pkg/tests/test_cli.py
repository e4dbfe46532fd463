"""CLI end-to-end runs on tiny synthetic data: command wiring, exit
codes, manifests, and byte-determinism of primary outputs."""

import json

import numpy as np
import pytest

from lungsound.cli import main

SYNTH_ARGS = [
    "preprocess", "--dataset", "synth", "--out", "synth.cache",
    "--synth-classes", "2", "--synth-per-class", "12", "--synth-bands", "16",
    "--synth-frames", "10", "--synth-snr-db", "12", "--seed", "5",
]


def run(workdir, *args):
    return main(["--workdir", str(workdir), *args])


@pytest.fixture
def cache_dir(tmp_path):
    assert run(tmp_path, *SYNTH_ARGS) == 0
    return tmp_path


def train_args(out="run1", extra=()):
    return [
        "train", "--cache", "synth.cache", "--out-dir", out,
        "--task", "multiclass", "--preset", "tiny", "--epochs", "3",
        "--batch-size", "8", "--lr0", "0.01", "--weight-decay", "0",
        "--no-specaugment", "--seed", "3", *extra,
    ]


class TestPreprocess:
    def test_synth_cache_written_with_manifest(self, cache_dir):
        assert (cache_dir / "synth.cache").exists()
        manifest = (cache_dir / "manifests.jsonl").read_text().splitlines()
        assert json.loads(manifest[0])["command"] == "preprocess"

    def test_cache_hit_short_circuits(self, cache_dir, capsys):
        before = (cache_dir / "synth.cache").read_bytes()
        assert run(cache_dir, *SYNTH_ARGS) == 0
        assert "cache hit" in capsys.readouterr().out
        assert (cache_dir / "synth.cache").read_bytes() == before

    def test_config_change_invalidates(self, cache_dir):
        args = list(SYNTH_ARGS)
        args[args.index("--synth-snr-db") + 1] = "20"
        before = (cache_dir / "synth.cache").read_bytes()
        assert run(cache_dir, *args) == 0
        assert (cache_dir / "synth.cache").read_bytes() != before

    def test_icbhi_preprocess_counts(self, tmp_path):
        from test_data import write_wav

        root = tmp_path / "icbhi"
        root.mkdir()
        stem = "101_1b1_Al_sc_Meditron"
        write_wav(root / f"{stem}.wav", seconds=3.0, rate=8000)
        (root / f"{stem}.txt").write_text("0.0 1.0 0 0\n1.0 2.0 1 0\n2.0 2.9 0 1\n")
        code = run(
            tmp_path, "preprocess", "--dataset", "icbhi", "--data-root", "icbhi",
            "--out", "icbhi.cache", "--target-seconds", "2", "--n-mels", "16",
            "--win", "256", "--hop", "128", "--f-max", "3000",
        )
        assert code == 0
        from lungsound.io import read_spec_cache

        specs, _, _ = read_spec_cache(tmp_path / "icbhi.cache")
        assert len(specs) == 3
        assert [s.label for s in specs] == [0, 1, 2]
        assert specs[0].n_frames == (2 * 16000 - 256) // 128 + 1

    def test_missing_data_root_is_config_error(self, tmp_path):
        assert run(tmp_path, "preprocess", "--dataset", "icbhi", "--out", "x") == 2


class TestTrainEvaluate:
    def test_train_writes_checkpoint_history(self, cache_dir):
        assert run(cache_dir, *train_args()) == 0
        assert (cache_dir / "run1" / "checkpoint.ckpt").exists()
        history = (cache_dir / "run1" / "history.csv").read_text().splitlines()
        assert history[0] == "epoch,lr,loss,train_as"
        assert len(history) == 4  # header + 3 epochs

    def test_train_deterministic_bytes(self, cache_dir):
        assert run(cache_dir, *train_args("runA")) == 0
        assert run(cache_dir, *train_args("runB")) == 0
        a = (cache_dir / "runA" / "checkpoint.ckpt").read_bytes()
        b = (cache_dir / "runB" / "checkpoint.ckpt").read_bytes()
        assert a == b
        assert (cache_dir / "runA" / "history.csv").read_text() == (
            cache_dir / "runB" / "history.csv"
        ).read_text()

    def test_evaluate_report_and_confusion(self, cache_dir):
        run(cache_dir, *train_args())
        code = run(
            cache_dir, "evaluate", "--checkpoint", "run1/checkpoint.ckpt",
            "--cache", "synth.cache", "--split", "all", "--out-dir", "eval1",
        )
        assert code == 0
        report = json.loads((cache_dir / "eval1" / "report.json").read_text())
        as_ = (report["Se"] + report["Sp"]) / 2
        assert report["AS"] == pytest.approx(as_, abs=1e-9)
        assert (cache_dir / "eval1" / "confusion.csv").exists()

    def test_evaluate_hash_mismatch_refused(self, cache_dir):
        run(cache_dir, *train_args())
        args = list(SYNTH_ARGS)
        args[args.index("--out") + 1] = "other.cache"
        args[args.index("--synth-snr-db") + 1] = "30"
        run(cache_dir, *args)
        code = run(
            cache_dir, "evaluate", "--checkpoint", "run1/checkpoint.ckpt",
            "--cache", "other.cache", "--split", "all", "--out-dir", "eval2",
        )
        assert code == 2  # config error

    def test_age_specific_training(self, tmp_path):
        # synth corpus has no ages: build a cache with ages injected
        from lungsound.data import SynthSpec, synth_corpus
        from lungsound.io import write_spec_cache

        corpus = synth_corpus(
            SynthSpec(n_classes=2, n_bands=16, n_frames=10, n_per_class=10, snr_db=15.0, seed=0)
        )
        for i, s in enumerate(corpus):
            s.provenance.age_years = 6.0 if i % 2 == 0 else 35.0
        write_spec_cache(tmp_path / "aged.cache", corpus, {"synthetic": True})
        code = run(
            tmp_path, "train", "--cache", "aged.cache", "--out-dir", "age_run",
            "--task", "multiclass", "--preset", "tiny", "--epochs", "2",
            "--batch-size", "8", "--no-specaugment", "--age-specific",
        )
        assert code == 0
        assert (tmp_path / "age_run" / "checkpoint_child.ckpt").exists()
        assert (tmp_path / "age_run" / "checkpoint_adult.ckpt").exists()
        combined = json.loads((tmp_path / "age_run" / "report_combined.json").read_text())
        assert 0 <= combined["AS"] <= 100


class TestFbsCommand:
    def test_importance_emits_mask_tables_curves(self, cache_dir):
        code = run(
            cache_dir, "fbs", "--cache", "synth.cache", "--out-dir", "fbs1",
            "--method", "importance", "--fbs-lambda", "0", "--r", "4",
            "--k-folds", "2", "--stop-epsilon", "inf", "--min-bands", "8",
            "--preset", "tiny", "--epochs", "3", "--batch-size", "8",
            "--no-specaugment", "--seed", "1",
        )
        assert code == 0
        out = cache_dir / "fbs1"
        assert (out / "mask.txt").exists()
        assert (out / "iterations.csv").exists()
        assert (out / "retention_curve.csv").exists()
        assert (out / "retention_curve.svg").exists()
        assert (out / "importance_iter00.csv").exists()
        from lungsound.io import read_mask_file

        mask, _ = read_mask_file(out / "mask.txt")
        assert mask.n_bands == 16

    def test_mask_feeds_train(self, cache_dir):
        run(
            cache_dir, "fbs", "--cache", "synth.cache", "--out-dir", "fbs2",
            "--method", "importance", "--fbs-lambda", "0", "--r", "4",
            "--k-folds", "2", "--stop-epsilon", "inf", "--min-bands", "12",
            "--preset", "tiny", "--epochs", "2", "--batch-size", "8",
            "--no-specaugment",
        )
        code = run(cache_dir, *train_args("masked_run", extra=("--mask", "fbs2/mask.txt")))
        assert code == 0

    def test_backward_method_runs(self, cache_dir):
        code = run(
            cache_dir, "fbs", "--cache", "synth.cache", "--out-dir", "fbs3",
            "--method", "backward", "--k-folds", "2", "--stop-epsilon", "inf",
            "--min-bands", "12", "--preset", "tiny", "--epochs", "2",
            "--batch-size", "8", "--no-specaugment",
        )
        assert code == 0
        assert (cache_dir / "fbs3" / "mask.txt").exists()


class TestAttributeCommand:
    def test_gradcam_dumps_and_svg(self, cache_dir):
        run(cache_dir, *train_args())
        code = run(
            cache_dir, "attribute", "--checkpoint", "run1/checkpoint.ckpt",
            "--cache", "synth.cache", "--method", "gradcam", "--class-id", "1",
            "--first", "3", "--svg", "--out-dir", "attr1",
        )
        assert code == 0
        out = cache_dir / "attr1"
        assert (out / "attributions.ckpt").exists()
        assert (out / "band_profiles.csv").exists()
        svgs = sorted(out.glob("attr_*.svg"))
        assert len(svgs) == 3
        # SVG canvas is T*cell x F*cell
        text = svgs[0].read_text()
        assert 'width="30"' in text and 'height="48"' in text  # T=10,F=16,cell=3

    def test_ig_completeness_printed(self, cache_dir, capsys):
        run(cache_dir, *train_args())
        code = run(
            cache_dir, "attribute", "--checkpoint", "run1/checkpoint.ckpt",
            "--cache", "synth.cache", "--method", "ig", "--class-id", "0",
            "--first", "1", "--ig-steps", "100", "--out-dir", "attr2",
        )
        assert code == 0
        assert "completeness" in capsys.readouterr().out


class TestFlopsCommand:
    def test_breakdown_and_mask_ratio(self, tmp_path):
        from lungsound.io import write_mask_file
        from lungsound.masks import FrequencyMask

        keep = np.zeros(64, dtype=bool)
        keep[:32] = True
        write_mask_file(tmp_path / "half.txt", FrequencyMask(keep), "")
        code = run(
            tmp_path, "flops", "--out", "flops.csv", "--preset", "icbhi",
            "--mask", "half.txt", "--n-frames", "249",
        )
        assert code == 0
        rows = (tmp_path / "flops.csv").read_text().splitlines()
        assert rows[0] == "layer,flops"
        total = int(next(r.split(",")[1] for r in rows if r.startswith("total,")))
        masked = int(next(r.split(",")[1] for r in rows if r.startswith("total_masked,")))
        assert 0.49 <= masked / total <= 0.51

    def test_no_mask_ratio_is_one(self, tmp_path, capsys):
        assert run(tmp_path, "flops", "--out", "f.csv", "--preset", "sprsound") == 0
        assert "total FLOPs" in capsys.readouterr().out


class TestConfigFileAndDeterminism:
    def test_config_file_fills_defaults_flags_win(self, cache_dir):
        (cache_dir / "cfg.json").write_text(json.dumps({"epochs": 2, "seed": 9}))
        code = run(
            cache_dir, "train", "--cache", "synth.cache", "--out-dir", "cfg_run",
            "--task", "multiclass", "--preset", "tiny", "--batch-size", "8",
            "--no-specaugment", "--config", "cfg.json", "--seed", "3",
        )
        assert code == 0
        history = (cache_dir / "cfg_run" / "history.csv").read_text().splitlines()
        assert len(history) == 3  # config epochs=2 applied
        manifest = [json.loads(l) for l in (cache_dir / "manifests.jsonl").read_text().splitlines()]
        assert manifest[-1]["config"]["train"]["seed"] == 3  # explicit flag wins

    def test_unknown_config_key_rejected(self, cache_dir):
        (cache_dir / "bad.json").write_text(json.dumps({"nonsense": 1}))
        code = run(
            cache_dir, "train", "--cache", "synth.cache", "--out-dir", "x",
            "--preset", "tiny", "--config", "bad.json",
        )
        assert code == 2

    def test_fbs_outputs_byte_identical(self, cache_dir):
        args = [
            "fbs", "--cache", "synth.cache", "--method", "importance",
            "--fbs-lambda", "0", "--r", "4", "--k-folds", "2",
            "--stop-epsilon", "inf", "--min-bands", "12", "--preset", "tiny",
            "--epochs", "2", "--batch-size", "8", "--no-specaugment", "--seed", "4",
        ]
        assert run(cache_dir, *args, "--out-dir", "detA") == 0
        assert run(cache_dir, *args, "--out-dir", "detB") == 0
        for name in ("mask.txt", "iterations.csv", "retention_curve.csv", "retention_curve.svg"):
            assert (cache_dir / "detA" / name).read_bytes() == (
                cache_dir / "detB" / name
            ).read_bytes(), name


class TestWorkerThreads:
    def test_attribute_workers_env_matches_serial(self, cache_dir, monkeypatch):
        run(cache_dir, *train_args())
        base = ["attribute", "--checkpoint", "run1/checkpoint.ckpt",
                "--cache", "synth.cache", "--method", "gradcam", "--class-id", "0",
                "--first", "5"]
        monkeypatch.setenv("LUNGSOUND_WORKERS", "1")
        assert run(cache_dir, *base, "--out-dir", "w1") == 0
        monkeypatch.setenv("LUNGSOUND_WORKERS", "3")
        assert run(cache_dir, *base, "--out-dir", "w3") == 0
        a = (cache_dir / "w1" / "attributions.ckpt").read_bytes()
        b = (cache_dir / "w3" / "attributions.ckpt").read_bytes()
        assert a == b


class TestCliMatchesLibrary:
    def test_report_json_bit_exact_vs_evaluate(self, cache_dir):
        run(cache_dir, *train_args())
        run(cache_dir, "evaluate", "--checkpoint", "run1/checkpoint.ckpt",
            "--cache", "synth.cache", "--split", "all", "--out-dir", "evx")
        from lungsound.cli import _load_model
        from lungsound.io import read_spec_cache
        from lungsound.train import evaluate

        model, meta = _load_model(cache_dir / "run1" / "checkpoint.ckpt")
        specs, _, _ = read_spec_cache(cache_dir / "synth.cache")
        report = evaluate(model, specs, meta["task"])
        emitted = json.loads((cache_dir / "evx" / "report.json").read_text())
        assert emitted["Se"] == report.se and emitted["Sp"] == report.sp
        assert emitted["AS"] == report.as_score
        assert emitted["confusion"] == report.confusion.tolist()

    def test_placement_none_trains(self, cache_dir):
        code = run(cache_dir, *train_args("none_run", extra=("--placement", "none")))
        assert code == 0
        from lungsound.io import load_checkpoint

        state, cfg, _ = load_checkpoint(cache_dir / "none_run" / "checkpoint.ckpt")
        assert cfg["attention_placement"] == "none"
        assert not any(k.startswith("tsa.") for k in state)
