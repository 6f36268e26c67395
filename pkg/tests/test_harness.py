"""Run configs, manifests, learning blocks, curves, and whole experiments."""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from deepsom import ApParams, ConfigurationError, load_checkpoint
from deepsom.dataio import take_block, write_idx_images, write_idx_labels
from deepsom.harness import (
    CURVE_HEADER,
    BlockMetrics,
    RunConfig,
    curve_line,
    evaluate,
    load_datasets,
    make_config,
    manifest_text,
    parse_config_text,
    pretrain_only,
    read_curves,
    run_block,
    run_experiment,
    thread_count,
    write_curves,
)

from toys import halves_dataset, toy_specs


class FakeClock:
    """Monotone counter standing in for wall time."""

    def __init__(self, step=0.5):
        self.t = 0.0
        self.step = step

    def __call__(self):
        self.t += self.step
        return self.t


def write_toy_data(root: Path) -> dict:
    rng = np.random.default_rng(42)
    train_images, train_labels = halves_dataset(rng, 60)
    test_images, test_labels = halves_dataset(rng, 30)
    paths = {
        "train_images": str(root / "train-img"),
        "train_labels": str(root / "train-lab"),
        "test_images": str(root / "test-img"),
        "test_labels": str(root / "test-lab"),
    }
    write_idx_images(paths["train_images"], train_images)
    write_idx_labels(paths["train_labels"], train_labels)
    write_idx_images(paths["test_images"], test_images)
    write_idx_labels(paths["test_labels"], test_labels)
    return paths


def toy_config(root: Path, **overrides) -> RunConfig:
    values = dict(
        write_toy_data(root),
        out_dir=str(root / "run"),
        seed=5,
        block_size=40,
        n_blocks=2,
        validation_size=20,
        n_classes=2,
        pretrain_iterations=60,
        log_every=0,
    )
    values.update(overrides)
    return make_config(overrides=values)


def toy_experiment(config, clock=None):
    return run_experiment(
        config,
        specs=toy_specs(),
        image_shape=(8, 8),
        pad=0,
        clock=clock if clock is not None else FakeClock(),
    )


class TestConfigParsing:
    def test_comments_and_blanks(self):
        text = "# header\n\nseed=7   # trailing\n  r = 0.5\n"
        assert parse_config_text(text) == {"seed": "7", "r": "0.5"}

    def test_malformed_line(self):
        with pytest.raises(ConfigurationError, match="line 2"):
            parse_config_text("seed=1\nnot a pair\n")

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="unknown config key"):
            make_config({"sneed": "7"})

    def test_bad_int(self):
        with pytest.raises(ConfigurationError, match="seed expects int"):
            make_config({"seed": "seven"})

    def test_bad_bool(self):
        with pytest.raises(ConfigurationError, match="boolean"):
            make_config({"export_atlas": "maybe"})

    def test_bool_spellings(self):
        assert make_config({"export_atlas": "off"}).export_atlas is False
        assert make_config({"export_atlas": "YES"}).export_atlas is True

    def test_flags_beat_file(self):
        config = make_config({"seed": "1", "r": "0.5"}, {"seed": 2})
        assert config.seed == 2
        assert config.r == 0.5

    def test_defaults_reproduce_reference_protocol(self):
        config = RunConfig()
        assert config.block_size == 10_000
        assert config.n_blocks == 20
        assert (config.rho_base, config.beta, config.r) == (0.2, 0.4, 0.7)
        assert config.pretrain_iterations == 10_000
        assert (config.pretrain_sigma_start, config.pretrain_sigma_end) == (3.5, 0.0)

    def test_manifest_round_trip(self):
        config = make_config(overrides={"seed": 9, "r": 0.0, "redraw_blocks": True})
        again = make_config(parse_config_text(manifest_text(config)))
        assert again == config

    def test_manifest_sorted(self):
        lines = manifest_text(RunConfig()).splitlines()
        keys = [line.split("=")[0] for line in lines]
        assert keys == sorted(keys)


class TestCurves:
    def test_line_format(self):
        m = BlockMetrics(3, 0.123456789, 10_000, 42, 1.5)
        assert curve_line(m) == "3,0.123457,42,1.500"

    def test_write_read_round_trip(self, tmp_path):
        rows = [BlockMetrics(0, 0.5, 0, 0, 0.25), BlockMetrics(1, 0.25, 40, 11, 3.0)]
        path = tmp_path / "curves.csv"
        write_curves(path, rows)
        text = path.read_text()
        assert text.startswith(CURVE_HEADER + "\n")
        back = read_curves(path)
        assert [m.block for m in back] == [0, 1]
        assert back[1].error_rate == 0.25
        assert back[1].ap_invocations == 11

    def test_read_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ConfigurationError, match="header"):
            read_curves(path)


class TestThreadCount:
    def test_default_uses_cpu_count(self, monkeypatch):
        monkeypatch.delenv("DEEPSOM_THREADS", raising=False)
        assert thread_count() >= 1

    def test_explicit_cap(self, monkeypatch):
        monkeypatch.setenv("DEEPSOM_THREADS", "4")
        assert thread_count() == 4

    def test_zero_is_auto(self, monkeypatch):
        monkeypatch.setenv("DEEPSOM_THREADS", "0")
        assert thread_count() >= 1

    def test_garbage_rejected(self, monkeypatch):
        monkeypatch.setenv("DEEPSOM_THREADS", "many")
        with pytest.raises(ConfigurationError):
            thread_count()

    def test_negative_rejected(self, monkeypatch):
        monkeypatch.setenv("DEEPSOM_THREADS", "-1")
        with pytest.raises(ConfigurationError):
            thread_count()


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("exp")
    config = toy_config(root)
    result = toy_experiment(config)
    return root, config, result


class TestRunExperiment:
    def test_artifacts_exist(self, finished_run):
        _, config, result = finished_run
        out = Path(config.out_dir)
        for name in (
            "manifest.txt",
            "curves.csv",
            "pretrained.dsom",
            "final.dsom",
            "atlas_layer1.pgm",
            "usage.pgm",
            "usage_counts.csv",
        ):
            assert (out / name).is_file(), name
        assert result.curves_path == out / "curves.csv"

    def test_curve_rows_and_baseline(self, finished_run):
        _, config, result = finished_run
        rows = read_curves(result.curves_path)
        assert len(rows) == config.n_blocks + 1
        assert rows[0].block == 0
        assert rows[0].ap_invocations == 0
        assert all(0.0 <= m.error_rate <= 1.0 for m in rows)

    def test_fake_clock_in_csv(self, finished_run):
        _, _, result = finished_run
        # every duration is a whole multiple of the fake half-second tick
        for m in result.metrics:
            assert m.seconds == pytest.approx(round(m.seconds * 2) / 2)

    def test_manifest_echoes_config(self, finished_run):
        _, config, _ = finished_run
        text = (Path(config.out_dir) / "manifest.txt").read_text()
        assert make_config(parse_config_text(text)) == config

    def test_final_checkpoint_carries_calibration(self, finished_run):
        _, config, result = finished_run
        stored = load_checkpoint(Path(config.out_dir) / "final.dsom")
        assert stored.label_map is not None
        assert np.array_equal(stored.label_map.class_to_neuron, result.label_map.class_to_neuron)
        assert stored.cache_indices is not None
        assert (np.asarray(stored.cache_indices) >= 0).all()

    def test_identical_manifests_identical_checkpoints(self, tmp_path):
        config = toy_config(tmp_path, n_blocks=1)
        first = {}
        for attempt in range(2):
            toy_experiment(config, clock=FakeClock())
            out = Path(config.out_dir)
            digests = {
                name: hashlib.sha256((out / name).read_bytes()).hexdigest()
                for name in ("pretrained.dsom", "final.dsom", "curves.csv")
            }
            if attempt == 0:
                first = digests
        assert digests == first

    def test_resume_from_pretrained(self, finished_run, tmp_path):
        root, config, result = finished_run
        resumed = toy_config(
            tmp_path,
            out_dir=str(tmp_path / "resumed"),
            checkpoint_in=str(Path(config.out_dir) / "pretrained.dsom"),
            n_blocks=1,
            r=0.0,
        )
        # reuse the original data files so indices line up
        resumed = make_config(
            parse_config_text(manifest_text(resumed)),
            {
                "train_images": config.train_images,
                "train_labels": config.train_labels,
                "test_images": config.test_images,
                "test_labels": config.test_labels,
            },
        )
        other = toy_experiment(resumed)
        assert other.metrics[0].error_rate == result.metrics[0].error_rate
        assert np.array_equal(other.label_map.class_to_neuron, result.label_map.class_to_neuron)


class TestRunBlock:
    def test_zero_rate_block_changes_nothing(self, finished_run):
        root, config, result = finished_run
        network = result.network
        train, validation = load_datasets(config)
        kernels = config.kernel_params()
        frozen = ApParams(rho_base=0.0, beta=config.beta, r=config.r)
        before = [w.copy() for w in network.layer_weights]
        baseline = evaluate(network, validation, result.label_map, kernels)
        stream = take_block(train, config.block_size, config.seed, 7)
        m = run_block(
            network,
            stream,
            validation,
            result.cache,
            result.label_map,
            frozen,
            kernels,
            block_index=7,
            n_trials=config.block_size,
            clock=FakeClock(),
        )
        assert m.error_rate == baseline
        assert m.trials == config.block_size
        for w, b in zip(network.layer_weights, before):
            assert (w == b).all()

    def test_ap_count_matches_errors_seen(self, finished_run):
        root, config, result = finished_run
        train, validation = load_datasets(config)
        kernels = config.kernel_params()
        frozen = ApParams(rho_base=0.0, beta=config.beta, r=config.r)
        stream = take_block(train, config.block_size, config.seed, 3)
        indices = [stream.next_sample() for _ in range(config.block_size)]
        from deepsom import classify

        wrong = sum(
            classify(result.network, img, result.label_map, kernels) != lab
            for img, lab, _ in indices
        )
        stream = take_block(train, config.block_size, config.seed, 3)
        m = run_block(
            result.network,
            stream,
            validation,
            result.cache,
            result.label_map,
            frozen,
            kernels,
            block_index=3,
            n_trials=config.block_size,
            clock=FakeClock(),
        )
        assert m.ap_invocations == wrong


class TestEvaluate:
    def test_matches_serial_classify(self, finished_run, monkeypatch):
        _, config, result = finished_run
        _, validation = load_datasets(config)
        kernels = config.kernel_params()
        from deepsom import classify_batch

        preds = classify_batch(result.network, validation.images, result.label_map, kernels)
        expected = float(np.mean(preds != validation.labels))
        monkeypatch.setenv("DEEPSOM_THREADS", "1")
        serial = evaluate(result.network, validation, result.label_map, kernels, chunk=7)
        monkeypatch.setenv("DEEPSOM_THREADS", "3")
        threaded = evaluate(result.network, validation, result.label_map, kernels, chunk=7)
        assert serial == expected
        assert threaded == expected

    def test_never_mutates_weights(self, finished_run):
        _, config, result = finished_run
        _, validation = load_datasets(config)
        before = [w.copy() for w in result.network.layer_weights]
        evaluate(result.network, validation, result.label_map, config.kernel_params())
        for w, b in zip(result.network.layer_weights, before):
            assert (w == b).all()


class TestPretrainOnly:
    def test_writes_uncalibrated_checkpoint(self, tmp_path):
        config = toy_config(tmp_path, out_dir=str(tmp_path / "pre"))
        path = pretrain_only(config, specs=toy_specs(), image_shape=(8, 8), pad=0)
        stored = load_checkpoint(path)
        assert stored.label_map is None
        assert stored.cache_indices is None
        assert stored.base_seed == config.seed

    def test_validation_size_guard(self, tmp_path):
        config = toy_config(tmp_path, validation_size=500)
        with pytest.raises(ConfigurationError, match="validation_size"):
            load_datasets(config)
