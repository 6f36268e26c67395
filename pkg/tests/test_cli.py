"""Command-line behavior: subcommands, flag precedence, exit codes."""

import dataclasses
from pathlib import Path

import numpy as np
import pytest

from deepsom import load_checkpoint, save_checkpoint
from deepsom.cli import build_parser, main, resolve_config
from deepsom.dataio import write_idx_images, write_idx_labels
from deepsom.harness import parse_config_text, read_curves

from toys import halves_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small 28x28 two-class dataset plus a config file for it."""
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(11)
    train_images, train_labels = halves_dataset(rng, 50, shape=(28, 28))
    test_images, test_labels = halves_dataset(rng, 30, shape=(28, 28))
    write_idx_images(root / "train-img", train_images)
    write_idx_labels(root / "train-lab", train_labels)
    write_idx_images(root / "test-img", test_images)
    write_idx_labels(root / "test-lab", test_labels)
    config = root / "run.cfg"
    config.write_text(
        "# desk-scale smoke run\n"
        f"train_images={root / 'train-img'}\n"
        f"train_labels={root / 'train-lab'}\n"
        f"test_images={root / 'test-img'}\n"
        f"test_labels={root / 'test-lab'}\n"
        f"out_dir={root / 'run'}\n"
        "seed=3\n"
        "block_size=30\n"
        "n_blocks=1\n"
        "validation_size=20\n"
        "n_classes=2\n"
        "pretrain_iterations=40\n"
        "log_every=0\n"
    )
    return root, config


@pytest.fixture(scope="module")
def trained_run(workspace):
    root, config = workspace
    rc = main(["train", "--config", str(config)])
    assert rc == 0
    return root, config, root / "run"


class TestParsing:
    def test_no_subcommand_exits(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag_exits(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--bogus"])
        assert exc.value.code == 2

    def test_bad_export_kind_exits(self):
        with pytest.raises(SystemExit) as exc:
            main(["export", "waffles"])
        assert exc.value.code == 2

    def test_flags_beat_config_file(self, workspace):
        root, config = workspace
        args = build_parser().parse_args(
            ["train", "--config", str(config), "--seed", "9", "--r", "0.0"]
        )
        resolved = resolve_config(args)
        assert resolved.seed == 9
        assert resolved.r == 0.0
        assert resolved.block_size == 30  # from the file

    def test_blocks_flag_maps_to_n_blocks(self, workspace):
        _, config = workspace
        args = build_parser().parse_args(["train", "--config", str(config), "--blocks", "7"])
        assert resolve_config(args).n_blocks == 7

    def test_missing_config_file(self, capsys):
        rc = main(["train", "--config", "nope.cfg"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "error:" in err and "usage:" in err

    def test_unknown_config_key(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("wat=1\n")
        rc = main(["train", "--config", str(bad)])
        assert rc == 2
        assert "unknown config key" in capsys.readouterr().err


class TestTrain:
    def test_artifacts(self, trained_run):
        _, _, out = trained_run
        for name in ("manifest.txt", "curves.csv", "pretrained.dsom", "final.dsom"):
            assert (out / name).is_file(), name
        rows = read_curves(out / "curves.csv")
        assert len(rows) == 2
        assert rows[0].block == 0

    def test_manifest_records_resolved_values(self, trained_run):
        _, _, out = trained_run
        values = parse_config_text((out / "manifest.txt").read_text())
        assert values["seed"] == "3"
        assert values["n_blocks"] == "1"
        assert values["block_size"] == "30"

    def test_stdout_reports_error_rate(self, workspace, capsys, trained_run):
        # rerun from the pretrained checkpoint; cheap and prints the same way
        root, config = workspace
        rc = main(
            [
                "train",
                "--config",
                str(config),
                "--checkpoint-in",
                str(root / "run" / "pretrained.dsom"),
                "--out-dir",
                str(root / "rerun"),
                "--blocks",
                "0",
            ]
        )
        assert rc == 0
        out = capsys.readouterr().out
        assert "error_rate=" in out


class TestEval:
    def test_same_checkpoint_same_rate(self, workspace, trained_run, capsys):
        root, config = workspace
        final = str(root / "run" / "final.dsom")
        lines = []
        for _ in range(2):
            rc = main(["eval", "--config", str(config), "--checkpoint-in", final])
            assert rc == 0
            lines.append(capsys.readouterr().out.strip())
        assert lines[0] == lines[1]
        assert lines[0].startswith("error_rate=")

    def test_needs_checkpoint(self, workspace, capsys):
        _, config = workspace
        rc = main(["eval", "--config", str(config)])
        assert rc == 2
        assert "checkpoint-in" in capsys.readouterr().err

    def test_rejects_uncalibrated_checkpoint(self, workspace, trained_run, capsys):
        root, config = workspace
        stored = load_checkpoint(root / "run" / "final.dsom")
        bare = dataclasses.replace(stored, label_map=None, cache_indices=None)
        bare_path = root / "bare.dsom"
        save_checkpoint(bare_path, bare)
        rc = main(["eval", "--config", str(config), "--checkpoint-in", str(bare_path)])
        assert rc == 2
        assert "label map" in capsys.readouterr().err


class TestAssignLabels:
    def test_calibrates_a_bare_checkpoint(self, workspace, trained_run, capsys):
        root, config = workspace
        stored = load_checkpoint(root / "run" / "pretrained.dsom")
        bare = dataclasses.replace(stored, label_map=None, cache_indices=None)
        bare_path = root / "uncalibrated.dsom"
        save_checkpoint(bare_path, bare)
        labeled_path = root / "labeled.dsom"
        rc = main(
            [
                "assign-labels",
                "--config",
                str(config),
                "--checkpoint-in",
                str(bare_path),
                "--checkpoint-out",
                str(labeled_path),
                "--out-dir",
                str(root / "assign"),
            ]
        )
        assert rc == 0
        labeled = load_checkpoint(labeled_path)
        assert labeled.label_map is not None
        assert labeled.cache_indices is not None
        # same weights and subset as the orchestrated run: same assignment
        original = load_checkpoint(root / "run" / "pretrained.dsom")
        assert np.array_equal(
            labeled.label_map.class_to_neuron, original.label_map.class_to_neuron
        )

    def test_needs_checkpoint(self, workspace, capsys):
        _, config = workspace
        rc = main(["assign-labels", "--config", str(config)])
        assert rc == 2


class TestExport:
    def test_atlas(self, workspace, trained_run, capsys):
        root, config = workspace
        out = root / "figs"
        rc = main(
            [
                "export",
                "atlas",
                "--config",
                str(config),
                "--checkpoint-in",
                str(root / "run" / "final.dsom"),
                "--out-dir",
                str(out),
            ]
        )
        assert rc == 0
        raw = (out / "atlas_layer1m0.pgm").read_bytes()
        assert raw.startswith(b"P5\n71 71\n255\n")

    def test_usage(self, workspace, trained_run):
        root, config = workspace
        out = root / "figs"
        rc = main(
            [
                "export",
                "usage",
                "--config",
                str(config),
                "--checkpoint-in",
                str(root / "run" / "final.dsom"),
                "--out-dir",
                str(out),
            ]
        )
        assert rc == 0
        assert (out / "usage.pgm").read_bytes().startswith(b"P5\n10 10\n255\n")
        rows = (out / "usage_counts.csv").read_text().splitlines()
        assert rows[0] == "neuron,count"
        total = sum(int(r.split(",")[1]) for r in rows[1:])
        assert total == 20  # the validation subset

    def test_stimulus(self, workspace, trained_run):
        root, config = workspace
        out = root / "figs"
        rc = main(
            [
                "export",
                "stimulus",
                "--config",
                str(config),
                "--checkpoint-in",
                str(root / "run" / "final.dsom"),
                "--out-dir",
                str(out),
                "--layer",
                "5",
                "--module",
                "0",
                "--neuron",
                "42",
            ]
        )
        assert rc == 0
        raw = (out / "stimulus_l5m0n42.pgm").read_bytes()
        assert raw.startswith(b"P5\n28 28\n255\n")

    def test_curves_copy(self, workspace, trained_run):
        root, config = workspace
        out = root / "figs"
        rc = main(
            [
                "export",
                "curves",
                "--config",
                str(config),
                "--run-dir",
                str(root / "run"),
                "--out-dir",
                str(out),
            ]
        )
        assert rc == 0
        assert (out / "curves.csv").read_text() == (root / "run" / "curves.csv").read_text()

    def test_curves_needs_run_dir(self, workspace, capsys):
        _, config = workspace
        rc = main(["export", "curves", "--config", str(config), "--out-dir", "x"])
        assert rc == 2
        assert "run-dir" in capsys.readouterr().err

    def test_atlas_needs_checkpoint(self, workspace, capsys):
        _, config = workspace
        rc = main(["export", "atlas", "--config", str(config)])
        assert rc == 2
