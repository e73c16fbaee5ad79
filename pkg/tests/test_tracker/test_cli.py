import csv
import io
import json
import os
import sys
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path
from unittest import mock

import torch

# Add the project root directory to Python path to use local modules
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
sys.path.insert(0, project_root)

from sesiam.cli import build_parser, main, overrides_from_args
from sesiam.evaluation import NOT_COMPUTED
from sesiam.model import build_model, deserialize_weights, serialize_weights
from sesiam_helpers.config import RunConfig
from sesiam_helpers.load_sequences import export_got_style, load_sequence
from sesiam_helpers.synthetic import synth_dataset
from tests.helpers.mock_data import DESK_MODEL, DESK_SYNTH, DESK_TRAIN


def run_cli(*argv):
    """Run the CLI, returning (exit code, echoed config dict, full stdout)."""
    buffer = io.StringIO()
    with redirect_stdout(buffer):
        code = main([str(arg) for arg in argv])
    output = buffer.getvalue()
    echoed, _ = json.JSONDecoder().raw_decode(output)
    return code, echoed, output


class CLITestCase(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.dataset = cls.root / "dataset"
        for sequence in synth_dataset(DESK_SYNTH):
            export_got_style(sequence, cls.dataset)
        cls.config_path = cls.root / "desk.json"
        desk = RunConfig(model=DESK_MODEL, train=DESK_TRAIN, synth=DESK_SYNTH)
        cls.config_path.write_text(desk.to_json(), encoding="utf-8")
        cls.checkpoint = cls.root / "desk.pt"
        serialize_weights(build_model(DESK_MODEL, seed=1), cls.checkpoint)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def setUp(self):
        self.out_tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.out_tmp.name)

    def tearDown(self):
        self.out_tmp.cleanup()


class TestConfigResolution(CLITestCase):
    def test_defaults_echoed_first(self):
        """
        The first thing printed is the resolved config, with the default training values.
        """
        code, echoed, _ = run_cli("synth", "--out", self.out, "--sequences", 1, "--length", 3)
        self.assertEqual(code, 0)
        self.assertEqual(echoed["train"]["learning_rate"], 0.001)
        self.assertEqual(echoed["train"]["batch_size"], 80)
        self.assertEqual(echoed["train"]["epochs"], 5)
        self.assertEqual(echoed["model"]["detection_input"], 239)
        self.assertEqual(RunConfig.from_dict(echoed).synth.length, 3)

    def test_flag_over_file_over_default(self):
        config_path = self.out / "partial.json"
        config_path.write_text(json.dumps({"synth": {"length": 7, "sequences": 2}}), encoding="utf-8")
        code, echoed, _ = run_cli(
            "synth", "--config", config_path, "--length", 4, "--out", self.out / "s", "--frame-width", 64,
            "--frame-height", 64,
        )
        self.assertEqual(code, 0)
        self.assertEqual(echoed["synth"]["length"], 4)
        self.assertEqual(echoed["synth"]["sequences"], 2)
        self.assertEqual(echoed["synth"]["noise_sigma"], 8.0)

    def test_overrides_from_args(self):
        args = build_parser().parse_args(
            ["train", "--lr", "0.01", "--stage-widths", "1", "2", "3", "4", "--no-use-se"]
        )
        self.assertEqual(
            overrides_from_args(args),
            {"train": {"learning_rate": 0.01}, "model": {"stage_widths": [1, 2, 3, 4], "use_se": False}},
        )

    def test_invalid_value_exits_with_error(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = main(["train", "--lr", "-1", "--dataset", str(self.dataset), "--out", str(self.out)])
        self.assertEqual(code, 1)
        self.assertIn("❌ ERROR: invalid train config", buffer.getvalue())

    def test_unknown_config_field(self):
        config_path = self.out / "bad.json"
        config_path.write_text(json.dumps({"train": {"learning_rat": 0.1}}), encoding="utf-8")
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = main(["synth", "--config", str(config_path), "--out", str(self.out)])
        self.assertEqual(code, 1)
        self.assertIn("learning_rat", buffer.getvalue())

    def test_bad_flag_type_is_a_usage_error(self):
        with self.assertRaises(SystemExit):
            with redirect_stdout(io.StringIO()), mock.patch("sys.stderr", io.StringIO()):
                main(["train", "--epochs", "many"])


class TestSynthCommand(CLITestCase):
    def test_writes_dataset(self):
        code, _, output = run_cli("synth", "--config", self.config_path, "--out", self.out)
        self.assertEqual(code, 0)
        names = (self.out / "list.txt").read_text(encoding="utf-8").split()
        self.assertEqual(names, ["synth_0000", "synth_0001", "synth_0002"])
        sequence = load_sequence(self.out / "synth_0001")
        self.assertEqual(len(sequence), DESK_SYNTH.length)
        self.assertIn("✅ Wrote 3 sequence(s)", output)

    def test_same_seed_byte_identical(self):
        run_cli("synth", "--config", self.config_path, "--out", self.out / "a")
        run_cli("synth", "--config", self.config_path, "--out", self.out / "b")
        files_a = sorted(p.relative_to(self.out / "a") for p in (self.out / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(self.out / "b") for p in (self.out / "b").rglob("*") if p.is_file())
        self.assertEqual(files_a, files_b)
        for relative in files_a:
            self.assertEqual((self.out / "a" / relative).read_bytes(), (self.out / "b" / relative).read_bytes())


class TestTrainCommand(CLITestCase):
    def test_zero_learning_rate_run(self):
        """
        One epoch at learning rate 0 writes the run directory and leaves the weights at init.
        """
        code, echoed, _ = run_cli(
            "train", "--config", self.config_path, "--dataset", self.dataset, "--out", self.out,
            "--epochs", 1, "--lr", 0,
        )
        self.assertEqual(code, 0)
        self.assertEqual(echoed["train"]["learning_rate"], 0.0)
        for name in ("config.json", "history.csv", "model.pt"):
            self.assertTrue((self.out / name).is_file(), name)
        self.assertTrue((self.out / "checkpoints" / "epoch_001.pt").is_file())
        with open(self.out / "history.csv", newline="", encoding="utf-8") as file:
            rows = list(csv.reader(file))
        self.assertEqual(len(rows), 1 + DESK_TRAIN.steps_per_epoch)

        model, extra = deserialize_weights(self.out / "model.pt", expected_config=DESK_MODEL)
        initial = build_model(DESK_MODEL, DESK_TRAIN.seed)
        for (name, p), (_, q) in zip(initial.named_parameters(), model.named_parameters()):
            self.assertTrue(torch.equal(p, q), name)
        self.assertIn("history", extra)

    def test_missing_dataset(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = main(["train", "--config", str(self.config_path), "--out", str(self.out)])
        self.assertEqual(code, 1)
        self.assertIn("'dataset' is required", buffer.getvalue())


class TestTrackEvalBench(CLITestCase):
    def test_track_writes_csv_and_frames(self):
        sequence_dir = self.dataset / "synth_0000"
        code, _, _ = run_cli(
            "track", "--checkpoint", self.checkpoint, "--sequence", sequence_dir, "--out", self.out,
            "--dump-frames",
        )
        self.assertEqual(code, 0)
        with open(self.out / "synth_0000.csv", newline="", encoding="utf-8") as file:
            rows = list(csv.reader(file))
        self.assertEqual(rows[0], ["frame_idx", "x1", "y1", "x2", "y2", "status"])
        self.assertEqual(len(rows), DESK_SYNTH.length + 1)
        self.assertEqual(len(list((self.out / "frames" / "synth_0000").glob("*.png"))), DESK_SYNTH.length)

    def test_track_is_reproducible(self):
        sequence_dir = self.dataset / "synth_0002"
        run_cli("track", "--checkpoint", self.checkpoint, "--sequence", sequence_dir, "--out", self.out / "a")
        run_cli("track", "--checkpoint", self.checkpoint, "--sequence", sequence_dir, "--out", self.out / "b")
        self.assertEqual(
            (self.out / "a" / "synth_0002.csv").read_bytes(), (self.out / "b" / "synth_0002.csv").read_bytes()
        )

    def test_missing_checkpoint(self):
        buffer = io.StringIO()
        with redirect_stdout(buffer):
            code = main(
                ["track", "--checkpoint", str(self.out / "nope.pt"), "--sequence", str(self.dataset / "synth_0000")]
            )
        self.assertEqual(code, 1)
        self.assertIn("does not exist", buffer.getvalue())

    def test_eval_writes_metrics(self):
        code, _, output = run_cli(
            "eval", "--checkpoint", self.checkpoint, "--dataset", self.dataset, "--out", self.out,
            "--reset-skip", 3,
        )
        self.assertEqual(code, 0)
        with open(self.out / "metrics.json", encoding="utf-8") as file:
            metrics = json.load(file)
        self.assertEqual(metrics["EAO"], NOT_COMPUTED)
        self.assertEqual(metrics["sequences"], {"processed": 3, "valid": 3, "invalid": 0})
        self.assertEqual(metrics["model_bytes"], self.checkpoint.stat().st_size)
        self.assertEqual(len(metrics["config_hash"]), 16)
        self.assertTrue((self.out / "tracks" / "synth_0001.csv").is_file())
        self.assertIn("Metrics written", output)

    def test_bench_writes_report(self):
        code, _, _ = run_cli(
            "bench", "--checkpoint", self.checkpoint, "--dataset", self.dataset, "--out", self.out,
            "--warmup", 2, "--reps", 1,
        )
        self.assertEqual(code, 0)
        with open(self.out / "bench.json", encoding="utf-8") as file:
            report = json.load(file)
        self.assertGreater(report["fps"], 0)
        self.assertEqual(report["sequence"], "synth_0000")
        self.assertEqual(report["timed_frames"], DESK_SYNTH.length - 3)
        self.assertIn("parameter_count", report)


if __name__ == "__main__":
    unittest.main()
