import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

# Add the project root directory to Python path to use local modules
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
sys.path.insert(0, project_root)

from sesiam.evaluation import evaluate_one_pass, evaluate_with_reset
from sesiam.tracker import Tracker, TrackerSession, write_track_csv
from sesiam.training import Trainer, collate_pairs, train
from sesiam_helpers.config import ModelConfig, SynthConfig, TrainConfig
from sesiam_helpers.geometry import PatchSize, decode_offsets, iou
from sesiam_helpers.sampling import FixedPairSource, sample_pairs
from sesiam_helpers.synthetic import synth_dataset, synth_sequence
from sesiam_helpers.utilities import set_deterministic
from tests.helpers.mock_data import DESK_MODEL, DESK_SYNTH, DESK_TRAIN

FAMILY_MODEL = ModelConfig(
    template_input=47,
    detection_input=111,
    w_z=3,
    w_x=7,
    channels=16,
    se_reduction=4,
    stage_widths=(8, 16, 16, 16),
)

# one appearance, varying backgrounds, sizes and motions
FAMILY = SynthConfig(
    sequences=16,
    length=40,
    frame_width=96,
    frame_height=96,
    object_size_range=(20, 32),
    velocity_range=(-2.0, 2.0),
    noise_sigma=4.0,
    color=(230, 40, 40),
    seed=100,
)

FAMILY_TRAIN = TrainConfig(
    learning_rate=2e-3,
    batch_size=32,
    epochs=4,
    samples_per_epoch=32 * 400,
    optimizer="adam",
    seed=0,
)


class TestOverfit(unittest.TestCase):
    def test_fixed_pairs_converge(self):
        """
        200 Adam steps on 32 fixed pairs bring the loss under 10% of its initial
        value, and the decoded predictions overlap the labels with mean IoU >= 0.7.
        """
        pairs = sample_pairs(synth_dataset(DESK_SYNTH), 32, DESK_MODEL, seed=0)
        config = DESK_TRAIN.updated(
            learning_rate=2e-3, batch_size=32, epochs=1, samples_per_epoch=32 * 200, optimizer="adam"
        )
        self.assertEqual(config.steps_per_epoch, 200)
        trainer = Trainer(DESK_MODEL, config, progress=False)
        model, history = trainer.train(FixedPairSource(pairs, batch_size=32))

        initial = history.step_losses[0]
        final = float(np.mean(history.step_losses[-5:]))
        self.assertLess(final, 0.1 * initial, (initial, final))

        z, x, labels, _ = collate_pairs(pairs)
        # scored as the tracker runs it: eval mode, one pair at a time
        self.assertFalse(model.training)
        with torch.no_grad():
            predicted = torch.cat([model(z[i : i + 1], x[i : i + 1]) for i in range(len(pairs))]).double().numpy()
        size = PatchSize(DESK_MODEL.detection_input, DESK_MODEL.detection_input)
        overlaps = [
            iou(decode_offsets(p, size).normalized(), decode_offsets(t, size))
            for p, t in zip(predicted, labels.double().numpy())
        ]
        self.assertGreaterEqual(float(np.mean(overlaps)), 0.7)


class TestSyntheticTracking(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        model, cls.history = train(FAMILY_MODEL, FAMILY_TRAIN, synth_dataset(FAMILY), progress=False)
        cls.tracker = Tracker(model, delta=0.5)

    def test_training_loss_decreased(self):
        self.assertLess(self.history.epoch_losses[-1], self.history.epoch_losses[0])

    def test_held_out_moving_sequences(self):
        """
        100-frame sequences from the same family: mean IoU >= 0.5 with at most
        two failures each under the reset protocol.
        """
        held_out = FAMILY.updated(sequences=2, length=100, seed=500)
        overlaps = []
        for sequence in synth_dataset(held_out):
            result = evaluate_with_reset(lambda: TrackerSession(self.tracker), sequence, reset_skip=5)
            self.assertLessEqual(result.failures, 2, sequence.name)
            overlaps.append(result.mean_iou)
        self.assertGreaterEqual(float(np.mean(overlaps)), 0.5, overlaps)

    def test_static_target_every_frame(self):
        static = FAMILY.updated(sequences=1, length=20, velocity=(0.0, 0.0), seed=900)
        sequence = synth_sequence(static, 0)
        track = self.tracker.track_sequence(sequence)
        ious = evaluate_one_pass(track.boxes, sequence.annotations).ious
        self.assertGreaterEqual(float(ious.min()), 0.5, ious)


class TestDeterministicMode(unittest.TestCase):
    def setUp(self):
        self.threads = torch.get_num_threads()
        set_deterministic(True)
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        torch.use_deterministic_algorithms(False)
        torch.set_num_threads(self.threads)
        self.tmp.cleanup()

    def test_pairs_history_and_tracks_repeat_exactly(self):
        sequences = synth_dataset(DESK_SYNTH)
        first_pairs = sample_pairs(sequences, 6, DESK_MODEL, seed=4)
        second_pairs = sample_pairs(sequences, 6, DESK_MODEL, seed=4)
        for a, b in zip(first_pairs, second_pairs):
            self.assertTrue(np.array_equal(a.template, b.template))
            self.assertTrue(np.array_equal(a.detection, b.detection))
            self.assertEqual(a.label, b.label)

        model_a, history_a = train(DESK_MODEL, DESK_TRAIN, sequences, progress=False)
        model_b, history_b = train(DESK_MODEL, DESK_TRAIN, sequences, progress=False)
        self.assertEqual(history_a.step_losses, history_b.step_losses)

        out = Path(self.tmp.name)
        write_track_csv(out / "a.csv", Tracker(model_a).track_sequence(sequences[0]))
        write_track_csv(out / "b.csv", Tracker(model_b).track_sequence(sequences[0]))
        self.assertEqual((out / "a.csv").read_bytes(), (out / "b.csv").read_bytes())


if __name__ == "__main__":
    unittest.main()
