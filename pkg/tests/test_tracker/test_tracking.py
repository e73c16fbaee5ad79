import csv
import os
import sys
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st

# Add the project root directory to Python path to use local modules
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
sys.path.insert(0, project_root)

from sesiam.model import build_model
from sesiam.tracker import (
    MIN_BOX_SIZE,
    STATUS_FAILED,
    STATUS_OK,
    Tracker,
    TrackerSession,
    TrackerState,
    TrackResult,
    dump_annotated_frames,
    enforce_min_size,
    read_track_csv,
    write_track_csv,
)
from sesiam_helpers.errors import InvalidArgumentError, LostTargetError, TrackingFailureError
from sesiam_helpers.geometry import BoundingBox, PatchSize, clamp_box, contains, ltwh_to_corners
from sesiam_helpers.synthetic import synth_sequence
from tests.helpers.mock_data import DESK_MODEL, DESK_SYNTH, constant_sequence


def make_state(ltwh, delta=0.5):
    return TrackerState(ltwh, torch.zeros(1, 8, 3, 3), delta)


class TestSearchRegion(unittest.TestCase):
    def setUp(self):
        self.tracker = Tracker(build_model(DESK_MODEL), delta=0.5)
        self.frame = PatchSize(400, 400)

    def test_region_around_previous_box(self):
        """
        (100, 100, 40, 40) with delta 0.5 gives the region (80, 80, 160, 160).
        """
        region = self.tracker.search_region(make_state((100, 100, 40, 40)), self.frame)
        self.assertEqual(region, BoundingBox(80, 80, 160, 160))

    def test_region_clipped_at_frame_border(self):
        region = self.tracker.search_region(make_state((5, 380, 40, 40)), self.frame)
        self.assertEqual(region, BoundingBox(0, 360, 65, 400))

    def test_zero_delta_is_previous_box(self):
        region = self.tracker.search_region(make_state((10, 20, 30, 40), delta=0.0), self.frame)
        self.assertEqual(region, BoundingBox(10, 20, 40, 60))

    def test_box_outside_frame(self):
        with self.assertRaises(LostTargetError):
            self.tracker.search_region(make_state((400, 10, 20, 20)), self.frame)
        with self.assertRaises(LostTargetError):
            self.tracker.search_region(make_state((-30, 10, 20, 20)), self.frame)

    def test_negative_delta(self):
        with self.assertRaises(InvalidArgumentError):
            Tracker(build_model(DESK_MODEL), delta=-0.1)

    @settings(max_examples=300, deadline=None)
    @given(
        st.floats(-150, 399, allow_nan=False),
        st.floats(-150, 399, allow_nan=False),
        st.floats(0.5, 200, allow_nan=False),
        st.floats(0.5, 200, allow_nan=False),
        st.floats(0, 4, allow_nan=False),
    )
    def test_region_covers_visible_part_of_previous_box(self, left, top, width, height, delta):
        """
        For any delta >= 0 the search region contains the part of the previous
        box that lies inside the frame.
        """
        assume(left < 400 and top < 400 and left + width > 0 and top + height > 0)
        region = self.tracker.search_region(make_state((left, top, width, height), delta), self.frame)
        visible = clamp_box(ltwh_to_corners(left, top, width, height), self.frame)
        self.assertTrue(contains(region, visible), (region, visible))
        self.assertTrue(contains(BoundingBox(0, 0, 400, 400), region))


class TestLocate(unittest.TestCase):
    def setUp(self):
        self.tracker = Tracker(build_model(DESK_MODEL))
        self.region = BoundingBox(80, 80, 160, 160)

    def test_boundary_offsets_give_region(self):
        self.assertEqual(self.tracker.locate([-0.5, -0.5, 0.5, 0.5], self.region), self.region)

    def test_zero_offsets_give_region_center(self):
        self.assertEqual(self.tracker.locate([0, 0, 0, 0], self.region), BoundingBox(120, 120, 120, 120))

    def test_quarter_offsets(self):
        located = self.tracker.locate([-0.25, -0.25, 0.25, 0.25], self.region)
        self.assertEqual(located, BoundingBox(100, 100, 140, 140))


class TestMinimumSize(unittest.TestCase):
    def test_grows_around_center(self):
        box = enforce_min_size(BoundingBox(10, 10, 10.5, 11), PatchSize(100, 100))
        self.assertAlmostEqual(box.width, MIN_BOX_SIZE)
        self.assertAlmostEqual(box.height, MIN_BOX_SIZE)
        self.assertAlmostEqual(box.center[0], 10.25)

    def test_stays_inside_frame(self):
        self.assertEqual(enforce_min_size(BoundingBox(0, 0, 0, 0), PatchSize(100, 100)), BoundingBox(0, 0, 2, 2))
        self.assertEqual(
            enforce_min_size(BoundingBox(100, 50, 100, 51), PatchSize(100, 100)), BoundingBox(98, 49.5, 100, 51.5)
        )

    def test_large_box_untouched(self):
        box = BoundingBox(1, 2, 30, 40)
        self.assertEqual(enforce_min_size(box, PatchSize(100, 100)), box)


class TestTracker(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.model = build_model(DESK_MODEL, seed=4)
        cls.sequence = synth_sequence(DESK_SYNTH, 0)

    def setUp(self):
        self.tracker = Tracker(self.model)

    def test_init_rejects_bad_boxes(self):
        frame = self.sequence.frame(0)
        with self.assertRaises(InvalidArgumentError):
            self.tracker.init(frame, BoundingBox(10, 10, 10, 30))
        with self.assertRaises(InvalidArgumentError):
            self.tracker.init(frame, BoundingBox(200, 200, 220, 220))
        with self.assertRaises(InvalidArgumentError):
            self.tracker.init(frame, BoundingBox(10, 10, float("nan"), 30))

    def test_init_state(self):
        state = self.tracker.init(self.sequence.frame(0), self.sequence.annotations[0])
        self.assertEqual(state.box, self.sequence.annotations[0])
        self.assertEqual(tuple(state.template_features.shape), (1, 8, 3, 3))
        self.assertEqual(state.frame_index, 0)

    def test_init_partly_outside_frame(self):
        state = self.tracker.init(self.sequence.frame(0), BoundingBox(-10, -10, 20, 20))
        self.assertEqual(state.box, BoundingBox(-10, -10, 20, 20))

    def test_update_outputs_valid_box(self):
        state = self.tracker.init(self.sequence.frame(0), self.sequence.annotations[0])
        box, new_state = self.tracker.update(state, self.sequence.frame(1))
        frame = BoundingBox(0, 0, 96, 96)
        self.assertTrue(contains(frame, box))
        self.assertGreaterEqual(box.width, MIN_BOX_SIZE)
        self.assertGreaterEqual(box.height, MIN_BOX_SIZE)
        self.assertEqual(new_state.frame_index, 1)
        self.assertEqual(new_state.box, box)

    def test_template_features_constant_across_updates(self):
        """
        Cached template features stay bitwise identical over a whole track.
        """
        state = self.tracker.init(self.sequence.frame(0), self.sequence.annotations[0])
        initial = state.template_features.clone()
        for index in range(1, len(self.sequence)):
            _, state = self.tracker.update(state, self.sequence.frame(index))
            self.assertTrue(torch.equal(state.template_features, initial))

    def test_tracking_leaves_weights_untouched(self):
        before = {name: value.clone() for name, value in self.model.state_dict().items()}
        self.tracker.track_sequence(self.sequence)
        after = self.model.state_dict()
        self.assertEqual(set(after), set(before))
        for name, value in before.items():
            self.assertTrue(torch.equal(after[name], value), name)

    def test_update_is_deterministic(self):
        state = self.tracker.init(self.sequence.frame(0), self.sequence.annotations[0])
        first, _ = self.tracker.update(state, self.sequence.frame(3))
        second, _ = self.tracker.update(state, self.sequence.frame(3))
        self.assertEqual(first, second)

    def test_non_finite_output(self):
        state = self.tracker.init(self.sequence.frame(0), self.sequence.annotations[0])
        with mock.patch.object(
            self.model, "forward_from_template", return_value=torch.full((1, 4), float("nan"))
        ):
            with self.assertRaises(TrackingFailureError) as context:
                self.tracker.update(state, self.sequence.frame(1))
        self.assertIs(context.exception.last_state, state)

    def test_track_sequence(self):
        result = self.tracker.track_sequence(self.sequence)
        self.assertEqual(len(result), len(self.sequence))
        self.assertEqual(result.boxes[0], self.sequence.annotations[0])
        self.assertEqual(result.statuses, [STATUS_OK] * len(self.sequence))
        self.assertEqual(result.failures, 0)

    def test_track_sequence_marks_failures(self):
        """
        Failed updates keep the previous box and are reported as failed.
        """
        with mock.patch.object(
            self.model, "forward_from_template", return_value=torch.full((1, 4), float("inf"))
        ):
            result = self.tracker.track_sequence(self.sequence)
        self.assertEqual(result.failures, len(self.sequence) - 1)
        self.assertEqual(set(result.boxes), {self.sequence.annotations[0]})
        self.assertEqual(result.statuses[1], STATUS_FAILED)

    def test_session(self):
        session = TrackerSession(self.tracker)
        with self.assertRaises(InvalidArgumentError):
            session.update(self.sequence.frame(1))
        session.init(self.sequence.frame(0), self.sequence.annotations[0])
        box = session.update(self.sequence.frame(1))
        self.assertEqual(session.state.box, box)


class TestTrackOutputs(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)
        self.result = TrackResult(
            [BoundingBox(1, 2, 11, 10), BoundingBox(1.5, 2, 11.5, 10), BoundingBox(1.5, 2, 11.5, 10)],
            [STATUS_OK, STATUS_OK, STATUS_FAILED],
        )

    def tearDown(self):
        self.tmp.cleanup()

    def test_csv_layout(self):
        path = write_track_csv(self.out / "nested" / "seq.csv", self.result)
        with open(path, newline="", encoding="utf-8") as file:
            rows = list(csv.reader(file))
        self.assertEqual(rows[0], ["frame_idx", "x1", "y1", "x2", "y2", "status"])
        self.assertEqual(len(rows), 4)
        self.assertEqual(rows[1], ["0", "1", "2", "11", "10", "ok"])
        self.assertEqual(rows[3][-1], "failed")
        reread = read_track_csv(path)
        self.assertEqual(reread.boxes, self.result.boxes)
        self.assertEqual(reread.statuses, self.result.statuses)

    def test_dump_frames(self):
        sequence = constant_sequence(length=3, size=(32, 24))
        written = dump_annotated_frames(sequence, self.result, self.out / "frames")
        self.assertEqual([path.name for path in written], ["00000001.png", "00000002.png", "00000003.png"])
        self.assertTrue(all(path.is_file() for path in written))


if __name__ == "__main__":
    unittest.main()
