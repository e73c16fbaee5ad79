"""
Tracking metrics and the dataset evaluation driver.

Trackers are driven through a factory returning objects with
`init(frame, box)` and `update(frame) -> BoundingBox` (see `TrackerSession`),
so scripted trackers can be evaluated exactly like the network.
"""

import json
import logging
import os
import tempfile
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from copy import deepcopy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from sesiam_helpers.config import TrackConfig  # noqa: E402
from sesiam_helpers.errors import InvalidArgumentError, SesiamError, StructureError  # noqa: E402
from sesiam_helpers.geometry import BoundingBox, center_error, iou, iou_many  # noqa: E402
from sesiam_helpers.load_sequences import SequenceRecord  # noqa: E402
from sesiam_helpers.utilities import hardware_descriptor, single_threaded  # noqa: E402

from .model import SiameseSENet, count_parameters, serialize_weights  # noqa: E402
from .tracker import STATUS_FAILED, STATUS_OK, TrackResult, write_track_csv  # noqa: E402

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
PRECISION_REFERENCE_PX = 20
NOT_COMPUTED = "not computed"

TrackerFactory = Callable[[], object]


@dataclass
class OnePassResult:
    success_curve: np.ndarray
    auc: float
    precision_curve: np.ndarray
    precision_at_20: float
    mean_iou: float
    ious: np.ndarray
    center_errors: np.ndarray


def evaluate_one_pass(outputs: Sequence[BoundingBox], groundtruth: Sequence[BoundingBox]) -> OnePassResult:
    """
    Success and precision curves of one uninterrupted pass.

    success(t) is the fraction of frames with IoU strictly above t for 101
    thresholds in [0, 1], AUC its mean; precision(p) is the fraction of frames
    whose center error is at most p pixels, p = 0..50.
    """
    if len(outputs) != len(groundtruth):
        raise StructureError(
            f"{len(outputs)} tracker outputs for {len(groundtruth)} ground-truth boxes"
        )
    if not len(outputs):
        raise StructureError("cannot evaluate an empty sequence")
    predicted = np.asarray([tuple(box) for box in outputs], dtype=np.float64)
    expected = np.asarray([tuple(box) for box in groundtruth], dtype=np.float64)
    ious = iou_many(predicted, expected)
    errors = center_error(predicted, expected)
    success = np.mean(ious[:, None] > SUCCESS_THRESHOLDS[None, :], axis=0)
    precision = np.mean(errors[:, None] <= PRECISION_THRESHOLDS[None, :], axis=0)
    return OnePassResult(
        success_curve=success,
        auc=float(np.mean(success)),
        precision_curve=precision,
        precision_at_20=float(precision[PRECISION_REFERENCE_PX]),
        mean_iou=float(np.mean(ious)),
        ious=ious,
        center_errors=errors,
    )


@dataclass
class ResetResult:
    mean_iou: float
    failures: int
    valid_frames: int
    failure_frames: List[int] = field(default_factory=list)
    init_frames: List[int] = field(default_factory=list)


def _next_init_frame(sequence: SequenceRecord, start: int) -> Optional[int]:
    for index in range(start, len(sequence)):
        if sequence.visibility[index] and sequence.annotations[index].area > 0:
            return index
    return None


def evaluate_with_reset(factory: TrackerFactory, sequence: SequenceRecord, reset_skip: int = 5) -> ResetResult:
    """
    Accuracy and robustness with re-initialization after failures.

    A failure is a frame whose output has IoU 0 with the ground truth, or whose
    update raised. The tracker is re-initialized on the ground truth
    `reset_skip` frames after a failure. Initialization frames, failure frames,
    the skipped frames and frames without a visible target are left out of the
    IoU mean.
    """
    if reset_skip < 0:
        raise InvalidArgumentError(f"reset_skip must be non-negative, got {reset_skip}")
    tracker = factory()
    overlaps, failure_frames, init_frames = [], [], []
    index = _next_init_frame(sequence, 0)
    needs_init = True
    while index is not None and index < len(sequence):
        frame = sequence.frame(index)
        if needs_init:
            tracker.init(frame, sequence.annotations[index])
            init_frames.append(index)
            needs_init = False
            index += 1
            continue
        if not sequence.visibility[index]:
            index += 1
            continue
        try:
            overlap = iou(tracker.update(frame), sequence.annotations[index])
        except SesiamError as e:
            logger.debug("%s frame %d: tracker error counted as failure: %s", sequence.name, index, e)
            overlap = 0.0
        if overlap > 0:
            overlaps.append(overlap)
            index += 1
        else:
            failure_frames.append(index)
            index = _next_init_frame(sequence, index + max(reset_skip, 1))
            needs_init = True
    return ResetResult(
        mean_iou=float(np.mean(overlaps)) if overlaps else 0.0,
        failures=len(failure_frames),
        valid_frames=len(overlaps),
        failure_frames=failure_frames,
        init_frames=init_frames,
    )


@dataclass
class RealtimeResult:
    boxes: List[BoundingBox]
    processed: List[bool]
    metrics: OnePassResult

    @property
    def skipped(self) -> int:
        return sum(not done for done in self.processed)


def evaluate_realtime(
    factory: TrackerFactory,
    sequence: SequenceRecord,
    frame_rate: float,
    clock: Callable[[], float] = time.perf_counter,
) -> RealtimeResult:
    """
    One pass with frames arriving at a fixed rate.

    Frame k arrives at k / frame_rate seconds. A frame that arrives while the
    tracker is still busy is not processed and reports the last output; the
    tracker then picks up the next frame that arrives after it is free.
    """
    if not frame_rate > 0:
        raise InvalidArgumentError(f"frame_rate must be positive, got {frame_rate}")
    frames = sequence.preload()
    tracker = factory()
    started = clock()
    tracker.init(frames.frame(0), frames.annotations[0])
    busy_until = clock() - started
    last = BoundingBox(*frames.annotations[0])
    boxes, processed = [last], [True]
    for index in range(1, len(frames)):
        arrival = index / frame_rate
        if busy_until > arrival:
            boxes.append(last)
            processed.append(False)
            continue
        started = clock()
        try:
            last = tracker.update(frames.frame(index))
        except SesiamError as e:
            logger.debug("%s frame %d: %s", sequence.name, index, e)
        busy_until = arrival + (clock() - started)
        boxes.append(last)
        processed.append(True)
    return RealtimeResult(boxes, processed, evaluate_one_pass(boxes, frames.annotations))


@dataclass
class BenchmarkResult:
    fps: float
    rep_fps: List[float]
    timed_frames: int
    hardware: str


def benchmark_fps(
    factory: TrackerFactory,
    sequence: SequenceRecord,
    warmup: int = 5,
    reps: int = 3,
    clock: Callable[[], float] = time.perf_counter,
) -> BenchmarkResult:
    """
    Median tracking speed over `reps` passes.

    Frames are decoded into memory first. Each pass initializes a fresh tracker
    on frame 0, runs `warmup` untimed updates and times the remaining updates,
    single-threaded.

    The sequence needs at least `warmup + 2` frames: frame 0 for init, `warmup`
    untimed frames and at least one timed frame. A sequence of exactly
    `warmup + 1` frames leaves nothing to time and raises InvalidArgumentError.
    """
    timed_frames = len(sequence) - 1 - warmup
    if timed_frames < 1:
        raise InvalidArgumentError(
            f"sequence `{sequence.name}` has {len(sequence)} frames; "
            f"at least {warmup + 2} are needed for warmup {warmup}"
        )
    frames = [sequence.frame(index) for index in range(len(sequence))]
    rep_fps = []
    with single_threaded():
        hardware = hardware_descriptor()
        for _ in range(reps):
            tracker = factory()
            tracker.init(frames[0], sequence.annotations[0])
            for frame in frames[1:1 + warmup]:
                tracker.update(frame)
            started = clock()
            for frame in frames[1 + warmup:]:
                tracker.update(frame)
            elapsed = max(clock() - started, 1e-9)
            rep_fps.append(timed_frames / elapsed)
    return BenchmarkResult(float(np.median(rep_fps)), rep_fps, timed_frames, hardware)


@dataclass
class ModelSize:
    parameter_count: int
    bytes: int

    @property
    def megabytes(self) -> float:
        return self.bytes / (1024 * 1024)

    def to_dict(self) -> Dict:
        return {
            "parameter_count": self.parameter_count,
            "model_bytes": self.bytes,
            "model_megabytes": round(self.megabytes, 4),
        }


def report_model_size(model: SiameseSENet, path=None) -> ModelSize:
    """Parameter count and size of the serialized checkpoint (written to `path` or a temp file)."""
    if path is not None:
        serialize_weights(model, path)
        return ModelSize(count_parameters(model), os.path.getsize(path))
    with tempfile.TemporaryDirectory() as directory:
        checkpoint = Path(directory) / "model.pt"
        serialize_weights(model, checkpoint)
        return ModelSize(count_parameters(model), os.path.getsize(checkpoint))


def run_one_pass(factory: TrackerFactory, sequence: SequenceRecord):
    """
    Track a whole sequence without resets.

    Returns:
        tuple: the `TrackResult` and the frames-per-second of the updates.
    """
    tracker = factory()
    tracker.init(sequence.frame(0), sequence.annotations[0])
    last = BoundingBox(*sequence.annotations[0])
    boxes, statuses = [last], [STATUS_OK]
    elapsed = 0.0
    for index in range(1, len(sequence)):
        frame = sequence.frame(index)
        started = time.perf_counter()
        try:
            last = tracker.update(frame)
            statuses.append(STATUS_OK)
        except SesiamError as e:
            logger.debug("%s frame %d: %s", sequence.name, index, e)
            statuses.append(STATUS_FAILED)
        elapsed += time.perf_counter() - started
        boxes.append(last)
    fps = (len(sequence) - 1) / elapsed if elapsed > 0 else 0.0
    return TrackResult(boxes, statuses), fps


@dataclass
class Evaluator:
    """
    Runs the metric suite over a set of sequences.

    Attributes:
        factory: builds one tracker per sequence.
        track_config (TrackConfig): reset skip, workers and real-time frame rate.
        output_dir (Path, optional): where per-sequence track CSVs are written.
        results (dict): `metadata` counters, a `summary` of error counts, and
            one entry per sequence with its metrics or its errors.
    """

    factory: TrackerFactory
    track_config: TrackConfig = field(default_factory=TrackConfig)
    output_dir: Optional[Path] = None

    def __post_init__(self):
        self.results = {
            "metadata": {"processed": 0, "valid": 0, "invalid": 0},
            "summary": defaultdict(lambda: 0),
        }
        self.error_levels = {"errors": {}, "warnings": {}}
        self.curves = {}

    def add_error(self, sequence_results: Dict, error_type: str, details: str, level: str = "errors") -> None:
        """
        Record an error of the given type for one sequence.

        Args:
            sequence_results (dict): the sequence's `errors` / `warnings` store.
            error_type (str): category of the error.
            details (str): description of the error.
            level (str): "errors" or "warnings".
        """
        if level not in self.error_levels:
            raise RuntimeError(f"Wrong level type!: {level}")
        entries = sequence_results[level].setdefault(error_type, {})
        entries[len(entries) + 1] = details
        self.results["summary"][error_type] += 1

    def evaluate_sequence(self, sequence: SequenceRecord) -> Dict:
        sequence_results = deepcopy(self.error_levels)
        track, fps = run_one_pass(self.factory, sequence)
        for index, status in enumerate(track.statuses):
            if status == STATUS_FAILED:
                self.add_error(sequence_results, "tracking failure", f"frame {index}", level="warnings")
        one_pass = evaluate_one_pass(track.boxes, sequence.annotations)
        reset = evaluate_with_reset(self.factory, sequence, self.track_config.reset_skip)
        entry = {
            "frames": len(sequence),
            "auc": one_pass.auc,
            "precision_at_20": one_pass.precision_at_20,
            "mean_iou_one_pass": one_pass.mean_iou,
            "accuracy": reset.mean_iou,
            "failures": reset.failures,
            "fps_one_pass": fps,
        }
        if self.track_config.frame_rate is not None:
            realtime = evaluate_realtime(self.factory, sequence, self.track_config.frame_rate)
            entry["realtime_auc"] = realtime.metrics.auc
            entry["realtime_skipped_frames"] = realtime.skipped
        if self.output_dir is not None:
            write_track_csv(Path(self.output_dir) / "tracks" / f"{sequence.name}.csv", track)
        self.curves[sequence.name] = (one_pass.success_curve, one_pass.precision_curve)
        entry["results"] = {level: items for level, items in sequence_results.items() if items}
        return entry

    def _evaluate_safely(self, sequence: SequenceRecord):
        try:
            return sequence.name, self.evaluate_sequence(sequence), None
        except Exception as e:
            return sequence.name, None, e

    def process_sequences(self, sequences: Sequence[SequenceRecord]) -> Dict:
        """
        Evaluate every sequence; a failing sequence is recorded and skipped.

        Returns:
            dict: plain-dict results with an `overall` aggregate.
        """
        sequences = list(sequences)
        if self.track_config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.track_config.workers) as pool:
                outcomes = list(pool.map(self._evaluate_safely, sequences))
        else:
            outcomes = [self._evaluate_safely(sequence) for sequence in sequences]

        for name, entry, error in outcomes:
            self.results["metadata"]["processed"] += 1
            if error is not None:
                logger.error("processing sequence `%s` failed: %s", name, error)
                self.results[name] = {
                    "results": {"errors": {"processing error": {1: f"Failed to process sequence: {error}"}}}
                }
                self.results["summary"]["processing error"] += 1
                self.results["metadata"]["invalid"] += 1
                continue
            self.results[name] = entry
            self.results["metadata"]["valid"] += 1

        self.results["overall"] = self.aggregate()
        return convert_to_dict(self.results)

    def aggregate(self) -> Dict:
        entries = [
            value for key, value in self.results.items()
            if key not in ("metadata", "summary", "overall") and "auc" in value
        ]
        if not entries:
            return {}
        success = np.mean([curves[0] for curves in self.curves.values()], axis=0)
        precision = np.mean([curves[1] for curves in self.curves.values()], axis=0)
        return {
            "auc": float(np.mean(success)),
            "precision_at_20": float(precision[PRECISION_REFERENCE_PX]),
            "accuracy": float(np.mean([entry["accuracy"] for entry in entries])),
            "failures": int(sum(entry["failures"] for entry in entries)),
            "mean_iou_one_pass": float(np.mean([entry["mean_iou_one_pass"] for entry in entries])),
            "fps_one_pass": float(np.mean([entry["fps_one_pass"] for entry in entries])),
            "success_curve": success.tolist(),
            "precision_curve": precision.tolist(),
        }


def convert_to_dict(obj):
    """Recursively replace defaultdicts (and numpy scalars) with plain values."""
    if isinstance(obj, dict):
        return {key: convert_to_dict(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [convert_to_dict(value) for value in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_curve(path: Path, header: str, thresholds, values) -> None:
    with open(path, "w", encoding="utf-8") as file:
        file.write(f"{header},value\n")
        for threshold, value in zip(thresholds, values):
            file.write(f"{threshold:g},{value!r}\n")


def _plot_curve(path: Path, thresholds, values, xlabel: str, title: str, label: str) -> None:
    fig, ax = plt.subplots()
    ax.plot(thresholds, values, "-", label=label)
    ax.set(xlabel=xlabel, ylabel="Fraction of frames", ylim=(0, 1.05), title=title)
    ax.grid(True)
    ax.legend(loc="lower left")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_results(
    results: Dict,
    out_dir,
    model_size: Optional[ModelSize] = None,
    config_hash: str = "",
    extra: Optional[Dict] = None,
) -> Path:
    """
    Write `metrics.json`, `success.csv`, `precision.csv` and the two plots.

    Returns:
        Path: the metrics file.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overall = dict(results.get("overall", {}))
    success = overall.pop("success_curve", None)
    precision = overall.pop("precision_curve", None)

    metrics = {
        **overall,
        "EAO": NOT_COMPUTED,
        "EFO": NOT_COMPUTED,
        "hardware": hardware_descriptor(),
        "config_hash": config_hash,
        "sequences": results.get("metadata", {}),
        "errors_summary": results.get("summary", {}),
        "per_sequence": {
            key: value for key, value in results.items()
            if key not in ("metadata", "summary", "overall")
        },
    }
    if model_size is not None:
        metrics.update(model_size.to_dict())
    if extra:
        metrics.update(extra)

    metrics_path = out_dir / "metrics.json"
    with open(metrics_path, "w", encoding="utf-8") as file:
        json.dump(convert_to_dict(metrics), file, indent=2)

    if success is not None:
        _write_curve(out_dir / "success.csv", "threshold", SUCCESS_THRESHOLDS, success)
        _plot_curve(
            out_dir / "success.png", SUCCESS_THRESHOLDS, success,
            "Overlap threshold", "Success plot", f"AUC {overall.get('auc', 0.0):.3f}",
        )
    if precision is not None:
        _write_curve(out_dir / "precision.csv", "threshold", PRECISION_THRESHOLDS, precision)
        _plot_curve(
            out_dir / "precision.png", PRECISION_THRESHOLDS, precision,
            "Location error threshold (px)", "Precision plot",
            f"P@20 {overall.get('precision_at_20', 0.0):.3f}",
        )
    return metrics_path
