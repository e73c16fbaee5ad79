#!/usr/bin/env python3
"""
Quick end-to-end run on synthetic sequences: train a small model (or load a
checkpoint), evaluate it and print the per-sequence results.
This script uses the local sesiam code, not the installed package.
"""

import argparse
import os
import sys

# Add the project root directory to Python path to use local modules
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
sys.path.insert(0, project_root)

from sesiam.evaluation import Evaluator
from sesiam.model import deserialize_weights
from sesiam.tracker import Tracker, TrackerSession
from sesiam.training import train
from sesiam_helpers.config import ModelConfig, SynthConfig, TrackConfig, TrainConfig
from sesiam_helpers.synthetic import synth_dataset

SMALL_MODEL = ModelConfig(
    template_input=47,
    detection_input=111,
    w_z=3,
    w_x=7,
    channels=16,
    se_reduction=4,
    stage_widths=(8, 16, 16, 16),
)
SMALL_SYNTH = SynthConfig(
    sequences=8,
    length=40,
    frame_width=96,
    frame_height=96,
    object_size_range=(20, 32),
    velocity_range=(-2.0, 2.0),
    noise_sigma=4.0,
    color=(230, 40, 40),
    seed=100,
)


def run_tracker_on_synthetic(checkpoint=None, steps=400, verbose=False, summary_only=False):
    """Train (unless a checkpoint is given) and evaluate on held-out synthetic sequences."""
    if checkpoint:
        model, _ = deserialize_weights(checkpoint)
        print(f"Loaded checkpoint `{checkpoint}`")
    else:
        train_config = TrainConfig(
            learning_rate=2e-3,
            batch_size=32,
            epochs=1,
            samples_per_epoch=32 * steps,
            optimizer="adam",
        )
        print(f"Training on {SMALL_SYNTH.sequences} synthetic sequence(s) for {steps} step(s)...")
        model, history = train(SMALL_MODEL, train_config, synth_dataset(SMALL_SYNTH), progress=verbose)
        print(f"  loss {history.step_losses[0]:.4f} -> {history.step_losses[-1]:.4f}")

    held_out = SMALL_SYNTH.updated(sequences=3, length=100, seed=500)
    tracker = Tracker(model)
    evaluator = Evaluator(lambda: TrackerSession(tracker), TrackConfig(frame_rate=30.0))
    results = evaluator.process_sequences(synth_dataset(held_out))

    print("=" * 60)
    print("TRACKER RESULTS SUMMARY")
    print("=" * 60)
    print(f"Total sequences processed: {results['metadata']['processed']}")
    print(f"Valid sequences: {results['metadata']['valid']}")
    print(f"Invalid sequences: {results['metadata']['invalid']}")
    print()

    if not summary_only:
        for key, entry in results.items():
            if key in ["metadata", "summary", "overall"]:
                continue
            print(f"Sequence: {key}")
            print("-" * 40)
            if "auc" in entry:
                print(
                    f"✅ AUC {entry['auc']:.3f} | P@20 {entry['precision_at_20']:.3f} | "
                    f"accuracy {entry['accuracy']:.3f} | failures {entry['failures']} | "
                    f"{entry['fps_one_pass']:.1f} FPS"
                )
            for level, items in entry.get("results", {}).items():
                print("❌ ERRORS:" if level == "errors" else "⚠️  WARNINGS:")
                for error_type, details in items.items():
                    print(f"  • {error_type} ({len(details)} instances)")
                    shown = details if verbose else dict(list(details.items())[:3])
                    for error_id, description in shown.items():
                        print(f"    {error_id}: {description}")
            print()

    overall = results.get("overall")
    if overall:
        print(
            f"Overall: AUC {overall['auc']:.3f}, accuracy {overall['accuracy']:.3f}, "
            f"failures {overall['failures']}"
        )
    if results["summary"]:
        print("ERROR TYPE SUMMARY:")
        print("-" * 20)
        for error_type, count in results["summary"].items():
            print(f"{error_type}: {count}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Train and evaluate the tracker on synthetic sequences")
    parser.add_argument("--checkpoint", help="evaluate this checkpoint instead of training")
    parser.add_argument("--steps", type=int, default=400, help="training steps")
    parser.add_argument("--verbose", "-v", action="store_true", help="show every error and a progress bar")
    parser.add_argument("--summary", "-s", action="store_true", help="show only the summary")
    args = parser.parse_args()

    print("Running Tracker on Synthetic Sequences")
    print("=" * 50)
    print("Using LOCAL sesiam code (not installed package)")
    print()

    try:
        run_tracker_on_synthetic(
            checkpoint=args.checkpoint, steps=args.steps, verbose=args.verbose, summary_only=args.summary
        )
    except Exception as e:
        print(f"Error running tracker: {e}")
        import traceback

        traceback.print_exc()
