"""
Command-line entry point: `sesiam synth|train|track|eval|bench`.

Every command resolves its configuration (defaults, then `--config FILE`,
then flags), echoes it as JSON, and writes everything under `--out`.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from sesiam_helpers import fields as flds
from sesiam_helpers.config import RunConfig, load_run_config
from sesiam_helpers.errors import SesiamError
from sesiam_helpers.load_sequences import (
    LIST_FILE,
    export_got_style,
    load_got_style,
    load_sequence,
    sequence_folders,
)
from sesiam_helpers.synthetic import synth_dataset
from sesiam_helpers.utilities import (
    config_hash,
    deterministic_requested,
    get_str_with_sep_from,
    set_deterministic,
)

from .evaluation import Evaluator, ModelSize, benchmark_fps, write_results
from .model import count_parameters, deserialize_weights, serialize_weights
from .tracker import Tracker, TrackerSession, dump_annotated_frames, write_track_csv
from .training import train

logger = logging.getLogger(__name__)

COMMAND_SECTIONS = {
    "synth": ["synth"],
    "train": ["model", "train"],
    "track": ["track"],
    "eval": ["track"],
    "bench": ["track"],
}
SECTION_FIELDS = {
    "model": flds.MODEL_FIELDS_ORDER,
    "train": flds.TRAIN_FIELDS_ORDER,
    "synth": flds.SYNTH_FIELDS_ORDER,
    "track": flds.TRACK_FIELDS_ORDER,
}
COMMAND_HELP = {
    "synth": "write synthetic sequences in GOT-style layout",
    "train": "train a model on a GOT-style dataset",
    "track": "track one sequence with a checkpoint",
    "eval": "evaluate a checkpoint on a dataset",
    "bench": "measure tracking speed on one sequence",
}


def _add_field_flags(parser: argparse.ArgumentParser, section: Optional[str], fields_order: Dict) -> None:
    for name, rules in fields_order.items():
        flag = rules.get("flag")
        if not flag:
            continue
        dest = f"{section}__{name}" if section else name
        kwargs = {"dest": dest, "default": None, "help": rules.get("help")}
        if rules["datatype"] is bool:
            kwargs["action"] = argparse.BooleanOptionalAction
        elif rules["datatype"] is list:
            kwargs["nargs"] = rules["nargs"]
            kwargs["type"] = rules["itemtype"]
        else:
            kwargs["type"] = rules["datatype"]
        parser.add_argument(flag, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sesiam", description="Lightweight Siamese tracker with channel recalibration."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command, sections in COMMAND_SECTIONS.items():
        subparser = subparsers.add_parser(command, help=COMMAND_HELP[command])
        subparser.add_argument("--config", help="JSON config file")
        subparser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        _add_field_flags(subparser, None, flds.RUN_FIELDS_ORDER)
        for section in sections:
            _add_field_flags(subparser, section, SECTION_FIELDS[section])
        if command == "train":
            subparser.add_argument("--resume", help="checkpoint to resume training from")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict:
    overrides: Dict = {}
    for dest, value in vars(args).items():
        if value is None:
            continue
        if "__" in dest:
            section, name = dest.split("__", 1)
            overrides.setdefault(section, {})[name] = list(value) if isinstance(value, list) else value
        elif dest in flds.RUN_FIELDS_ORDER:
            overrides[dest] = value
    return overrides


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config, overrides_from_args(args))
    if config.deterministic or deterministic_requested():
        config = RunConfig(
            model=config.model,
            train=config.train.updated(num_workers=0),
            synth=config.synth,
            track=config.track.updated(workers=1),
            dataset=config.dataset,
            sequence=config.sequence,
            checkpoint=config.checkpoint,
            out=config.out,
            deterministic=True,
        )
    return config


def cmd_synth(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for sequence in synth_dataset(config.synth):
        folder = export_got_style(sequence, out)
        names.append(folder.name)
        print(f"  - {folder.name}: {len(sequence)} frames")
    with open(out / LIST_FILE, "w", encoding="utf-8") as file:
        file.write("\n".join(names) + "\n")
    print(f"✅ Wrote {len(names)} sequence(s) to `{out}`")
    return out


def cmd_train(config: RunConfig, resume_from: Optional[str] = None) -> Path:
    config.require_paths("dataset")
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    train_config = config.train
    if not train_config.checkpoint_dir:
        train_config = train_config.updated(checkpoint_dir=str(out / "checkpoints"))
    with open(out / "config.json", "w", encoding="utf-8") as file:
        file.write(config.to_json())

    sequences = list(load_got_style(config.dataset))
    print(
        f"Training on {len(sequences)} sequence(s): {train_config.epochs} epoch(s) x "
        f"{train_config.steps_per_epoch} step(s) of {train_config.batch_size} pairs"
    )
    model, history = train(config.model, train_config, sequences, resume_from=resume_from)
    for epoch, loss in enumerate(history.epoch_losses, start=1):
        print(f"  epoch {epoch}: mean loss {loss:.6f}")
    history.write_csv(out / "history.csv")
    final = out / "model.pt"
    serialize_weights(model, final, extra={"train_config": train_config.to_dict(), "history": history.to_dict()})
    print(f"✅ Model written to `{final}`")
    return final


def _load_tracker(config: RunConfig) -> Tracker:
    config.require_paths("checkpoint")
    model, _ = deserialize_weights(config.checkpoint)
    return Tracker(model, delta=config.track.delta)


def cmd_track(config: RunConfig) -> Path:
    config.require_paths("sequence")
    tracker = _load_tracker(config)
    sequence = load_sequence(config.sequence)
    result = tracker.track_sequence(sequence)
    out = Path(config.out)
    csv_path = write_track_csv(out / f"{sequence.name}.csv", result)
    if config.track.dump_frames:
        written = dump_annotated_frames(sequence, result, out / "frames" / sequence.name)
        print(f"  annotated frames: {len(written)} in `{out / 'frames' / sequence.name}`")
    print(f"✅ Tracked {len(result)} frame(s), {result.failures} failure(s): `{csv_path}`")
    return csv_path


def cmd_eval(config: RunConfig) -> Path:
    config.require_paths("dataset")
    tracker = _load_tracker(config)
    out = Path(config.out)
    evaluator = Evaluator(lambda: TrackerSession(tracker), config.track, output_dir=out)
    results = evaluator.process_sequences(load_got_style(config.dataset))
    size = ModelSize(count_parameters(tracker.model), os.path.getsize(config.checkpoint))
    metrics_path = write_results(results, out, model_size=size, config_hash=config_hash(config.to_dict()))
    overall = results.get("overall", {})
    metadata = results["metadata"]
    print(
        f"Sequences: {metadata['processed']} processed, {metadata['valid']} valid, "
        f"{metadata['invalid']} invalid"
    )
    if overall:
        print(
            f"  AUC {overall['auc']:.3f} | P@20 {overall['precision_at_20']:.3f} | "
            f"accuracy {overall['accuracy']:.3f} | failures {overall['failures']}"
        )
    print(f"  parameters: {get_str_with_sep_from(size.parameter_count)} ({size.megabytes:.2f} MB)")
    print(f"✅ Metrics written to `{metrics_path}`")
    return metrics_path


def cmd_bench(config: RunConfig) -> Path:
    if config.sequence:
        config.require_paths("sequence")
        sequence = load_sequence(config.sequence)
    else:
        config.require_paths("dataset")
        sequence = load_sequence(sequence_folders(config.dataset)[0])
    tracker = _load_tracker(config)
    result = benchmark_fps(
        lambda: TrackerSession(tracker), sequence, warmup=config.track.warmup, reps=config.track.reps
    )
    size = ModelSize(count_parameters(tracker.model), os.path.getsize(config.checkpoint))
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {
        "fps": result.fps,
        "rep_fps": result.rep_fps,
        "timed_frames": result.timed_frames,
        "hardware": result.hardware,
        "sequence": sequence.name,
        **size.to_dict(),
    }
    bench_path = out / "bench.json"
    with open(bench_path, "w", encoding="utf-8") as file:
        json.dump(report, file, indent=2)
    print(f"  hardware: {result.hardware}")
    print(f"✅ {result.fps:.1f} FPS (median of {len(result.rep_fps)}) on `{sequence.name}`")
    return bench_path


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = resolve_config(args)
        print(config.to_json())
        if config.deterministic:
            set_deterministic(True)
        if args.command == "synth":
            cmd_synth(config)
        elif args.command == "train":
            cmd_train(config, resume_from=args.resume)
        elif args.command == "track":
            cmd_track(config)
        elif args.command == "eval":
            cmd_eval(config)
        elif args.command == "bench":
            cmd_bench(config)
    except SesiamError as e:
        print(f"❌ ERROR: {e}")
        return 1
    except Exception as e:
        logger.debug("unexpected failure", exc_info=True)
        print(f"❌ ERROR: unexpected failure in `{args.command}`: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
