"""
IMPORTANT: If a new config field is added to one of the config dataclasses in
`sesiam_helpers.config`, it MUST be included in the relevant *_FIELDS_ORDER
dictionary. Otherwise `validate_section` reports it as an unknown field and the
config is rejected.

These schemas are used to:
- Define the order in which config sections are echoed and saved
- Enforce type constraints and custom validations on every config object
- Generate the command-line flags of the `sesiam` CLI

Each field entry may define:
  - `datatype`: expected Python type (`list` fields accept tuples too)
  - `nullable`: whether None is allowed
  - `checker`: custom validation function returning True or an error message
  - `flag`: command-line flag; fields without a flag are config-file only
  - `nargs` / `itemtype`: for list fields exposed as flags
  - `help`: flag help text

Validation logic is imported from `sesiam_helpers.fields_validations`.
"""

import sesiam_helpers.fields_validations as validate

MODEL_FIELDS_ORDER = {
    "template_input": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--template-input",
        "help": "template branch input size in px",
    },
    "detection_input": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--detection-input",
        "help": "detection branch input size in px",
    },
    "w_z": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--wz",
        "help": "template feature map size",
    },
    "w_x": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--wx",
        "help": "detection feature map size",
    },
    "channels": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--channels",
        "help": "feature channels c",
    },
    "se_reduction": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--se-reduction",
        "help": "squeeze-excitation reduction ratio r",
    },
    "backbone_id": {
        "datatype": str,
        "checker": validate.backbone_id,
        "flag": "--backbone",
        "help": "feature extractor",
    },
    "stage_widths": {
        "datatype": list,
        "checker": validate.stage_widths,
        "flag": "--stage-widths",
        "nargs": 4,
        "itemtype": int,
        "help": "channel widths of the first four backbone blocks",
    },
    "use_se": {
        "datatype": bool,
        "flag": "--use-se",
        "help": "apply channel recalibration after the extractor",
    },
}

TRAIN_FIELDS_ORDER = {
    "learning_rate": {
        "datatype": float,
        "checker": validate.non_negative_float,
        "flag": "--lr",
        "help": "optimizer step size",
    },
    "batch_size": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--batch-size",
        "help": "pairs per optimizer step",
    },
    "epochs": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--epochs",
        "help": "number of epochs",
    },
    "sigma": {
        "datatype": float,
        "checker": validate.positive_float,
        "flag": "--sigma",
        "help": "Smooth L1 sigma",
    },
    "samples_per_epoch": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--samples-per-epoch",
        "help": "training pairs generated per epoch",
    },
    "seed": {
        "datatype": int,
        "checker": validate.non_negative_int,
        "flag": "--seed",
        "help": "seed for weight init and pair sampling",
    },
    "optimizer": {
        "datatype": str,
        "checker": validate.optimizer_name,
        "flag": "--optimizer",
        "help": "sgd, momentum or adam",
    },
    "momentum": {
        "datatype": float,
        "checker": validate.unit_interval,
        "flag": "--momentum",
        "help": "momentum factor for the momentum optimizer",
    },
    "num_workers": {
        "datatype": int,
        "checker": validate.non_negative_int,
        "flag": "--num-workers",
        "help": "threads preparing batches (0 = reference mode)",
    },
    "checkpoint_dir": {
        "datatype": str,
        "nullable": True,
        "flag": "--checkpoint-dir",
        "help": "directory receiving per-epoch checkpoints",
    },
}

SYNTH_FIELDS_ORDER = {
    "sequences": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--sequences",
        "help": "number of sequences to generate",
    },
    "length": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--length",
        "help": "frames per sequence",
    },
    "frame_width": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--frame-width",
        "help": "frame width in px",
    },
    "frame_height": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--frame-height",
        "help": "frame height in px",
    },
    "object_size_range": {
        "datatype": list,
        "checker": validate.real_range,
        "flag": "--object-size-range",
        "nargs": 2,
        "itemtype": int,
        "help": "min and max object side in px",
    },
    "velocity_range": {
        "datatype": list,
        "checker": validate.real_range,
        "flag": "--velocity-range",
        "nargs": 2,
        "itemtype": float,
        "help": "min and max velocity per axis in px/frame",
    },
    "noise_sigma": {
        "datatype": float,
        "checker": validate.non_negative_float,
        "flag": "--noise-sigma",
        "help": "per-frame appearance noise (0..255 scale)",
    },
    "color": {"datatype": list, "nullable": True, "checker": validate.rgb_color},
    "object_size": {"datatype": list, "nullable": True, "checker": validate.int_pair},
    "start": {"datatype": list, "nullable": True, "checker": validate.int_pair},
    "velocity": {"datatype": list, "nullable": True},
    "seed": {
        "datatype": int,
        "checker": validate.non_negative_int,
        "flag": "--seed",
        "help": "seed of the first sequence; sequence k uses seed + k",
    },
}

TRACK_FIELDS_ORDER = {
    "delta": {
        "datatype": float,
        "checker": validate.non_negative_float,
        "flag": "--delta",
        "help": "search margin as a fraction of the box size",
    },
    "reset_skip": {
        "datatype": int,
        "checker": validate.non_negative_int,
        "flag": "--reset-skip",
        "help": "frames skipped before re-initialization after a failure",
    },
    "warmup": {
        "datatype": int,
        "checker": validate.non_negative_int,
        "flag": "--warmup",
        "help": "untimed frames before FPS timing starts",
    },
    "reps": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--reps",
        "help": "benchmark repetitions (median reported)",
    },
    "workers": {
        "datatype": int,
        "checker": validate.positive_int,
        "flag": "--workers",
        "help": "sequences evaluated in parallel",
    },
    "frame_rate": {
        "datatype": float,
        "nullable": True,
        "checker": validate.positive_float,
        "flag": "--frame-rate",
        "help": "frame rate of the real-time protocol (off when unset)",
    },
    "dump_frames": {
        "datatype": bool,
        "flag": "--dump-frames",
        "help": "write annotated frames next to the track CSV",
    },
}

RUN_FIELDS_ORDER = {
    "dataset": {
        "datatype": str,
        "nullable": True,
        "flag": "--dataset",
        "help": "GOT-style dataset root",
    },
    "sequence": {
        "datatype": str,
        "nullable": True,
        "flag": "--sequence",
        "help": "single GOT-style sequence directory",
    },
    "checkpoint": {
        "datatype": str,
        "nullable": True,
        "flag": "--checkpoint",
        "help": "model checkpoint file",
    },
    "out": {
        "datatype": str,
        "flag": "--out",
        "help": "output directory",
    },
    "deterministic": {
        "datatype": bool,
        "flag": "--deterministic",
        "help": "single-threaded reference mode",
    },
}
