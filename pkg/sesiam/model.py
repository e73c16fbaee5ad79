"""
Siamese tracking network.

Both inputs pass through one shared feature extractor and a squeeze-excitation
layer; the detection features are cross-correlated channel by channel with the
template features, and a 1x1 convolution followed by one fully-connected layer
regresses the four relative corner offsets of the target.

Feature maps are channels-first tensors `(N, c, h, w)`.

Default extractor ("small"):

    block  kernel  stride  padding  out channels     then
    1      7x7     2       1        stage_widths[0]  2x2 max-pool, stride 2
    2      5x5     2       2        stage_widths[1]  2x2 max-pool, stride 2
    3      3x3     1       1        stage_widths[2]
    4      3x3     1       1        stage_widths[3]
    5      3x3     1       1        channels

Every block is conv (no bias) + batch-norm + ReLU; the batch-norm scale and
shift are shared by both branches, its running statistics are kept per branch.
Spatial sizes: 239 -> 15, 125 -> 7, 111 -> 7, 47 -> 3.
"""

import logging
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from sesiam_helpers.config import ModelConfig
from sesiam_helpers.errors import CheckpointError, ConfigError, ShapeError

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
INIT_STD = 0.01
BRANCHES = ("template", "detection")
RESNET_NORM_GROUPS = 8


def small_feature_size(input_size: int) -> int:
    """Spatial output size of the small extractor for a square input."""
    size = (input_size + 2 - 7) // 2 + 1
    size //= 2
    size = (size + 4 - 5) // 2 + 1
    size //= 2
    return size


class BranchBatchNorm2d(nn.Module):
    """
    Batch-norm whose scale and shift are shared by both branches while the
    running statistics are kept per branch (`template`, `detection`).
    """

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.stats = nn.ModuleDict({branch: nn.BatchNorm2d(channels, affine=False) for branch in BRANCHES})

    def forward(self, x: torch.Tensor, branch: str) -> torch.Tensor:
        return self.stats[branch](x) * self.weight[:, None, None] + self.bias[:, None, None]


class ConvBlock(nn.Sequential):
    """conv (no bias) + per-branch batch-norm + ReLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int):
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel, stride=stride, padding=padding, bias=False),
            BranchBatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: torch.Tensor, branch: str) -> torch.Tensor:
        conv, norm, relu = self
        return relu(norm(conv(x), branch))


class SmallBackbone(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        w1, w2, w3, w4 = config.stage_widths
        self.features = nn.Sequential(
            ConvBlock(3, w1, 7, 2, 1),
            nn.MaxPool2d(2, stride=2),
            ConvBlock(w1, w2, 5, 2, 2),
            nn.MaxPool2d(2, stride=2),
            ConvBlock(w2, w3, 3, 1, 1),
            ConvBlock(w3, w4, 3, 1, 1),
            ConvBlock(w4, config.channels, 3, 1, 1),
        )

    def forward(self, image: torch.Tensor, out_size: int, branch: str) -> torch.Tensor:
        for layer in self.features:
            image = layer(image, branch) if isinstance(layer, ConvBlock) else layer(image)
        return image


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(RESNET_NORM_GROUPS, channels)


class ResNet18Backbone(nn.Module):
    """
    ResNet-18 trunk up to `layer3`, projected to `channels` and pooled to `out_size`.

    The trunk normalizes with group-norm (same behavior in train and eval mode);
    the projection uses per-branch batch-norm.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        from torchvision.models import resnet18

        trunk = resnet18(weights=None, norm_layer=_group_norm)
        self.trunk = nn.Sequential(
            trunk.conv1,
            trunk.bn1,
            trunk.relu,
            trunk.maxpool,
            trunk.layer1,
            trunk.layer2,
            trunk.layer3,
        )
        self.project = ConvBlock(256, config.channels, 1, 1, 0)

    def forward(self, image: torch.Tensor, out_size: int, branch: str) -> torch.Tensor:
        return F.adaptive_avg_pool2d(self.project(self.trunk(image), branch), out_size)


BACKBONES = {
    "small": SmallBackbone,
    "resnet18": ResNet18Backbone,
}


class SEBlock(nn.Module):
    """
    Squeeze-excitation channel recalibration.

    gate = sigmoid(W2 relu(W1 avgpool(f))), W1: c -> c/r, W2: c/r -> c;
    the output is `f` scaled per channel by the gate.
    """

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        self.squeeze = nn.Linear(channels, channels // reduction, bias=False)
        self.excite = nn.Linear(channels // reduction, channels, bias=False)
        self.relu = nn.ReLU()

    def gate(self, f: torch.Tensor) -> torch.Tensor:
        pooled = f.mean(dim=(2, 3))
        return torch.sigmoid(self.excite(self.relu(self.squeeze(pooled))))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        return f * self.gate(f)[:, :, None, None]


def channelwise_correlate(f_x: torch.Tensor, f_z: torch.Tensor) -> torch.Tensor:
    """
    Valid-mode cross-correlation of every channel of `f_x` with the same
    channel of `f_z` (no kernel flip, no sum over channels).

    Args:
        f_x: detection features `(N, c, H, W)` or `(c, H, W)`.
        f_z: template features `(N, c, h, w)`, `(1, c, h, w)` or `(c, h, w)`.

    Returns:
        torch.Tensor: `(N, c, H - h + 1, W - w + 1)`, unbatched if both inputs were.
    """
    unbatched = f_x.dim() == 3 and f_z.dim() == 3
    if f_x.dim() == 3:
        f_x = f_x.unsqueeze(0)
    if f_z.dim() == 3:
        f_z = f_z.unsqueeze(0)
    if f_x.dim() != 4 or f_z.dim() != 4:
        raise ShapeError(
            f"expected 3-D or 4-D feature maps, got {tuple(f_x.shape)} and {tuple(f_z.shape)}"
        )
    n, c, height, width = f_x.shape
    if f_z.shape[0] == 1 and n > 1:
        f_z = f_z.expand(n, -1, -1, -1)
    if f_z.shape[0] != n:
        raise ShapeError(f"batch sizes differ: {n} detection vs {f_z.shape[0]} template maps")
    if f_z.shape[1] != c:
        raise ShapeError(f"channel counts differ: {c} detection vs {f_z.shape[1]} template")
    kernel_h, kernel_w = f_z.shape[2:]
    if kernel_h > height or kernel_w > width:
        raise ShapeError(
            f"template map {kernel_h}x{kernel_w} is larger than detection map {height}x{width}"
        )
    out = F.conv2d(
        f_x.reshape(1, n * c, height, width),
        f_z.reshape(n * c, 1, kernel_h, kernel_w),
        groups=n * c,
    )
    out = out.reshape(n, c, out.shape[-2], out.shape[-1])
    return out[0] if unbatched else out


class RegressionHead(nn.Module):
    def __init__(self, channels: int, response_size: int):
        super().__init__()
        self.response_size = response_size
        self.collapse = nn.Conv2d(channels, 1, kernel_size=1, bias=False)
        self.fc = nn.Linear(response_size * response_size, 4)

    def forward(self, corr: torch.Tensor) -> torch.Tensor:
        return self.fc(self.collapse(corr).flatten(1))


class SiameseSENet(nn.Module):
    """
    The tracker network.

    Attributes:
        config (ModelConfig): shape parameters; fixes the parameter count.
        backbone: the extractor shared by the template and detection branches.
        se: channel recalibration, identity when `config.use_se` is False.
        head: 1x1 collapse + fully-connected regression to four offsets.
    """

    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        if config.backbone_id == "small":
            problems = []
            for name, input_size, expected in (
                ("template_input", config.template_input, config.w_z),
                ("detection_input", config.detection_input, config.w_x),
            ):
                actual = small_feature_size(input_size)
                if actual != expected:
                    problems.append(
                        f"small backbone maps {name} {input_size} to {actual}, not {expected}"
                    )
            if problems:
                raise ConfigError("model", problems)
        self.backbone = BACKBONES[config.backbone_id](config)
        self.se = SEBlock(config.channels, config.se_reduction) if config.use_se else nn.Identity()
        self.head = RegressionHead(config.channels, config.response_size)

    def _branch(self, image: torch.Tensor) -> Tuple[str, int]:
        """Branch name and feature size for an input batch, from its spatial size."""
        if image.dim() != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected an (N, 3, H, W) image batch, got {tuple(image.shape)}")
        size = tuple(image.shape[2:])
        if size == (self.config.template_input,) * 2:
            return "template", self.config.w_z
        if size == (self.config.detection_input,) * 2:
            return "detection", self.config.w_x
        raise ShapeError(
            f"expected input of {self.config.template_input}x{self.config.template_input} "
            f"or {self.config.detection_input}x{self.config.detection_input}, got "
            f"{size[0]}x{size[1]}"
        )

    def extract_features(self, image: torch.Tensor) -> torch.Tensor:
        branch, out_size = self._branch(image)
        return self.backbone(image, out_size, branch)

    def se_recalibrate(self, f: torch.Tensor) -> torch.Tensor:
        if f.dim() != 4 or f.shape[1] != self.config.channels:
            raise ShapeError(
                f"expected (N, {self.config.channels}, h, w) features, got {tuple(f.shape)}"
            )
        return self.se(f)

    def regress(self, corr: torch.Tensor) -> torch.Tensor:
        m = self.config.response_size
        expected = (self.config.channels, m, m)
        if corr.dim() != 4 or tuple(corr.shape[1:]) != expected:
            raise ShapeError(
                f"expected correlation map (N, {expected[0]}, {m}, {m}), got {tuple(corr.shape)}"
            )
        return self.head(corr)

    def template_features(self, z: torch.Tensor) -> torch.Tensor:
        return self.se_recalibrate(self.extract_features(z))

    def forward_from_template(self, f_z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        f_x = self.se_recalibrate(self.extract_features(x))
        return self.regress(channelwise_correlate(f_x, f_z))

    def forward(self, z: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        return self.forward_from_template(self.template_features(z), x)


def init_weights(model: nn.Module, seed: int = 0) -> nn.Module:
    """
    Truncated-normal (std 0.01) conv and linear weights, zero biases,
    batch-norm scale 1 and shift 0; the global torch RNG is left untouched.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for module in model.modules():
            if isinstance(module, (nn.Conv2d, nn.Linear)):
                nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
            elif isinstance(module, (BranchBatchNorm2d, nn.GroupNorm)):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
            elif isinstance(module, nn.BatchNorm2d):
                module.reset_running_stats()
    return model


def build_model(config: ModelConfig = ModelConfig(), seed: int = 0) -> SiameseSENet:
    """Seeded model; construction and initialization leave the global torch RNG untouched."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SiameseSENet(config)
    return init_weights(model, seed)


def count_parameters(model: nn.Module) -> int:
    return sum(parameter.numel() for parameter in model.parameters())


def parameter_count(config: ModelConfig = ModelConfig()) -> int:
    return count_parameters(SiameseSENet(config))


def image_to_tensor(patch) -> torch.Tensor:
    """
    Convert `(H, W, 3)` or `(N, H, W, 3)` float patches in [0, 1] to an
    `(N, 3, H, W)` float32 tensor.
    """
    array = np.asarray(patch, dtype=np.float32)
    if array.ndim == 3:
        array = array[None]
    if array.ndim != 4 or array.shape[-1] != 3:
        raise ShapeError(f"expected (H, W, 3) or (N, H, W, 3) patches, got {array.shape}")
    return torch.from_numpy(np.ascontiguousarray(array.transpose(0, 3, 1, 2)))


def serialize_weights(model: SiameseSENet, path, extra: Optional[Dict] = None) -> None:
    """
    Write a self-describing checkpoint (torch.save of a plain dict).

    Keys: `format_version`, `model_config`, `config_hash`, `parameter_names`
    (state-dict order), `state_dict`, `extra`.
    """
    state_dict = model.state_dict()
    torch.save(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "model_config": model.config.to_dict(),
            "config_hash": model.config.hash(),
            "parameter_names": list(state_dict.keys()),
            "state_dict": state_dict,
            "extra": extra or {},
        },
        str(path),
    )


def _config_differences(expected: ModelConfig, actual: ModelConfig):
    expected_dict, actual_dict = expected.to_dict(), actual.to_dict()
    return [
        f"{name}: expected {expected_dict[name]}, checkpoint has {actual_dict[name]}"
        for name in expected_dict
        if expected_dict[name] != actual_dict[name]
    ]


def deserialize_weights(
    path, expected_config: Optional[ModelConfig] = None
) -> Tuple[SiameseSENet, Dict]:
    """
    Load a checkpoint written by `serialize_weights`.

    Args:
        path: checkpoint file.
        expected_config (ModelConfig, optional): reject checkpoints built for
            another configuration.

    Returns:
        tuple: the model (eval mode) and the `extra` dictionary.
    """
    try:
        payload = torch.load(str(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint `{path}` does not exist")
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint `{path}`: {e}") from e

    required = ("format_version", "model_config", "config_hash", "parameter_names", "state_dict")
    if not isinstance(payload, dict) or any(key not in payload for key in required):
        raise CheckpointError(f"checkpoint `{path}` is missing one of {', '.join(required)}")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint `{path}` has format version {payload['format_version']}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        config = ModelConfig.from_dict(payload["model_config"])
    except ConfigError as e:
        raise CheckpointError(f"checkpoint `{path}` holds an invalid model config: {e}") from e
    if config.hash() != payload["config_hash"]:
        raise CheckpointError(
            f"checkpoint `{path}` config hash mismatch: stored {payload['config_hash']}, "
            f"computed {config.hash()}"
        )
    if expected_config is not None and expected_config != config:
        raise CheckpointError(
            f"checkpoint `{path}` was built for another model config: "
            + "; ".join(_config_differences(expected_config, config))
        )
    if list(payload["state_dict"].keys()) != list(payload["parameter_names"]):
        raise CheckpointError(f"checkpoint `{path}` parameter names do not match its weights")

    model = SiameseSENet(config)
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint `{path}` does not fit its model config: {e}") from e
    model.eval()
    logger.debug("loaded checkpoint %s (config %s)", path, payload["config_hash"])
    return model, payload.get("extra", {})
