"""Refiner networks: residual generator, downsampling discriminator, frozen feature extractor."""
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List

import numpy as np
import torch
from torch import nn

from app.errors import CheckpointError, InvalidArgumentError, NumericalFailureError
from app.information import VGG19_NORMALIZATION, VGG19_TOPOLOGY
from app.models.network import DiscriminatorConfig, ExtractorConfig, GeneratorConfig
from app.serialization import read_weights_file, write_weights_file

logger = logging.getLogger(__name__)

PRELU_INIT = 0.25
LEAKY_SLOPE = 0.2
PROB_EPS = 1e-7


def _check_finite(tensor: torch.Tensor, layer: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise NumericalFailureError(f"non-finite activation in {layer}", layer=layer)
    return tensor


def _check_batch(x: torch.Tensor, height: int = None, width: int = None) -> None:
    if x.dim() != 4 or x.shape[1] != 1:
        raise InvalidArgumentError(f"expected a (batch, 1, H, W) tensor, got shape {tuple(x.shape)}")
    if height is not None and tuple(x.shape[2:]) != (height, width):
        raise InvalidArgumentError(f"expected {height}x{width} images, got {tuple(x.shape[2:])}")


def he_init(module: nn.Module) -> None:
    """Fan-in scaled normal weights for conv/linear layers, zero biases."""
    for layer in module.modules():
        if isinstance(layer, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(layer.weight, mode="fan_in", nonlinearity="relu")
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def decay_groups(module: nn.Module, weight_decay: float) -> List[Dict]:
    """Optimizer groups: conv/linear weights decay, everything else (biases, norms, slopes) does not."""
    decay, no_decay = [], []
    for layer in module.modules():
        for name, param in layer.named_parameters(recurse=False):
            if not param.requires_grad:
                continue
            if isinstance(layer, (nn.Conv2d, nn.Linear)) and name == "weight":
                decay.append(param)
            else:
                no_decay.append(param)
    return [
        {"params": decay, "weight_decay": weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]


class ResidualBlock(nn.Module):
    def __init__(self, features: int, skip_enabled: bool = True):
        super().__init__()
        self.skip_enabled = skip_enabled
        self.body = nn.Sequential(
            nn.Conv2d(features, features, 3, padding=1),
            nn.BatchNorm2d(features),
            nn.PReLU(features, init=PRELU_INIT),
            nn.Conv2d(features, features, 3, padding=1),
            nn.BatchNorm2d(features),
        )

    def forward(self, x):
        out = self.body(x)
        return x + out if self.skip_enabled else out


class Generator(nn.Module):
    """head (9x9) -> B residual blocks -> bridge (3x3 + norm, global skip) -> tail (9x9) -> sigmoid."""

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        features = config.features
        self.head = nn.Sequential(
            nn.Conv2d(1, features, 9, padding=4),
            nn.PReLU(features, init=PRELU_INIT),
        )
        self.blocks = nn.ModuleList(ResidualBlock(features, config.skip_enabled) for _ in range(config.blocks))
        self.bridge = nn.Sequential(
            nn.Conv2d(features, features, 3, padding=1),
            nn.BatchNorm2d(features),
        )
        self.tail = nn.Conv2d(features, 1, 9, padding=4)
        he_init(self)

    @property
    def conv_blocks(self) -> int:
        return len(self.blocks) + 3

    def forward(self, x):
        _check_batch(x, self.config.height, self.config.width)
        head = _check_finite(self.head(x), "head")
        body = head
        for index, block in enumerate(self.blocks):
            body = _check_finite(block(body), f"block{index}")
        body = _check_finite(self.bridge(body), "bridge")
        if self.config.skip_enabled:
            body = body + head
        return _check_finite(torch.sigmoid(self.tail(body)), "tail")


class Discriminator(nn.Module):
    """Stem conv, then per stage (conv + norm + leaky) and a stride-2 (conv + norm + leaky),
    doubling channels each stage; pooled features go through two dense layers to one probability."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        channels = config.channels
        layers: List[nn.Module] = [nn.Conv2d(1, channels, 3, padding=1), nn.LeakyReLU(LEAKY_SLOPE)]
        in_channels = channels
        for stage in range(config.stages):
            out_channels = channels * 2 ** stage
            if stage > 0:
                layers += [
                    nn.Conv2d(in_channels, out_channels, 3, padding=1),
                    nn.BatchNorm2d(out_channels),
                    nn.LeakyReLU(LEAKY_SLOPE),
                ]
            layers += [
                nn.Conv2d(out_channels, out_channels, 3, stride=2, padding=1),
                nn.BatchNorm2d(out_channels),
                nn.LeakyReLU(LEAKY_SLOPE),
            ]
            in_channels = out_channels
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.dense = nn.Sequential(nn.Linear(in_channels, config.hidden), nn.LeakyReLU(LEAKY_SLOPE))
        self.classifier = nn.Linear(config.hidden, 1)
        he_init(self)

    def logits(self, x):
        _check_batch(x)
        features = _check_finite(self.features(x), "features")
        hidden = _check_finite(self.dense(torch.flatten(self.pool(features), 1)), "dense")
        return _check_finite(self.classifier(hidden), "classifier").squeeze(1)

    def forward(self, x):
        """Probability that each image is real, kept inside [PROB_EPS, 1 - PROB_EPS]."""
        return torch.sigmoid(self.logits(x)).clamp(PROB_EPS, 1.0 - PROB_EPS)


def conv_layer_count(topology: Iterable = VGG19_TOPOLOGY) -> int:
    return sum(1 for item in topology if item != "M")


class FeatureExtractor(nn.Module):
    """19-layer VGG-style feature stack truncated after the k-th convolution's activation.

    A max-pool directly following that convolution is included. Parameters are frozen
    and the module always runs in inference mode. Layer indices match the usual
    ``features.<i>`` numbering so exported weights load by name.
    """

    def __init__(self, config: ExtractorConfig):
        super().__init__()
        self.config = config
        depth = conv_layer_count()
        if not 1 <= config.layer <= depth:
            raise InvalidArgumentError(f"feature layer k={config.layer} exceeds the topology depth {depth}")

        layers: List[nn.Module] = []
        in_channels = 3
        convs = 0
        for item in VGG19_TOPOLOGY:
            if item == "M":
                layers.append(nn.MaxPool2d(2, 2))
                if convs == config.layer:
                    break
                continue
            if convs == config.layer:
                break
            out_channels = max(1, item // config.width_divisor)
            layers += [nn.Conv2d(in_channels, out_channels, 3, padding=1), nn.ReLU()]
            in_channels = out_channels
            convs += 1
        self.features = nn.Sequential(*layers)
        self.register_buffer("mean", torch.tensor(VGG19_NORMALIZATION["mean"]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(VGG19_NORMALIZATION["std"]).view(1, 3, 1, 1))

        if config.source == "file":
            self.load_weights(Path(config.path))
        else:
            self._seeded_init(config.seed)
            logger.warning("Feature extractor uses fixed seeded random weights (no weight file given)")

        for param in self.parameters():
            param.requires_grad_(False)
        super().train(False)

    def _seeded_init(self, seed: int) -> None:
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for layer in self.features:
                if isinstance(layer, nn.Conv2d):
                    fan_in = layer.in_channels * layer.kernel_size[0] * layer.kernel_size[1]
                    std = math.sqrt(2.0 / fan_in)
                    layer.weight.copy_(torch.randn(layer.weight.shape, generator=generator) * std)
                    layer.bias.zero_()

    def load_weights(self, path: Path) -> None:
        blocks = read_weights_file(path)
        state = self.state_dict()
        for name in state:
            if not name.startswith("features."):
                continue
            if name not in blocks:
                raise CheckpointError(f"{path}: missing extractor weights for {name}")
            if tuple(blocks[name].shape) != tuple(state[name].shape):
                raise CheckpointError(
                    f"{path}: shape mismatch for {name}: {blocks[name].shape} vs {tuple(state[name].shape)}"
                )
            state[name] = torch.from_numpy(np.array(blocks[name]))
        self.load_state_dict(state)
        logger.info(f"Feature extractor weights loaded from {path}")

    def train(self, mode: bool = True):
        return super().train(False)

    def forward(self, x):
        _check_batch(x)
        rgb = x.expand(-1, 3, -1, -1)
        return self.features((rgb - self.mean) / self.std)


def save_extractor_weights(extractor: nn.Module, path: Path) -> Path:
    """Write ``features.*`` parameters in the SPIW block format."""
    blocks = {
        name: tensor.detach().cpu().numpy()
        for name, tensor in extractor.state_dict().items()
        if name.startswith("features.")
    }
    write_weights_file(Path(path), blocks)
    logger.info(f"Extractor weights written: {path} ({len(blocks)} blocks)")
    return Path(path)


def export_pretrained_vgg19(path: Path) -> Path:
    """Fetch torchvision's ImageNet VGG19 weights and store them as an SPIW weight file."""
    from torchvision.models import VGG19_Weights, vgg19

    model = vgg19(weights=VGG19_Weights.DEFAULT)
    return save_extractor_weights(model, path)
