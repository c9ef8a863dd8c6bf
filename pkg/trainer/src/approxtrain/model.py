"""Residual CNN whose structure maps one-to-one onto the approxlab
quantized layer vocabulary.

Two constraints shape the architecture:

- Every conv is followed by BN and ReLU, including the second conv of a
  residual branch, so all tensors flowing between layers are non-negative.
  That matches the unsigned-activation contract of the integer inference
  engine (conv outputs clamp to [0, 255]; residual adds combine two
  unsigned tensors).
- The exported layer chain is sequential except for residual adds, so
  blocks keep identity shortcuts (no projection convs on a side path);
  downsampling and width changes happen in standalone strided transition
  convs between stages.

The model consumes raw pixels scaled by 1/255 (no mean/std normalization);
the stem's BN absorbs input conditioning, keeping the exported integer
pipeline free of zero points.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass(frozen=True)
class ArchConfig:
    """``blocks_per_stage`` identity-shortcut residual blocks in each of
    ``len(widths)`` stages, joined by stride-2 transition convs."""

    widths: tuple[int, ...] = (16, 32, 64)
    blocks_per_stage: int = 1
    stem_stride: int = 1
    n_classes: int = 10

    @property
    def conv_count(self) -> int:
        stages = len(self.widths)
        return 1 + (stages - 1) + 2 * self.blocks_per_stage * stages

    def descriptor(self) -> dict:
        return {
            "stages": len(self.widths),
            "blocks_per_stage": self.blocks_per_stage,
            "widths": list(self.widths),
            "stem_stride": self.stem_stride,
            "conv_layers": self.conv_count,
            "classes": self.n_classes,
        }


RESNET8 = ArchConfig(widths=(16, 32, 64), blocks_per_stage=1)
RESNET8_SMALL = ArchConfig(widths=(8, 16, 32), blocks_per_stage=1,
                           stem_stride=2)

ARCHS = {"resnet8": RESNET8, "resnet8-small": RESNET8_SMALL}


def conv_bn_relu(c_in, c_out, stride, kernel=3):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2,
                  bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class ResidualBlock(nn.Module):
    """Identity-shortcut block: out = relu-branch + input (both >= 0)."""

    def __init__(self, width):
        super().__init__()
        self.conv1 = conv_bn_relu(width, width, 1)
        self.conv2 = conv_bn_relu(width, width, 1)

    def forward(self, x):
        return self.conv2(self.conv1(x)) + x


class ResidualNet(nn.Module):
    def __init__(self, config: ArchConfig = RESNET8):
        super().__init__()
        self.config = config
        w = config.widths
        self.stem = conv_bn_relu(3, w[0], config.stem_stride)
        stages = []
        for s, width in enumerate(w):
            parts = []
            if s > 0:
                parts.append(conv_bn_relu(w[s - 1], width, 2))
            parts.extend(ResidualBlock(width)
                         for _ in range(config.blocks_per_stage))
            stages.append(nn.Sequential(*parts))
        self.stages = nn.ModuleList(stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(w[-1], config.n_classes)

    def forward(self, x):
        # x holds raw pixel values; the 1/255 scale matches the export
        h = self.stem(x / 255.0)
        for stage in self.stages:
            h = stage(h)
        h = self.pool(h).flatten(1)
        return self.head(h)


def train_model(model: nn.Module, train_x, train_y, *, epochs: int,
                batch_size: int = 128, lr: float = 0.1,
                weight_decay: float = 5e-4, seed: int = 0,
                augment: bool = True, log=print) -> None:
    """SGD with momentum and cosine decay; deterministic for a fixed seed."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)
    model.train()
    opt = torch.optim.SGD(model.parameters(), lr=lr, momentum=0.9,
                          weight_decay=weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    loss_fn = nn.CrossEntropyLoss()
    x_all = torch.from_numpy(train_x).float()
    y_all = torch.from_numpy(train_y.astype("int64"))
    n = len(x_all)
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(epochs):
        order = torch.randperm(n, generator=gen)
        total = correct = 0
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = x_all[idx].clone()
            yb = y_all[idx]
            if augment:
                flip = torch.rand(len(xb), generator=gen) < 0.5
                xb[flip] = torch.flip(xb[flip], dims=[3])
                dy = int(torch.randint(-3, 4, (1,), generator=gen))
                dx = int(torch.randint(-3, 4, (1,), generator=gen))
                xb = torch.roll(xb, shifts=(dy, dx), dims=(2, 3))
            opt.zero_grad()
            out = model(xb)
            loss = loss_fn(out, yb)
            loss.backward()
            opt.step()
            loss_sum += float(loss.detach()) * len(xb)
            correct += int((out.argmax(1) == yb).sum())
            total += len(xb)
        sched.step()
        log(f"epoch {epoch + 1}/{epochs}: loss {loss_sum / total:.4f} "
            f"train-acc {correct / total:.3f}")


@torch.no_grad()
def eval_model(model: nn.Module, images, labels, batch_size: int = 256) -> float:
    model.eval()
    x_all = torch.from_numpy(images).float()
    y_all = torch.from_numpy(labels.astype("int64"))
    correct = 0
    for start in range(0, len(x_all), batch_size):
        out = model(x_all[start:start + batch_size])
        correct += int((out.argmax(1) == y_all[start:start + batch_size]).sum())
    return correct / len(x_all)
