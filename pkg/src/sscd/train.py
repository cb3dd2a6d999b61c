"""Minibatch training loops for the three models."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import Adam, Tape, bce_change_loss, split_semantic_loss
from .networks import (
    CSCDNetConfig,
    CSSCDNetConfig,
    EncoderConfig,
    SSCDNetConfig,
    build_model,
    config_to_text,
    direct_logits,
    forward_change,
    save_weights,
    semantic_logits,
)
from .synthesis import AugmentConfig, augment_mask

TASKS = {"cd": "cscdnet", "sscd": "sscdnet", "csscd": "csscdnet"}
DEFAULT_ITERATIONS = {"cd": 30_000, "sscd": 100_000, "csscd": 100_000}


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration, last_checkpoint, reason):
        self.iteration = iteration
        self.last_checkpoint = last_checkpoint
        where = last_checkpoint or "none written yet"
        super().__init__(f"training diverged at iteration {iteration} ({reason}); last good checkpoint: {where}")


@dataclass
class TrainConfig:
    task: str  # "cd", "sscd" or "csscd"
    seed: int
    model: object = None
    batch_size: int = 32
    iterations: Optional[int] = None
    lr: float = 2e-4
    augment: AugmentConfig = field(default_factory=lambda: AugmentConfig(enabled=False))
    fold: Optional[int] = None
    folds: int = 5
    split_seed: int = 0
    checkpoint_fraction: float = 0.1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {sorted(TASKS)}")
        if self.model is None:
            self.model = {"cd": CSCDNetConfig, "sscd": SSCDNetConfig, "csscd": CSSCDNetConfig}[self.task]()
        if self.iterations is None:
            self.iterations = DEFAULT_ITERATIONS[self.task]
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 < self.checkpoint_fraction <= 1:
            raise ValueError("checkpoint_fraction must be in (0, 1]")

    @property
    def kind(self):
        return TASKS[self.task]

    @property
    def checkpoint_every(self):
        return max(1, int(math.ceil(self.iterations * self.checkpoint_fraction)))

    def as_text(self):
        """key=value echo of every setting, model config included."""
        lines = [
            f"task={self.task}",
            f"seed={self.seed}",
            f"batch_size={self.batch_size}",
            f"iterations={self.iterations}",
            f"lr={self.lr!r}",
            f"augment={int(self.augment.enabled)}",
            f"augment_kernel_min={self.augment.kernel_min}",
            f"augment_kernel_max={self.augment.kernel_max}",
            f"augment_ops={','.join(self.augment.ops)}",
            f"fold={'' if self.fold is None else self.fold}",
            f"folds={self.folds}",
            f"split_seed={self.split_seed}",
        ]
        return "\n".join(lines) + "\n" + config_to_text(self.kind, self.model)


def toy_config(task, seed, num_classes=4, **overrides):
    """Desk-scale preset: 64x64 inputs, widths 16-32-64-128, batch 8."""
    enc = EncoderConfig.toy()
    if task == "cd":
        model = CSCDNetConfig(encoder=enc)
        iterations = 2000
    elif task == "sscd":
        model = SSCDNetConfig(encoder=enc, num_classes=num_classes)
        iterations = 5000
    else:
        model = CSSCDNetConfig(encoder=enc, num_classes=num_classes)
        iterations = 5000
    kw = dict(task=task, seed=seed, model=model, batch_size=8, iterations=iterations, lr=2e-4)
    kw.update(overrides)
    return TrainConfig(**kw)


@dataclass
class RunManifest:
    config_text: str
    seed: int
    dataset_hash: str
    losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    def write(self, path):
        path = Path(path)
        lines = ["# run manifest", f"seed={self.seed}", f"dataset_hash={self.dataset_hash}"]
        lines += [f"checkpoint={c}" for c in self.checkpoints]
        lines.append("[config]")
        lines += self.config_text.strip().splitlines()
        lines.append("[losses]")
        # repr keeps every bit of the float
        lines += [f"{i} {v!r}" for i, v in enumerate(self.losses, 1)]
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path):
        section, cfg, losses = None, [], []
        seed, dhash, ckpts = None, "", []
        for line in Path(path).read_text().splitlines():
            if line.startswith("#") or not line.strip():
                continue
            if line in ("[config]", "[losses]"):
                section = line
                continue
            if section == "[config]":
                cfg.append(line)
            elif section == "[losses]":
                losses.append(float(line.split()[1]))
            else:
                key, _, value = line.partition("=")
                if key == "seed":
                    seed = int(value)
                elif key == "dataset_hash":
                    dhash = value
                elif key == "checkpoint":
                    ckpts.append(value)
        return cls("\n".join(cfg) + "\n", seed, dhash, losses, ckpts)


@dataclass
class TrainResult:
    model: object
    losses: list
    checkpoints: list
    manifest: RunManifest


def _stack(items, attr):
    return np.stack([getattr(it, attr) for it in items])


def _label_range_check(data, attrs, num_classes):
    for i in range(len(data)):
        item = data[i]
        for a in attrs:
            lab = getattr(item, a)
            if lab is None:
                raise ValueError(f"sample {i} has no {a} labels; this task needs semantic change labels")
            top = int(lab.max())
            if top >= num_classes:
                raise ValueError(
                    f"sample {i} {a} holds class {top} but the model is configured for {num_classes} classes"
                )


def _prepare(task, data, cfg):
    """Validate the data against the task and return a per-item accessor."""
    if len(data) == 0:
        raise ValueError("training set is empty")
    if task == "sscd":
        _label_range_check(data, ("L1p", "L2p"), cfg.model.num_classes)
        return lambda i: data[i]
    if task == "csscd":
        _label_range_check(data, ("L1", "L2"), cfg.model.num_classes)
    # patch sets materialize on access; memoize since toy sets are small
    cache = {}

    def get(i):
        if i not in cache:
            cache[i] = data[i]
        return cache[i]

    return get


def batch_loss(model, task, batch, masks=None):
    """Summed training loss of ``batch`` (a list of samples)."""
    I1, I2 = _stack(batch, "I1"), _stack(batch, "I2")
    if task == "cd":
        return bce_change_loss(forward_change(model, I1, I2), _stack(batch, "M"))
    if task == "sscd":
        M = np.stack(masks) if masks is not None else _stack(batch, "M")
        return split_semantic_loss(semantic_logits(model, I1, I2, M), _stack(batch, "L1p"), _stack(batch, "L2p"))
    return split_semantic_loss(direct_logits(model, I1, I2), _stack(batch, "L1"), _stack(batch, "L2"))


def train(data, cfg: TrainConfig, out_dir=None, dataset_hash="", log=None, model=None):
    """Train on ``data`` (a PatchSet or a list of synthetic tuples).

    Minibatches are drawn uniformly with replacement.  The minibatch stream
    and the augmentation stream use separate generators derived from the
    seed, so toggling augmentation leaves the sample order unchanged.
    """
    task = cfg.task
    get = _prepare(task, data, cfg)
    if model is None:
        model = build_model(cfg.kind, cfg.model, seed=cfg.seed)
    model.train()
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    batch_rng = np.random.default_rng([cfg.seed, 1])
    aug_rng = np.random.default_rng([cfg.seed, 2])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.as_text(), cfg.seed, dataset_hash)
    losses, ckpts = [], []
    every = cfg.checkpoint_every

    for it in range(1, cfg.iterations + 1):
        idx = batch_rng.integers(0, len(data), size=cfg.batch_size)
        batch = [get(int(i)) for i in idx]
        masks = None
        if task == "sscd" and cfg.augment.enabled:
            masks = [augment_mask(b.M, cfg.augment, aug_rng) for b in batch]
        with Tape() as tape:
            loss = batch_loss(model, task, batch, masks)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(it, ckpts[-1] if ckpts else None, f"loss is {value}")
        tape.backward(loss)
        tape.clear()
        try:
            opt.step()
        except FloatingPointError as exc:
            raise TrainingDiverged(it, ckpts[-1] if ckpts else None, str(exc)) from exc
        losses.append(value)
        if log is not None:
            log(it, value)
        if out is not None and (it % every == 0 or it == cfg.iterations):
            name = "final.ckpt" if it == cfg.iterations else f"iter{it:07d}.ckpt"
            save_weights(model, out / name)
            ckpts.append(str(out / name))
            manifest.losses, manifest.checkpoints = losses, [Path(c).name for c in ckpts]
            manifest.write(out / "manifest.txt")

    # the manifest names checkpoints relative to the run directory so it can move
    manifest.losses, manifest.checkpoints = losses, [Path(c).name for c in ckpts]
    if out is not None:
        manifest.write(out / "manifest.txt")
    model.eval()
    return TrainResult(model, losses, ckpts, manifest)


def select_fold(items, cfg):
    """(train, test) subsets of ``items`` for ``cfg.fold``; everything trains when fold is None."""
    from .dataio import kfold_split

    if cfg.fold is None:
        return list(items), []
    splits = kfold_split(len(items), cfg.folds, cfg.split_seed)
    if not 0 <= cfg.fold < cfg.folds:
        raise ValueError(f"fold {cfg.fold} out of range for {cfg.folds} folds")
    tr, te = splits[cfg.fold]
    return [items[i] for i in tr], [items[i] for i in te]
