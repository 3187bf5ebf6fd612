"""Alternating training of the three networks.

One outer iteration compresses the current descriptions with the codec,
fits PPNN to restore them, fits VCNN to mimic codec+PPNN, then fits FDNN
through the frozen VCNN. A final PPNN pass adapts the decoder to the last
FDNN. Every phase ends with checkpoints and a state file so an interrupted
run resumes at the first unfinished phase.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import time
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import codec
from .image import INTERPOLATION_METHODS, ResampleMethod, load_image, resample, training_patches
from .losses import LossWeights, fdnn_objective, ppnn_objective, upsample2x, vcnn_objective
from .networks import (FDNN, PPNN, VCNN, Network, build_network, load_checkpoint,
                       param_digest, save_checkpoint)

log = logging.getLogger(__name__)

PHASE_PPNN = "PPNN"
PHASE_VCNN = "VCNN"
PHASE_FDNN = "FDNN"
PHASE_FINAL = "FINAL_PPNN"
PHASE_ORDER = (PHASE_PPNN, PHASE_VCNN, PHASE_FDNN)
_PHASE_CODE = {PHASE_PPNN: 1, PHASE_VCNN: 2, PHASE_FDNN: 3, PHASE_FINAL: 4}

LOG_COLUMNS = ("outer_iter", "phase", "epoch", "global_step", "lr", "loss",
               "content", "gradient", "ssim", "seconds")
IMAGE_SUFFIXES = {".png", ".bmp", ".pgm", ".ppm", ".jpg", ".jpeg", ".tif", ".tiff"}


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class FrozenParameterError(TrainingError):
    pass


@dataclass
class TrainingConfig:
    K: int = 3
    p: int = 60
    q: int = 30
    m: int = 20
    n: int | None = 3200
    lr0: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    quality_factors: tuple = (5, 10, 20, 40)
    seed: int = 0
    patch_size: int = 160
    corpus_path: str | None = None
    checkpoint_dir: str = "checkpoints"
    methods: tuple = tuple(m.value for m in INTERPOLATION_METHODS)
    init: str = "interp"
    border: str = "replicate"
    quality_mode: str = "shared"
    width: int = 128
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("K", "p", "q", "m"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.patch_size < 2 or self.patch_size % 2:
            raise ConfigError("patch_size must be even")
        self.quality_factors = tuple(int(q) for q in self.quality_factors)
        if not self.quality_factors or not all(1 <= q <= 100 for q in self.quality_factors):
            raise ConfigError(f"bad quality factors {self.quality_factors}")
        self.methods = tuple(ResampleMethod(m).value for m in self.methods)
        if self.quality_mode not in ("shared", "per_factor"):
            raise ConfigError(f"unknown quality_mode {self.quality_mode!r}")

    @property
    def total_epochs(self) -> int:
        return self.K * (2 * self.p + self.q) + self.p


def _parse_value(raw, tp):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() in ("", "none"):
            return None
        return _parse_value(raw, next(a for a in args if a is not type(None)))
    if tp is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    if tp in (int, float, str):
        return tp(raw)
    if tp is tuple or origin is tuple:
        return tuple(x.strip() for x in raw.replace(",", " ").split())
    raise ConfigError(f"cannot parse {raw!r} as {tp}")


def load_config(path, **overrides) -> TrainingConfig:
    """Read a ``[training]`` section of ``key = value`` lines.

    Keys are TrainingConfig field names; list values are comma separated.
    Loss weights use ``weight_content``, ``weight_gradient``, ``weight_ssim``.
    """
    parser = configparser.ConfigParser()
    try:
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "training" not in parser:
        raise ConfigError(f"{path}: missing [training] section")
    hints = typing.get_type_hints(TrainingConfig)
    kwargs, weights = {}, {}
    for key, raw in parser["training"].items():
        if key.startswith("weight_"):
            weights[key[len("weight_"):]] = float(raw)
            continue
        name = {"k": "K"}.get(key, key)
        if name not in hints or name == "loss_weights":
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            kwargs[name] = _parse_value(raw.strip(), hints[name])
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key}: {raw!r}") from exc
    if weights:
        kwargs["loss_weights"] = LossWeights(**weights)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    base = Path(path).parent
    for key in ("corpus_path", "checkpoint_dir"):
        if kwargs.get(key) and not Path(kwargs[key]).is_absolute():
            kwargs[key] = str(base / kwargs[key])
    return TrainingConfig(**kwargs)


# Schedule

def lr_schedule(step, total_steps, lr0):
    """lr0 until 3/5 of the steps, lr0/2 until 4/5, lr0/4 afterwards."""
    if step < 0.6 * total_steps:
        return lr0
    if step < 0.8 * total_steps:
        return lr0 / 2
    return lr0 / 4


def batches_per_epoch(count, m):
    """floor(count/m) full batches; a corpus smaller than m is one short batch."""
    return max(1, count // m)


def _epoch_batches(count, m, rng):
    order = rng.permutation(count)
    if count < m:
        return [order]
    return [order[i * m:(i + 1) * m] for i in range(count // m)]


# Data

def load_corpus(cfg: TrainingConfig) -> list[np.ndarray]:
    """Training patches from ``cfg.corpus_path`` with the default augmentation."""
    if not cfg.corpus_path:
        raise ConfigError("corpus_path is not set")
    root = Path(cfg.corpus_path)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if root.is_dir() else []
    if not files:
        raise ConfigError(f"no training images in {root}")
    images = [load_image(f) for f in files]
    patches = training_patches([im for im in images if min(im.shape) >= cfg.patch_size],
                               cfg.patch_size, seed=cfg.seed)
    if not patches:
        raise ConfigError(f"no image in {root} is at least {cfg.patch_size} pixels on a side")
    if cfg.n is not None:
        if len(patches) < cfg.n:
            log.warning("corpus yields %d patches, fewer than n=%d", len(patches), cfg.n)
        patches = patches[:cfg.n]
    return patches


def build_initial_descriptions(corpus, methods=INTERPOLATION_METHODS):
    """Pair every image with its half-size version under each method."""
    if not corpus:
        raise ValueError("empty corpus")
    pairs = []
    for x in corpus:
        if x.shape[0] % 2 or x.shape[1] % 2:
            raise ValueError(f"image dims must be even, got {x.shape}")
        for method in methods:
            pairs.append((x, resample(x, 0.5, ResampleMethod(method))))
    return pairs


def assign_qualities(count, factors, rng) -> list[int]:
    """A shuffled cycle through ``factors``: balanced and covering when count >= len(factors)."""
    cycle = np.resize(np.asarray(factors), count)
    return [int(q) for q in rng.permutation(cycle)]


def compress_all(descriptions, qualities):
    return [codec.jpeg_roundtrip(y, q)[0] for y, q in zip(descriptions, qualities)]


@dataclass
class Pairs:
    """Training pairs; several inputs may share one target via ``index``."""

    inputs: torch.Tensor
    targets: torch.Tensor
    index: torch.Tensor

    def __len__(self):
        return self.inputs.shape[0]

    def batch(self, idx):
        idx = torch.as_tensor(idx)
        return self.inputs[idx], self.targets[self.index[idx]]


def _stack(arrays):
    return torch.as_tensor(np.stack([np.asarray(a, dtype=np.float32) for a in arrays]))[:, None]


def make_pairs(pairs) -> Pairs:
    """From a list of ``(input, target)`` arrays."""
    if isinstance(pairs, Pairs):
        return pairs
    if not len(pairs):
        raise ValueError("no training pairs")
    inputs = _stack([p[0] for p in pairs])
    targets = _stack([p[1] for p in pairs])
    return Pairs(inputs, targets, torch.arange(len(pairs)))


def _run_net(net, tensor, chunk=32):
    with torch.no_grad():
        return torch.cat([net(tensor[i:i + chunk]) for i in range(0, len(tensor), chunk)])


def describe(fdnn: Network, corpus) -> list[np.ndarray]:
    out = _run_net(fdnn, _stack(corpus) if not torch.is_tensor(corpus) else corpus)
    return [y.numpy().astype(np.float64) for y in out[:, 0]]


# Training state and the generic phase loop

@dataclass
class TrainingState:
    fdnn: Network
    ppnn: Network
    vcnn: Network
    outer_iter: int = 0
    phase: str = ""
    global_step: int = 0
    loss_history: list = field(default_factory=list)
    completed: list = field(default_factory=list)


def _phase_rng(cfg, k, phase, salt):
    return np.random.default_rng([cfg.seed, k, _PHASE_CODE[phase], salt])


def _fit(params, count, epochs, cfg, loss_fn, *, k=0, phase="", state=None, sink=None, rng=None):
    """Adam over ``epochs`` passes of floor(count/m) batches; returns per-epoch means."""
    params = list(params)
    opt = torch.optim.Adam(params, lr=cfg.lr0, betas=(cfg.adam_beta1, cfg.adam_beta2))
    per_epoch = batches_per_epoch(count, cfg.m)
    total = epochs * per_epoch
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    step = 0
    records = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        sums, n = {}, 0
        try:
            for idx in _epoch_batches(count, cfg.m, rng):
                lr = lr_schedule(step, total, cfg.lr0)
                for g in opt.param_groups:
                    g["lr"] = lr
                loss = loss_fn(idx)
                if not torch.isfinite(loss.value):
                    raise FloatingPointError("non-finite loss")
                opt.zero_grad(set_to_none=True)
                loss.value.backward()
                opt.step()
                step += 1
                if state is not None:
                    state.global_step += 1
                sums["loss"] = sums.get("loss", 0.0) + loss.item()
                for name, v in loss.floats().items():
                    sums[name] = sums.get(name, 0.0) + v
                n += 1
        except Exception as exc:
            raise TrainingError(f"{phase or 'training'} phase (outer iteration {k}) "
                                f"failed in epoch {epoch}: {exc}") from exc
        row = {"outer_iter": k, "phase": phase, "epoch": epoch,
               "global_step": state.global_step if state is not None else step,
               "lr": lr, "content": 0.0, "gradient": 0.0, "ssim": 0.0,
               "seconds": round(time.perf_counter() - t0, 3)}
        row.update({name: v / n for name, v in sums.items()})
        records.append(row)
        if state is not None:
            state.loss_history.append(row)
        if sink is not None:
            sink(row)
        log.info("%s iter %d epoch %d/%d loss %.5f", phase, k, epoch, epochs, row["loss"])
    return records


def train_ppnn(pairs, cfg: TrainingConfig, gamma: Network, *, epochs=None, k=0,
               phase=PHASE_PPNN, state=None, sink=None, rng=None) -> Network:
    """Fit PPNN on (X, Z) pairs: X ground truth, Z its decoded description."""
    pairs = make_pairs([(z, x) for x, z in pairs]) if not isinstance(pairs, Pairs) else pairs
    z_shape, x_shape = pairs.inputs.shape[-2:], pairs.targets.shape[-2:]
    if (2 * z_shape[0], 2 * z_shape[1]) != tuple(x_shape):
        raise ValueError(f"targets {tuple(x_shape)} are not twice the inputs {tuple(z_shape)}")
    gamma.train()

    def loss_fn(idx):
        z, x = pairs.batch(idx)
        return ppnn_objective(x, gamma(z), cfg.loss_weights)

    _fit(gamma.parameters(), len(pairs), epochs or cfg.p, cfg, loss_fn,
         k=k, phase=phase, state=state, sink=sink, rng=rng)
    return gamma


def train_vcnn(pairs, cfg: TrainingConfig, theta: Network, *, k=0, state=None,
               sink=None, rng=None) -> Network:
    """Fit VCNN on (Y, I~) pairs: description in, PPNN output of its codec version out."""
    pairs = make_pairs(pairs)
    y_shape, t_shape = pairs.inputs.shape[-2:], pairs.targets.shape[-2:]
    if (2 * y_shape[0], 2 * y_shape[1]) != tuple(t_shape):
        raise ValueError(f"targets {tuple(t_shape)} are not twice the inputs {tuple(y_shape)}")
    theta.train()

    def loss_fn(idx):
        y, target = pairs.batch(idx)
        return vcnn_objective(theta(y), target, cfg.loss_weights)

    _fit(theta.parameters(), len(pairs), cfg.p, cfg, loss_fn,
         k=k, phase=PHASE_VCNN, state=state, sink=sink, rng=rng)
    return theta


def fdnn_loss(alpha: Network, theta: Network, x, weights=LossWeights()):
    y = alpha(x)
    return fdnn_objective(x, theta(y), upsample2x(y), weights)


def train_fdnn(corpus, cfg: TrainingConfig, alpha: Network, theta: Network, *, k=0,
               state=None, sink=None, rng=None) -> Network:
    """Fit FDNN through the frozen VCNN; raises if VCNN changes meanwhile."""
    xs = corpus if torch.is_tensor(corpus) else _stack(corpus)
    if xs.shape[-1] % 2 or xs.shape[-2] % 2:
        raise ValueError(f"image dims must be even, got {tuple(xs.shape[-2:])}")
    before = param_digest(theta)
    flags = [p.requires_grad for p in theta.parameters()]
    theta.requires_grad_(False)
    theta.eval()
    alpha.train()
    try:
        _fit(alpha.parameters(), len(xs), cfg.q, cfg,
             lambda idx: fdnn_loss(alpha, theta, xs[torch.as_tensor(idx)], cfg.loss_weights),
             k=k, phase=PHASE_FDNN, state=state, sink=sink, rng=rng)
    finally:
        for p, flag in zip(theta.parameters(), flags):
            p.requires_grad_(flag)
    if param_digest(theta) != before:
        raise FrozenParameterError("VCNN parameters changed during the FDNN phase")
    return alpha


# The full schedule

def schedule(cfg: TrainingConfig):
    """Ordered (outer_iter, phase) list: K x (PPNN, VCNN, FDNN) then the final PPNN."""
    steps = [(k, ph) for k in range(1, cfg.K + 1) for ph in PHASE_ORDER]
    return steps + [(cfg.K, PHASE_FINAL)]


def _ckpt_name(net_id, k, phase):
    return f"{net_id.lower()}_iter{k}_{phase.lower()}.ckpt"


@dataclass
class TrainingResult:
    fdnn: Network
    ppnn: Network
    state: TrainingState
    log_path: Path
    checkpoint_dir: Path


class _CsvLog:
    def __init__(self, path: Path, keep=None):
        self.path = path
        rows = []
        if keep is not None and path.exists():
            with open(path, newline="") as fh:
                rows = [r for r in csv.DictReader(fh) if (int(r["outer_iter"]), r["phase"]) in keep]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, LOG_COLUMNS)
            w.writeheader()
            w.writerows(rows)

    def __call__(self, row):
        with open(self.path, "a", newline="") as fh:
            csv.DictWriter(fh, LOG_COLUMNS, extrasaction="ignore").writerow(row)


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _config_json(cfg):
    d = dataclasses.asdict(cfg)
    d["quality_factors"] = list(cfg.quality_factors)
    d["methods"] = list(cfg.methods)
    return d


def run_algorithm1(cfg: TrainingConfig, corpus=None, *, resume=False, progress=None):
    """Train FDNN and PPNN end to end; writes checkpoints and a log CSV.

    ``corpus`` (a list of even-sized 2-D images) overrides ``cfg.corpus_path``.
    In ``per_factor`` mode one model pair is trained per quality factor and
    a dict ``{quality: TrainingResult}`` is returned.
    """
    if cfg.quality_mode == "per_factor":
        out = {}
        for qf in cfg.quality_factors:
            sub = dataclasses.replace(cfg, quality_factors=(qf,), quality_mode="shared",
                                      checkpoint_dir=str(Path(cfg.checkpoint_dir) / f"q{qf:03d}"))
            out[qf] = run_algorithm1(sub, corpus, resume=resume, progress=progress)
        return out

    if corpus is None:
        corpus = load_corpus(cfg)
    corpus = [np.asarray(x, dtype=np.float64) for x in corpus]
    if cfg.n is not None:
        corpus = corpus[:cfg.n]
    ckdir = Path(cfg.checkpoint_dir)
    ckdir.mkdir(parents=True, exist_ok=True)
    state_path = ckdir / "state.json"
    log_path = ckdir / "training_log.csv"

    state = TrainingState(
        fdnn=build_network(FDNN, seed=cfg.seed, init=cfg.init, border=cfg.border, width=cfg.width),
        ppnn=build_network(PPNN, seed=cfg.seed + 1, init=cfg.init, border=cfg.border, width=cfg.width),
        vcnn=build_network(VCNN, seed=cfg.seed + 2, init=cfg.init, border=cfg.border, width=cfg.width),
    )
    done = set()
    if resume and state_path.exists():
        saved = json.loads(state_path.read_text())
        done = {(int(k), ph) for k, ph in saved["completed"]}
        state.global_step = saved["global_step"]
        state.completed = [list(c) for c in saved["completed"]]
        if done:
            k, ph = saved["completed"][-1]
            for net_id in (FDNN, PPNN, VCNN):
                net = load_checkpoint(ckdir / _ckpt_name(net_id, k, ph), net_id)
                setattr(state, net_id.lower(), net)
        log.info("resuming after %d completed phases", len(done))
    sink = _CsvLog(log_path, keep=done)

    xs = _stack(corpus)
    initial = build_initial_descriptions(corpus, cfg.methods)
    n_methods = len(cfg.methods)
    pairs = None

    def recompressed(k, phase):
        # Line 4 of the schedule: current descriptions through the codec.
        rng = _phase_rng(cfg, k, phase, 0)
        if k == 1 and phase == PHASE_PPNN:
            ys = [y for _, y in initial]
            target_index = torch.arange(len(corpus)).repeat_interleave(n_methods)
        else:
            ys = describe(state.fdnn, xs)
            target_index = torch.arange(len(corpus))
        zs = compress_all(ys, assign_qualities(len(ys), cfg.quality_factors, rng))
        return ys, Pairs(_stack(zs), xs, target_index)

    for k, phase in schedule(cfg):
        state.outer_iter, state.phase = k, phase
        if (k, phase) in done:
            continue
        if progress:
            progress(k, phase)
        t0 = time.perf_counter()
        rng = _phase_rng(cfg, k, phase, 1)
        if phase in (PHASE_PPNN, PHASE_FINAL):
            ys, pairs = recompressed(k, phase)
            train_ppnn(pairs, cfg, state.ppnn, k=k, phase=phase, state=state, sink=sink, rng=rng)
        elif phase == PHASE_VCNN:
            if pairs is None:  # resumed straight into this phase
                ys, pairs = recompressed(k, PHASE_PPNN)
            state.ppnn.eval()
            teacher = _run_net(state.ppnn, pairs.inputs)
            train_vcnn(Pairs(_stack(ys), teacher, torch.arange(len(ys))), cfg, state.vcnn,
                       k=k, state=state, sink=sink, rng=rng)
        else:
            train_fdnn(xs, cfg, state.fdnn, state.vcnn, k=k, state=state, sink=sink, rng=rng)
            pairs = None
        for net_id in (FDNN, PPNN, VCNN):
            save_checkpoint(getattr(state, net_id.lower()), ckdir / _ckpt_name(net_id, k, phase))
        state.completed.append([k, phase])
        state_path.write_text(json.dumps({
            "completed": state.completed, "global_step": state.global_step,
            "config": _config_json(cfg)}, indent=1))
        log.info("phase %s of iteration %d done in %.1fs", phase, k, time.perf_counter() - t0)

    save_checkpoint(state.fdnn, ckdir / "fdnn_final.ckpt")
    save_checkpoint(state.ppnn, ckdir / "ppnn_final.ckpt")
    state.fdnn.eval()
    state.ppnn.eval()
    return TrainingResult(state.fdnn, state.ppnn, state, log_path, ckdir)
