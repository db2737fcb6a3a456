"""Desk-scale training: L1 loss, Adam, aligned random crops, versioned
binary checkpoints and a CSV loss log. Fully deterministic under a seed."""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .imgio import DataError, load_rgb
from .network import ConfigError, RamConfig, RamModel, build
from .params import named_params
from .tensor import GradTape, NumericError, Tensor

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"RAMCKPT1"
CKPT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    batch: int = 2
    patch: int = 64
    steps: int = 500
    seed: int = 0
    loss: str = "l1"
    checkpoint_every: int = 500

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.patch % 8:
            raise ConfigError(f"patch size must be a multiple of 8, got {self.patch}")
        if self.lr < 0 or self.batch < 1 or self.steps < 0:
            raise ConfigError("lr must be >= 0, batch >= 1, steps >= 0")
        if self.loss != "l1":
            raise ConfigError(f"unsupported loss '{self.loss}'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error (subgradient 0 at ties)."""
    if pred.shape != target.shape:
        raise T.DimensionError(f"l1_loss shapes disagree: {pred.shape} vs {target.shape}")
    return T.reduce_mean(T.abs_(pred - target))


class AdamState:
    """First/second moment buffers plus the step counter, keyed by parameter name."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = cfg.betas
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def model_params(model: RamModel) -> dict[str, Tensor]:
    return dict(named_params(model, ""))


# -- checkpoint format ---------------------------------------------------

def save(model: RamModel, opt_state: Optional[AdamState], path, step: int = 0, rng_state: Optional[dict] = None) -> None:
    """Write a versioned little-endian checkpoint (model + optimizer + meta)."""
    params = model_params(model)
    tensors: list[tuple[str, np.ndarray]] = [(k, p.data) for k, p in params.items()]
    if opt_state is not None:
        tensors += [(f"opt.m.{k}", opt_state.m[k]) for k in params]
        tensors += [(f"opt.v.{k}", opt_state.v[k]) for k in params]
    index, offset = [], 0
    for name, arr in tensors:
        nbytes = arr.size * arr.itemsize
        index.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "precision": "double" if arr.dtype == np.float64 else "single",
                "offset": offset,
                "nbytes": nbytes,
            }
        )
        offset += nbytes
    header = json.dumps(
        {
            "config": model.config.to_dict(),
            "step": step,
            "opt_t": opt_state.t if opt_state is not None else None,
            "rng_state": rng_state,
            "tensors": index,
        }
    ).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for _, arr in tensors:
            f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


class CheckpointError(DataError):
    pass


def load(path) -> tuple[RamModel, Optional[AdamState], dict]:
    """Rebuild a model (and optimizer state, if present) from a checkpoint.

    Returns (model, opt_state_or_None, meta) where meta carries step and
    rng_state. Raises CheckpointError naming the offending tensor on
    truncation or shape mismatch.
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint '{path}': {exc}") from exc
    if raw[:8] != CKPT_MAGIC:
        raise CheckpointError(f"'{path}' is not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {CKPT_VERSION})")
    (hlen,) = struct.unpack_from("<Q", raw, 12)
    header = json.loads(raw[20 : 20 + hlen].decode())
    body = raw[20 + hlen :]

    model = build(RamConfig.from_dict(header["config"]))
    params = model_params(model)
    opt = AdamState(params) if header.get("opt_t") is not None else None
    if opt is not None:
        opt.t = header["opt_t"]

    for entry in header["tensors"]:
        name = entry["name"]
        dtype = np.dtype("<f8" if entry["precision"] == "double" else "<f4")
        end = entry["offset"] + entry["nbytes"]
        if end > len(body):
            raise CheckpointError(f"checkpoint truncated inside tensor '{name}'")
        arr = np.frombuffer(body[entry["offset"] : end], dtype=dtype).reshape(entry["shape"])
        arr = arr.astype(dtype.newbyteorder("="), copy=True)
        if name.startswith("opt.m.") or name.startswith("opt.v."):
            table = opt.m if name.startswith("opt.m.") else opt.v
            key = name[6:]
            if key not in table or table[key].shape != arr.shape:
                raise CheckpointError(f"optimizer tensor '{name}' does not match the model config")
            table[key] = arr
        else:
            if name not in params:
                raise CheckpointError(f"unexpected tensor '{name}' for this config")
            if params[name].shape != tuple(entry["shape"]):
                raise CheckpointError(
                    f"shape mismatch for tensor '{name}': checkpoint {entry['shape']} vs model {list(params[name].shape)}"
                )
            params[name].data = arr
    return model, opt, {"step": header["step"], "rng_state": header.get("rng_state")}


# -- training loop -------------------------------------------------------

def _load_pairs(manifest_entries: list[dict], patch: int) -> list[tuple[np.ndarray, np.ndarray, str]]:
    pairs = []
    for e in manifest_entries:
        deg = load_rgb(e["degraded"])
        clean = load_rgb(e["clean"])
        if deg.shape[1] < patch or deg.shape[2] < patch:
            logger.warning("skipping %s: smaller than patch %d", e["degraded"], patch)
            continue
        pairs.append((deg, clean, e.get("kind", "")))
    if not pairs:
        raise DataError("no training pairs large enough for the requested patch size")
    return pairs


def train(
    model: RamModel,
    manifest_entries: list[dict],
    cfg: TrainConfig,
    out_dir,
    log_every: int = 1,
) -> list[float]:
    """Optimize the model on aligned random crops; returns the loss history.

    Writes `loss.csv` (step,loss) and `ckpt_<step>.ramckpt` snapshots plus a
    final `ckpt_final.ramckpt` into out_dir.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs = _load_pairs(manifest_entries, cfg.patch)
    params = model_params(model)
    opt = AdamState(params)
    rng = np.random.default_rng(np.random.Philox(cfg.seed))
    losses: list[float] = []

    with open(out_dir / "loss.csv", "w") as log:
        log.write("step,loss\n")
        for step in range(1, cfg.steps + 1):
            idx = rng.integers(0, len(pairs), size=cfg.batch)
            deg_b, clean_b = [], []
            for i in idx:
                deg, clean, _ = pairs[i]
                y0 = int(rng.integers(0, deg.shape[1] - cfg.patch + 1))
                x0 = int(rng.integers(0, deg.shape[2] - cfg.patch + 1))
                deg_b.append(deg[:, y0 : y0 + cfg.patch, x0 : x0 + cfg.patch])
                clean_b.append(clean[:, y0 : y0 + cfg.patch, x0 : x0 + cfg.patch])
            x = Tensor(np.stack(deg_b))
            target = Tensor(np.stack(clean_b))

            from .network import forward

            with GradTape() as tape:
                loss = l1_loss(forward(model, x), target)
                tape.backward(loss)
                grads = {k: tape.grad(p) for k, p in params.items()}
            adam_step(params, grads, opt, cfg)
            for name, p in params.items():
                if not np.all(np.isfinite(p.data)):
                    raise NumericError(f"parameter '{name}' became non-finite at step {step}")
            losses.append(loss.item())
            if step % log_every == 0:
                log.write(f"{step},{loss.item():.10e}\n")
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                save(model, opt, out_dir / f"ckpt_{step}.ramckpt", step=step, rng_state=_rng_state(rng))
    save(model, opt, out_dir / "ckpt_final.ramckpt", step=cfg.steps, rng_state=_rng_state(rng))
    return losses


def _rng_state(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return json.loads(json.dumps(st, default=lambda o: o.tolist() if isinstance(o, np.ndarray) else int(o)))
