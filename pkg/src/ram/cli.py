"""Command-line entry point: train / infer / eval / degrade / count /
gradcheck / dump-features.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
failure. Every command echoes its effective configuration (defaults
resolved) before doing any work.
"""

from __future__ import annotations

import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from .audit import attention_flop_ratio, count_flops, count_params
from .degradations import DegradationSpec, load_manifest, make_pair_set
from .imgio import DataError, load_rgb, save_rgb
from .metrics import MetricReport, psnr, ssim
from .network import ConfigError, RamConfig, build, dump_features, forward
from .tensor import DimensionError, NumericError, Tensor
from .trainer import CheckpointError, TrainConfig, load, train

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_SECTIONS = ("model", "train", "data", "output")


class RunConfig:
    """Validated JSON run configuration with model/train/data/output sections."""

    def __init__(self, doc: dict):
        unknown = set(doc) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        self.model = RamConfig.from_dict(doc.get("model", {}))
        self.train = TrainConfig.from_dict(doc.get("train", {}))
        self.data = dict(doc.get("data", {}))
        self.output = dict(doc.get("output", {}))

    @classmethod
    def from_path(cls, path) -> "RunConfig":
        if path is None:
            return cls({})
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config '{path}': {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config '{path}' is not valid JSON: {exc}") from exc
        return cls(doc)

    def effective(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data,
            "output": self.output,
        }


def _echo_config(cfg: RunConfig, **cli_args) -> None:
    doc = cfg.effective()
    if cli_args:
        doc["args"] = {k: v for k, v in cli_args.items() if v is not None}
    click.echo(json.dumps(doc, indent=2))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RAM_THREADS", "1")))
    except ValueError:
        return 1


@click.group()
def main():
    """All-in-one image restoration toolkit."""


def _run(fn):
    try:
        fn()
    except (ConfigError, click.UsageError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (DataError, CheckpointError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except (NumericError, DimensionError) as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        sys.exit(EXIT_NUMERIC)


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path())
def cmd_train(config_path):
    """Train a model from scratch on a degradation manifest."""

    def go():
        cfg = RunConfig.from_path(config_path)
        _echo_config(cfg)
        manifest_path = cfg.data.get("manifest")
        if not manifest_path:
            raise ConfigError("data.manifest is required for training")
        out_dir = cfg.output.get("dir", "runs/train")
        entries = load_manifest(manifest_path)
        model = build(cfg.model)
        losses = train(model, entries, cfg.train, out_dir)
        click.echo(f"trained {cfg.train.steps} steps; final loss {losses[-1]:.6f}" if losses else "no steps run")
        click.echo(f"checkpoint: {Path(out_dir) / 'ckpt_final.ramckpt'}")

    _run(go)


def _pad_to_multiple(img: np.ndarray, mult: int = 8) -> tuple[np.ndarray, int, int]:
    _, h, w = img.shape
    ph = (-h) % mult
    pw = (-w) % mult
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return img, h, w


@main.command("infer")
@click.option("--config", "config_path", type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--output", "output_dir", required=True, type=click.Path())
@click.option("--pad", type=click.Choice(["auto", "strict"]), default="auto", show_default=True)
def cmd_infer(config_path, checkpoint, input_path, output_dir, pad):
    """Restore one image or a directory of images with a trained checkpoint."""

    def go():
        cfg = RunConfig.from_path(config_path)
        _echo_config(cfg, checkpoint=checkpoint, input=input_path, output=output_dir, pad=pad)
        model, _, _ = load(checkpoint)
        in_path = Path(input_path)
        paths = sorted(p for p in in_path.iterdir() if p.suffix.lower() == ".png") if in_path.is_dir() else [in_path]
        if not paths:
            raise DataError(f"no PNG inputs under '{input_path}'")
        out_dir = Path(output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in paths:
            img = load_rgb(p)
            _, h, w = img.shape
            if (h % 8 or w % 8) and pad == "strict":
                raise DimensionError(f"'{p}' is {h}x{w}; extents must be multiples of 8 with --pad strict")
            padded, h0, w0 = _pad_to_multiple(img)
            t0 = time.perf_counter()
            out = forward(model, Tensor(padded[None])).data[0, :, :h0, :w0]
            dt = time.perf_counter() - t0
            dst = out_dir / p.name
            save_rgb(dst, out)
            click.echo(f"{p.name}: {dt * 1000:.0f} ms -> {dst}")

    _run(go)


@main.command("eval")
@click.option("--config", "config_path", type=click.Path())
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--manifest", required=True, type=click.Path())
@click.option("--output", "report_path", default="report.json", show_default=True, type=click.Path())
def cmd_eval(config_path, checkpoint, manifest, report_path):
    """Restore every manifest pair and report PSNR/SSIM grouped by kind."""

    def go():
        cfg = RunConfig.from_path(config_path)
        _echo_config(cfg, checkpoint=checkpoint, manifest=manifest, output=report_path)
        model, _, _ = load(checkpoint)
        entries = load_manifest(manifest)
        missing = [e["degraded"] for e in entries if not Path(e["degraded"]).exists()]
        missing += [e["clean"] for e in entries if not Path(e["clean"]).exists()]
        present = [e for e in entries if Path(e["degraded"]).exists() and Path(e["clean"]).exists()]

        def score(indexed):
            i, e = indexed
            deg = load_rgb(e["degraded"])
            clean = load_rgb(e["clean"])
            padded, h0, w0 = _pad_to_multiple(deg)
            out = forward(model, Tensor(padded[None])).data[0, :, :h0, :w0]
            out = np.clip(out, 0.0, 1.0)
            return i, {
                "name": Path(e["degraded"]).name,
                "kind": e.get("kind", "all"),
                "psnr_db": psnr(out, clean),
                "ssim": ssim(out, clean),
            }

        with ThreadPoolExecutor(max_workers=_threads()) as pool:
            scored = sorted(pool.map(score, enumerate(present)))
        report = MetricReport.from_pairs([s for _, s in scored])
        Path(report_path).write_text(report.to_json())
        click.echo(report.to_json())
        if missing:
            for m in missing:
                click.echo(f"missing: {m}", err=True)
            raise DataError(f"{len(missing)} manifest files missing")

    _run(go)


@main.command("degrade")
@click.option("--config", "config_path", required=True, type=click.Path())
def cmd_degrade(config_path):
    """Generate a degraded pair set and manifest from clean images.

    data section: {"clean_dir": ..., "manifest": ..., "specs": [{"kind": ...,
    "params": {...}}, ...], "seed": int}.
    """

    def go():
        cfg = RunConfig.from_path(config_path)
        _echo_config(cfg)
        data = cfg.data
        for key in ("clean_dir", "manifest", "specs"):
            if key not in data:
                raise ConfigError(f"data.{key} is required for degrade")
        try:
            specs = [DegradationSpec(s["kind"], s.get("params", {}), s.get("seed", 0)) for s in data["specs"]]
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad degradation spec: {exc}") from exc
        entries = make_pair_set(data["clean_dir"], specs, data["manifest"], global_seed=int(data.get("seed", 0)))
        click.echo(f"wrote {len(entries)} pairs to {data['manifest']}")

    _run(go)


@main.command("count")
@click.option("--config", "config_path", type=click.Path())
@click.option("--hw", nargs=2, type=int, default=(224, 224), show_default=True)
@click.option("--json", "as_json", is_flag=True)
def cmd_count(config_path, hw, as_json):
    """Audit parameters and FLOPs of the configured architecture."""

    def go():
        cfg = RunConfig.from_path(config_path)
        _echo_config(cfg, hw=list(hw))
        h, w = hw
        model = build(cfg.model)
        p_total, p_table = count_params(model)
        f_total, f_table = count_flops(model, h, w)
        measured, predicted = attention_flop_ratio(model, h, w)
        doc = {
            "params_total": p_total,
            "flops_total": f_total,
            "flops_hw": [h, w],
            "attention_flop_ratio": {"measured": measured, "predicted": predicted},
            "params_by_module": p_table,
            "flops_by_module": {k: v["flops"] for k, v in f_table.items()},
        }
        if as_json:
            click.echo(json.dumps(doc, indent=2))
        else:
            click.echo(f"params: {p_total:,} ({p_total / 1e6:.2f}M)")
            click.echo(f"flops @ {h}x{w}: {f_total:,} ({f_total / 1e9:.2f}G)")
            click.echo(f"attention-FLOP ratio vs full-channel: {measured:.4f} (predicted {predicted:.4f})")
            width = max(len(k) for k in p_table)
            for k in p_table:
                click.echo(f"  {k:<{width}}  params {p_table[k]:>10,}  flops {f_table.get(k, {'flops': 0})['flops']:>14,}")

    _run(go)


@main.command("gradcheck")
@click.option("--size", default=5, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
def cmd_gradcheck(size, seed):
    """Finite-difference verification of every differentiable operation."""
    from .gradcheck import TOL, run_suite

    def go():
        click.echo(json.dumps({"size": size, "seed": seed, "tol": TOL}))
        results = run_suite(size=size, seed=seed)
        failed = 0
        for r in results:
            click.echo(f"{'PASS' if r.passed else 'FAIL'} {r.name:32s} max_rel={r.max_rel:.3e}")
            failed += not r.passed
        click.echo(f"{len(results) - failed}/{len(results)} gradient checks passed")
        if failed:
            raise NumericError(f"{failed} gradient checks exceeded {TOL}")

    _run(go)


@main.command("dump-features")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--taps", required=True, help="comma-separated block ids, e.g. enc1.0,refine.0")
@click.option("--output", "output_dir", required=True, type=click.Path())
@click.option("--clean", "clean_path", type=click.Path())
def cmd_dump_features(checkpoint, input_path, taps, output_dir, clean_path):
    """Write gate-path activation maps (and an error map) for chosen blocks."""

    def go():
        click.echo(json.dumps({"checkpoint": checkpoint, "input": input_path, "taps": taps, "output": output_dir, "clean": clean_path}))
        model, _, _ = load(checkpoint)
        img = load_rgb(input_path)
        padded, _, _ = _pad_to_multiple(img)
        clean = None
        if clean_path:
            cl, _, _ = _pad_to_multiple(load_rgb(clean_path))
            clean = Tensor(cl[None])
        written = dump_features(model, Tensor(padded[None]), taps.split(","), output_dir, clean)
        for path in written:
            click.echo(path)

    _run(go)


if __name__ == "__main__":
    main()
