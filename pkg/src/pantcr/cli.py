"""``pantcr`` command line: synth, train, eval, ablate, freq-demo, gradcheck, budget.

Every run writes ``run.json`` (resolved config, seed and arguments) into
``--out``.  Exit status is 0 on success, 1 for invalid input and 2 for
runtime failures; failures also print a JSON error record to stderr and
write it to ``<out>/error.json``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from . import metrics
from .dataset import load_manifest, load_split, synth_dataset
from .errors import CapacityError, FormatError, NumericError, TrainingDiverged, ValidationError
from .freq import swap_amplitude
from .net.budget import count_params_flops
from .net.checkpoint import load_checkpoint
from .net.config import ABLATION_ROWS, OUT_OF_SCOPE_ROWS, ablation_config
from .raster import MultiBandRaster, bicubic_resample, save_png
from .scenes import generate_scene

log = logging.getLogger("pantcr")

VALIDATION_ERRORS = (ValidationError, FormatError, CapacityError, FileNotFoundError, NotImplementedError, ValueError, KeyError)
RUNTIME_ERRORS = (TrainingDiverged, NumericError, RuntimeError, ArithmeticError)

# per-subcommand flags that are remembered in run.json and reused from it
_REMEMBERED = ("data", "checkpoint", "split", "rows", "blocks", "save_visuals")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PANTCR_THREADS", "1")))
    except ValueError:
        return 1


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _row_dirname(row: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", row).strip("_").lower()


# ------------------------------------------------------------------ subcommands


def cmd_synth(cfg, args, out: Path) -> dict:
    scfg = cfgmod.synth_config(cfg)
    n_scenes = int(cfg["synth"]["scenes"])
    size = int(cfg["synth"]["scene_size"])
    if n_scenes < 1 or size < 1:
        raise ValidationError("synth.scenes and synth.scene_size must be positive")
    scenes = [generate_scene(int(cfg["seed"]) * 1000 + i, size, size) for i in range(n_scenes)]
    manifest = synth_dataset(scenes, cfgmod.split_counts(cfg), scfg, out)
    counts = {k: len(v) for k, v in manifest["splits"].items()}
    print(json.dumps({"manifest": str(out / "dataset.json"), "counts": counts}, sort_keys=True))
    return {"counts": counts}


def _train_one(cfg, net_cfg, manifest, out: Path) -> dict:
    from .trainer import train

    result = train(manifest, net_cfg, cfgmod.train_config(cfg), out)
    summary = {k: result[k] for k in ("best_epoch", "best_val_psnr", "steps", "log", "best")}
    _write_json(out / "train_summary.json", summary)
    return summary


def cmd_train(cfg, args, out: Path) -> dict:
    manifest = load_manifest(_require(args.data, "--data"))
    summary = _train_one(cfg, cfgmod.network_config(cfg), manifest, out)
    print(json.dumps(summary, sort_keys=True))
    return summary


def _require(value, flag):
    if value is None:
        raise ValidationError(f"{flag} is required")
    return value


def _predict_split(model, samples):
    from .trainer import predict_batch

    if model is None:  # bicubic baseline
        return [bicubic_resample(s.cloudy_lrmsi, s.scale_ratio).data for s in samples]
    return predict_batch(model, samples)


def _evaluate(model, manifest, split: str, out: Path, save_visuals: bool, vmax: float) -> list[dict]:
    samples = load_split(manifest, split)
    if not samples:
        raise ValidationError(f"split {split!r} is empty")
    r = int(manifest["r"])
    preds = _predict_split(model, samples)
    rep_dir = out / "reports"
    rep_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for sample, pred in zip(samples, preds):
        if split == "test_full":
            rep = metrics.full_resolution_report(pred, sample.cloudy_lrmsi.data, sample.cloudy_pan.data, r)
        else:
            rep = metrics.reduced_resolution_report(pred, sample.clean_hrmsi.data, r)
        d = {"id": sample.id, **rep.to_dict()}
        _write_json(rep_dir / f"{sample.id}.json", d)
        rows.append(d)
        if save_visuals:
            vis = out / "visuals"
            vis.mkdir(exist_ok=True)
            wl = sample.clean_hrmsi.band_wavelengths_nm
            save_png(MultiBandRaster(pred, wl), vis / f"{sample.id}_pred.png")
            if split != "test_full":
                mse = np.mean((pred.astype(np.float64) - sample.clean_hrmsi.data) ** 2, axis=2)
                save_png(MultiBandRaster(np.clip(mse / vmax, 0, 1), [wl[0]]), vis / f"{sample.id}_mse.png")
    with (out / "summary.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
        mean = {"id": "mean"}
        for key in rows[0]:
            if key != "id":
                vals = [row[key] for row in rows if row[key] is not None]
                mean[key] = float(np.mean(vals)) if vals else None
        writer.writerow(mean)
    return rows


def _mean_report(rows):
    keys = [k for k in rows[0] if k != "id"]
    return {k: (float(np.mean([r[k] for r in rows])) if rows[0][k] is not None else None) for k in keys}


def cmd_eval(cfg, args, out: Path) -> dict:
    manifest = load_manifest(_require(args.data, "--data"))
    ckpt = args.checkpoint or "bicubic"
    model = None if ckpt == "bicubic" else load_checkpoint(ckpt)[0]
    split = args.split or cfg["eval"]["split"]
    save_visuals = bool(args.save_visuals or cfg["eval"]["save_visuals"])
    rows = _evaluate(model, manifest, split, out, save_visuals, float(cfg["eval"]["mse_vmax"]))
    mean = _mean_report(rows)
    _write_json(out / "metrics.json", {"split": split, "checkpoint": ckpt, "n": len(rows), "mean": mean})
    print(json.dumps({"split": split, "n": len(rows), "mean": mean}, sort_keys=True))
    return {"mean": mean}


def cmd_ablate(cfg, args, out: Path) -> dict:
    manifest = load_manifest(_require(args.data, "--data"))
    rows = [r.strip() for r in args.rows.split(",")] if args.rows else list(ABLATION_ROWS)
    for row in rows:
        if row in OUT_OF_SCOPE_ROWS:
            raise NotImplementedError(f"{row}: {OUT_OF_SCOPE_ROWS[row]}")
        if row not in ABLATION_ROWS:
            raise ValidationError(f"unknown ablation row {row!r}; known: {', '.join(ABLATION_ROWS)}")
    base = cfgmod.network_config(cfg)
    split = args.split or cfg["eval"]["split"]
    table = []
    for row in rows:
        row_dir = out / _row_dirname(row)
        net_cfg = ablation_config(row, base)
        _train_one(cfg, net_cfg, manifest, row_dir)
        model, _ = load_checkpoint(row_dir / "best")
        mean = _mean_report(_evaluate(model, manifest, split, row_dir / "eval", False, 1.0))
        params, macs = count_params_flops(net_cfg)
        entry = {"row": row, "params": params, "flops": macs, **mean}
        table.append(entry)
        print(json.dumps(entry, sort_keys=True))
    with (out / "ablation.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(table[0]))
        writer.writeheader()
        writer.writerows(table)
    _write_json(out / "ablation.json", table)
    return {"rows": [t["row"] for t in table]}


def cmd_freq_demo(cfg, args, out: Path) -> dict:
    if args.data:
        manifest = load_manifest(args.data)
        split = args.split or "train"
        pairs = [(s.id, _cloudy_hr(s), s.clean_hrmsi) for s in load_split(manifest, split)[:4]]
        if not pairs:
            raise ValidationError(f"split {split!r} is empty")
    else:
        from .cloudsim import make_sample

        hr, pan = generate_scene(int(cfg["seed"]), 128, 128)
        sample = make_sample(hr, pan, cloud_seed=int(cfg["seed"]), thickness_scale=0.7, r=int(cfg["synth"]["r"]))
        pairs = [("demo", _cloudy_hr(sample), sample.clean_hrmsi)]
    summary = []
    for sid, cloudy, clean in pairs:
        amp_swap = swap_amplitude(clean, cloudy)    # clean amplitude, cloudy phase
        phase_swap = swap_amplitude(cloudy, clean)  # cloudy amplitude, clean phase
        for name, mixed in (("clean_amp_cloudy_phase", amp_swap), ("cloudy_amp_clean_phase", phase_swap)):
            strip = np.concatenate([cloudy.data, mixed.data, clean.data], axis=1)
            save_png(cloudy.replace(strip), out / f"{sid}_{name}.png")
        summary.append({
            "id": sid,
            "psnr_cloudy": metrics.psnr(cloudy.data, clean.data),
            "psnr_clean_amp_cloudy_phase": metrics.psnr(amp_swap.data, clean.data),
            "psnr_cloudy_amp_clean_phase": metrics.psnr(phase_swap.data, clean.data),
        })
    _write_json(out / "freq_demo.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return {"n": len(summary)}


def _cloudy_hr(sample):
    """Full-resolution cloudy reference: the cloudy LR-MSI upsampled back to the target grid."""
    return bicubic_resample(sample.cloudy_lrmsi, sample.scale_ratio)


def cmd_gradcheck(cfg, args, out: Path) -> dict:
    from .trainer import GRADCHECK_BLOCKS, gradcheck

    blocks = [b.strip() for b in args.blocks.split(",")] if args.blocks else list(GRADCHECK_BLOCKS)
    tol = {"linear": 1e-9}
    reports = []
    for name in blocks:
        t0 = time.perf_counter()
        rep = gradcheck(name, int(cfg["seed"]))
        rep["tolerance"] = tol.get(name, 1e-3)
        rep["passed"] = rep["max_rel_err"] < rep["tolerance"]
        rep["wall_s"] = time.perf_counter() - t0
        reports.append(rep)
        print(f"{name:18s} max_rel_err={rep['max_rel_err']:.3e} {'PASS' if rep['passed'] else 'FAIL'}")
    _write_json(out / "gradcheck.json", reports)
    failed = [r["block"] for r in reports if not r["passed"]]
    if failed:
        raise NumericError(f"gradient check failed for {failed}")
    return {"blocks": blocks}


def cmd_budget(cfg, args, out: Path) -> dict:
    net_cfg = cfgmod.network_config(cfg)
    params, macs = count_params_flops(net_cfg)
    rec = {"params": params, "params_M": params / 1e6, "flops": macs, "flops_G": macs / 1e9, "input_hw": [128, 128]}
    _write_json(out / "budget.json", rec)
    print(f"Param {params / 1e6:.3f}M  FLOPs {macs / 1e9:.3f}G  (128x128 input)")
    return rec


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "freq-demo": cmd_freq_demo,
    "gradcheck": cmd_gradcheck,
    "budget": cmd_budget,
}


# ------------------------------------------------------------------ parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (a previous run.json also works)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path override, e.g. train.epochs=500 (repeatable)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pantcr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic cloudy dataset")
    p.add_argument("--scenes", type=int, help="number of source scenes")
    p.add_argument("--scene-size", type=int, help="source scene side length in pixels")
    for split in ("train", "val", "test-reduced", "test-full"):
        p.add_argument(f"--{split}", type=int, dest=split.replace("-", "_"), help=f"number of {split} patches")

    p = sub.add_parser("train", parents=[common], help="train on a dataset manifest")
    p.add_argument("--data", help="dataset directory or dataset.json")
    p.add_argument("--epochs", type=int, help="shortcut for --set train.epochs=N")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint (or 'bicubic')")
    p.add_argument("--data")
    p.add_argument("--checkpoint", help="checkpoint directory, or 'bicubic' for the baseline")
    p.add_argument("--split", choices=["train", "val", "test_reduced", "test_full"])
    p.add_argument("--save-visuals", action="store_true", default=None, help="write prediction and MSE PNGs")

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate ablation rows")
    p.add_argument("--data")
    p.add_argument("--rows", help="comma-separated row names (default: all in-scope rows)")
    p.add_argument("--split", choices=["val", "test_reduced"])
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("freq-demo", parents=[common], help="amplitude/phase exchange panels")
    p.add_argument("--data", help="optional dataset; a generated scene is used otherwise")
    p.add_argument("--split", choices=["train", "val", "test_reduced"])

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--blocks", help="comma-separated block names (default: all)")

    sub.add_parser("budget", parents=[common], help="parameter and FLOP count")
    return parser


def resolve(args) -> tuple[dict, dict]:
    """Resolved config and the remembered per-command arguments."""
    cfg = cfgmod.load_config(args.config)
    remembered = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if isinstance(doc, dict) and doc.get("subcommand") == args.command:
            remembered = doc.get("args", {})
    for key in _REMEMBERED:
        if hasattr(args, key) and getattr(args, key) is None and key in remembered:
            setattr(args, key, remembered[key])
    overrides = list(args.set)
    if args.command == "synth":
        for flag, key in (("scenes", "scenes"), ("scene_size", "scene_size"), ("train", "train"),
                          ("val", "val"), ("test_reduced", "test_reduced"), ("test_full", "test_full")):
            if getattr(args, flag) is not None:
                overrides.append(f"synth.{key}={getattr(args, flag)}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = cfgmod.apply_overrides(cfg, overrides)
    # validate every section up front so bad overrides fail before any work
    cfgmod.network_config(cfg)
    cfgmod.train_config(cfg)
    cfgmod.synth_config(cfg)
    kept = {k: getattr(args, k) for k in _REMEMBERED if hasattr(args, k) and getattr(args, k) is not None}
    return cfg, kept


def _fail(out: Path | None, code: int, exc: BaseException) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    snap = getattr(exc, "snapshot_path", None)
    if snap:
        record["snapshot"] = snap
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "error.json", record)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    torch.set_num_threads(_threads())
    out = Path(args.out)
    try:
        cfg, kept = resolve(args)
        out.mkdir(parents=True, exist_ok=True)
        if not os.access(out, os.W_OK):
            raise ValidationError(f"output directory {out} is not writable")
        run = {"subcommand": args.command, "seed": cfg["seed"], "config": cfg, "args": kept}
        _write_json(out / "run.json", run)
        COMMANDS[args.command](cfg, args, out)
    except RUNTIME_ERRORS as exc:
        # NotImplementedError is a RuntimeError subclass but means an unsupported request
        if isinstance(exc, NotImplementedError):
            return _fail(out, 1, exc)
        return _fail(out, 2, exc)
    except VALIDATION_ERRORS as exc:
        return _fail(out, 1, exc)
    except OSError as exc:
        return _fail(out, 2, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
