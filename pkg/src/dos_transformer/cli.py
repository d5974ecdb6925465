"""Command-line pipeline: synth -> prepare -> split -> train -> evaluate / predict.

Exit codes: 0 success, 1 usage error, 2 data validation or I/O error,
3 numerical failure. Failures print one ``error code=N kind=... reason=...``
line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import crystal_data as cd
from .evaluation import FAMILY_KEYS, ProbeConfig, fermi_eval, fermi_probe_train, report
from .models import ModelConfig, build_model, config_hash, load_checkpoint, predict_many, save_checkpoint
from .spectrum import EnergyGrid, SmootherConfig, prepare
from .training import HYPERPARAMETERS, NumericalError, TrainConfig, fit

log = logging.getLogger("dos_transformer")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def default_seed() -> int:
    return int(os.environ.get("DOS_SEED", "0"))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def add_grid_args(p):
    p.add_argument("--e-min", type=float, default=None, help="grid start (eV), default -5")
    p.add_argument("--e-max", type=float, default=None, help="grid end (eV), default 5")
    p.add_argument("--m", type=int, default=None, help="grid points, default 201")


def resolve_grid(args, manifest: dict | None = None) -> EnergyGrid:
    base = (manifest or {}).get("grid", {"e_min": -5.0, "e_max": 5.0, "m": 201})
    try:
        return EnergyGrid(
            float(args.e_min if args.e_min is not None else base["e_min"]),
            float(args.e_max if args.e_max is not None else base["e_max"]),
            int(args.m if args.m is not None else base["m"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def read_manifest(path) -> dict | None:
    path = Path(path)
    return json.loads(path.read_text()) if path.exists() else None


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


# subcommands -------------------------------------------------------------------

def cmd_synth(args) -> None:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    grid = resolve_grid(args)
    ds = cd.generate_synthetic(args.n, args.seed, grid)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cd.save_dataset(ds, out)
    conf = {"command": "synth", "n": args.n, "seed": args.seed, "grid": grid.to_dict()}
    write_json(sidecar(out), {**conf, "config_hash": config_hash(conf)})
    print(f"wrote {len(ds)} crystals to {out}")


def cmd_prepare(args) -> None:
    grid = resolve_grid(args, read_manifest(sidecar(args.data)))
    try:
        smoother = SmootherConfig(args.window, args.polyorder)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report_ = cd.LoadReport()
    ds = cd.load_dataset(args.data, grid, report=report_)
    prepped, degenerate = prepare(ds, smoother)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cd.save_dataset(prepped, out)
    conf = {"command": "prepare", "window": args.window, "polyorder": args.polyorder,
            "grid": grid.to_dict(), "input": file_digest(args.data)}
    write_json(sidecar(out), {**conf, "degenerate_ids": degenerate,
                              "n_magnetic_dropped": report_.n_magnetic_dropped,
                              "config_hash": config_hash(conf)})
    print(f"prepared {len(prepped)} crystals ({len(degenerate)} degenerate) -> {out}")


def cmd_split(args) -> None:
    grid = resolve_grid(args, read_manifest(sidecar(args.data)))
    try:
        spec = cd.SplitSpec(args.strategy, tuple(args.fractions), args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = cd.load_dataset(args.data, grid)
    manifest = cd.write_split(ds, spec, args.out)
    conf = {"command": "split", "strategy": spec.strategy, "fractions": list(spec.fractions),
            "seed": spec.seed, "grid": grid.to_dict(), "input": file_digest(args.data)}
    manifest["config_hash"] = config_hash(conf)
    write_json(Path(args.out) / "manifest.json", manifest)
    print(f"split {spec.strategy}: {manifest['counts']}")


TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
MODEL_FIELDS = {"d", "mp_layers", "attn_layers", "activation", "num_species"}


def resolve_train_config(args) -> tuple[ModelConfig, TrainConfig, dict]:
    """CLI flag > config file > preset table (default: electron_random)."""
    file_conf = json.loads(Path(args.config).read_text()) if args.config else {}
    unknown = set(file_conf) - TRAIN_FIELDS - MODEL_FIELDS - {"preset", "model", "energy"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    preset = args.preset or file_conf.get("preset", "electron_random")
    if preset not in HYPERPARAMETERS:
        raise UsageError(f"unknown preset {preset!r}")
    merged: dict = {"activation": "softplus", "num_species": cd.SYNTH_SPECIES,
                    "seed": default_seed(), **HYPERPARAMETERS[preset]}
    merged.update(file_conf)
    for name in TRAIN_FIELDS | MODEL_FIELDS | {"model", "energy"}:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    kind = merged.get("model", "dostransformer")
    energy = merged.get("energy", "on")
    energy = energy if isinstance(energy, bool) else energy == "on"
    if kind == "dostransformer" and not energy:
        raise UsageError("--model dostransformer requires --energy on")
    train_kwargs = {k: merged[k] for k in TRAIN_FIELDS if k in merged}
    if "betas" in train_kwargs:
        train_kwargs["betas"] = tuple(train_kwargs["betas"])
    try:
        tcfg = TrainConfig(**train_kwargs)
        mcfg = ModelConfig(kind=kind, energy=energy, d=int(merged["d"]),
                           mp_layers=int(merged["mp_layers"]), attn_layers=int(merged["attn_layers"]),
                           activation=merged["activation"], seed=tcfg.seed,
                           featurizer=cd.FeaturizerConfig(num_species=int(merged["num_species"])))
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return mcfg, tcfg, {"preset": preset}


def load_split_dir(data_dir, args, names=("train", "valid")):
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir / "manifest.json")
    grid = resolve_grid(args, manifest)
    parts = {}
    for name in names:
        path = data_dir / f"{name}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"{path} not found")
        parts[name] = cd.load_dataset(path, grid)
    return parts, grid, manifest or {}


def cmd_train(args) -> None:
    mcfg, tcfg, meta = resolve_train_config(args)
    parts, grid, _ = load_split_dir(args.data, args)
    mcfg = replace(mcfg, m=grid.m)
    digests = {n: file_digest(Path(args.data) / f"{n}.jsonl") for n in parts}
    conf = {"command": "train", "model": mcfg.to_dict(), "train": tcfg.to_dict(),
            "grid": grid.to_dict(), "inputs": digests, **meta}
    chash = config_hash(conf)
    model, hist = fit(build_model(mcfg), parts["train"], parts["valid"], tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.json", extra={
        "config_hash": chash, "train": tcfg.to_dict(), "grid": grid.to_dict(),
        "best_epoch": hist.best_epoch, "best_valid": hist.best_valid})
    (out / "history.csv").write_text(f"# config_hash: {chash}\n" + hist.to_csv())
    write_json(out / "run.json", {**conf, "config_hash": chash, "best_epoch": hist.best_epoch,
                                  "stop_epoch": hist.stop_epoch, "steps": hist.steps})
    print(f"best epoch {hist.best_epoch}: valid loss {hist.best_valid:.6f} -> {out}")


def write_curves(out_dir, grid: EnergyGrid, ids, pred, target=None, chash: str | None = None) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    energies = grid.values.tolist()
    pred = np.asarray(pred).tolist()
    target = None if target is None else np.asarray(target).tolist()
    for k, cid in enumerate(ids):
        header = "energy_eV,dos_pred" + (",dos_true" if target is not None else "")
        lines = [f"# config_hash: {chash}"] if chash else []
        lines.append(header)
        for j, e in enumerate(energies):
            row = f"{e!r},{pred[k][j]!r}"
            if target is not None:
                row += f",{target[k][j]!r}"
            lines.append(row)
        safe = "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in cid)
        (out_dir / f"{safe}.csv").write_text("\n".join(lines) + "\n")


def resolve_checkpoint(path) -> Path:
    path = Path(path)
    return path / "checkpoint.json" if path.is_dir() else path


def cmd_evaluate(args) -> None:
    ckpt = resolve_checkpoint(args.ckpt)
    model, extra = load_checkpoint(ckpt)
    parts, grid, manifest = load_split_dir(args.data, args, names=("train", "valid", args.partition))
    if grid.m != model.cfg.m:
        raise cd.DataValidationError(f"grid has {grid.m} points but model predicts {model.cfg.m}")
    test = parts[args.partition]
    if len(test) == 0:
        raise cd.DataValidationError(f"{args.partition} partition is empty")
    family_key = args.family_key
    if family_key is None:
        family_key = "crystal_system" if manifest.get("strategy") == "by_crystal_system" else "n_species_kinds"
    pred = predict_many(test.crystals, model)
    target = test.targets()
    rep = report(pred, target, test.crystals, family_key)
    conf = {"command": "evaluate", "checkpoint": file_digest(ckpt), "partition": args.partition,
            "family_key": family_key, "fermi": not args.no_fermi, "probe_hidden": args.probe_hidden,
            "seed": args.seed, "inputs": {n: file_digest(Path(args.data) / f"{n}.jsonl") for n in parts}}
    chash = config_hash(conf)
    if not args.no_fermi and all(c.fermi_target is not None for p in parts.values() for c in p):
        probe_cfg = ProbeConfig(hidden=args.probe_hidden, seed=args.seed,
                                train=replace(ProbeConfig().train, seed=args.seed,
                                              max_epochs=args.probe_epochs))
        tr, va = parts["train"], parts["valid"]
        probe = fermi_probe_train(tr.targets(), [c.fermi_target for c in tr], probe_cfg,
                                  va.targets(), [c.fermi_target for c in va])
        rep.fermi_rmse = fermi_eval(probe, pred, [c.fermi_target for c in test])
    elif not args.no_fermi:
        log.warning("Fermi targets missing; skipping the Fermi probe")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "report.json", {**rep.to_dict(), "config_hash": chash,
                                     "model_config_hash": extra.get("config_hash")})
    write_curves(out / "curves", grid, test.ids, pred, target, chash)
    print(f"rmse {rep.rmse:.5f} mae {rep.mae:.5f}"
          + (f" fermi_rmse {rep.fermi_rmse:.4f} eV" if rep.fermi_rmse is not None else ""))


def cmd_predict(args) -> None:
    ckpt = resolve_checkpoint(args.ckpt)
    model, extra = load_checkpoint(ckpt)
    grid_d = extra.get("grid")
    grid = resolve_grid(args, {"grid": grid_d} if grid_d else None)
    ds = cd.load_dataset(args.data, grid, require_dos=False)
    pred = predict_many(ds.crystals, model)
    labeled = len(ds) > 0 and all(c.dos is not None for c in ds)
    chash = config_hash({"command": "predict", "checkpoint": file_digest(ckpt),
                         "input": file_digest(args.data)})
    write_curves(args.out, grid, ds.ids, pred, ds.targets() if labeled else None, chash)
    print(f"wrote {len(ds)} curves to {args.out}")


# parser ------------------------------------------------------------------------

def build_parser() -> Parser:
    parser = Parser(prog="dos-transformer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out", required=True)
    add_grid_args(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("prepare", help="normalize and smooth DOS targets")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=17)
    p.add_argument("--polyorder", type=int, default=1)
    add_grid_args(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("split", help="write train/valid/test partitions")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=cd.SPLIT_STRATEGIES, default="random")
    p.add_argument("--fractions", type=float, nargs=3, default=[0.8, 0.1, 0.1])
    p.add_argument("--seed", type=int, default=default_seed())
    add_grid_args(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fit a model on a split directory")
    p.add_argument("--data", required=True, help="directory with train.jsonl and valid.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=("mlp", "gn", "dostransformer"), default=None)
    p.add_argument("--energy", choices=("on", "off"), default=None)
    p.add_argument("--config", default=None, help="JSON file of training/model settings")
    p.add_argument("--preset", choices=sorted(HYPERPARAMETERS), default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--loss-mode", choices=("paper_pointwise", "batch_rmse"))
    p.add_argument("--d", type=int)
    p.add_argument("--mp-layers", type=int)
    p.add_argument("--attn-layers", type=int)
    p.add_argument("--activation", choices=("softplus", "tanh", "relu"))
    p.add_argument("--num-species", type=int)
    add_grid_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics, family breakdown and Fermi probe")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="split directory")
    p.add_argument("--out", required=True)
    p.add_argument("--partition", choices=("test", "valid", "train"), default="test")
    p.add_argument("--family-key", choices=FAMILY_KEYS, default=None)
    p.add_argument("--no-fermi", action="store_true")
    p.add_argument("--probe-hidden", type=int, default=256)
    p.add_argument("--probe-epochs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=default_seed())
    add_grid_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="write predicted curves for (unlabeled) crystals")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    add_grid_args(p)
    p.set_defaults(func=cmd_predict)
    return parser


def _fail(code: int, kind: str, exc) -> int:
    reason = str(exc).replace("\n", " ").replace('"', "'")
    print(f'error code={code} kind={kind} reason="{reason}"', file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (NumericalError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except (cd.DataValidationError, OSError, json.JSONDecodeError, KeyError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
