"""Synthetic-scale experiments: the overfit check and the five-model benchmark."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .crystal_data import Dataset, generate_synthetic
from .evaluation import ProbeConfig, fermi_eval, fermi_probe_train, metrics
from .models import ModelConfig, build_model, predict_many
from .spectrum import ELECTRON_GRID, EnergyGrid, SmootherConfig, prepare
from .training import TrainConfig, evaluate_loss, fit, GraphFeed

log = logging.getLogger(__name__)

# (name, model kind, energy bank)
BENCHMARK_MODELS = (
    ("mlp_direct", "mlp", False),
    ("mlp_energy", "mlp", True),
    ("gn_direct", "gn", False),
    ("gn_energy", "gn", True),
    ("dostransformer", "dostransformer", True),
)


@dataclass(frozen=True)
class OverfitConfig:
    n_crystals: int = 64
    data_seed: int = 1
    d: int = 32
    mp_layers: int = 2
    attn_layers: int = 2
    activation: str = "tanh"
    grid: EnergyGrid = ELECTRON_GRID
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=7e-3, batch_size=64, max_epochs=2000, patience=2000, max_steps=2000))


def overfit_run(cfg: OverfitConfig = OverfitConfig()) -> dict:
    """Fit a small DOSTransformer to a fixed synthetic set; train == valid."""
    ds, _ = prepare(generate_synthetic(cfg.n_crystals, cfg.data_seed, cfg.grid))
    model = build_model(ModelConfig(d=cfg.d, mp_layers=cfg.mp_layers, attn_layers=cfg.attn_layers,
                                    m=cfg.grid.m, activation=cfg.activation, seed=cfg.train.seed))
    t0 = time.perf_counter()
    model, hist = fit(model, ds, ds, cfg.train)
    seconds = time.perf_counter() - t0
    final = evaluate_loss(model, GraphFeed(ds, model), cfg.train.loss_mode)
    return {"final_loss": final, "steps": hist.steps, "seconds": seconds, "history": hist}


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train: int = 512
    n_valid: int = 64
    n_test: int = 64
    d: int = 32
    mp_layers: int = 2
    attn_layers: int = 2
    activation: str = "tanh"
    grid: EnergyGrid = ELECTRON_GRID
    smoother: SmootherConfig = SmootherConfig()
    # shared by all five models
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=5e-3, batch_size=32, max_epochs=400, patience=30))
    probe: ProbeConfig = field(default_factory=lambda: ProbeConfig(
        hidden=64, train=TrainConfig(lr=1e-3, batch_size=32, max_epochs=300, patience=30,
                                     loss_mode="mse")))

    def to_dict(self) -> dict:
        return asdict(self)


def benchmark_data(seed: int, cfg: BenchmarkConfig) -> tuple[Dataset, Dataset, Dataset]:
    n = cfg.n_train + cfg.n_valid + cfg.n_test
    ds, _ = prepare(generate_synthetic(n, seed, cfg.grid), cfg.smoother)
    c = ds.crystals
    return (ds.subset(c[:cfg.n_train]), ds.subset(c[cfg.n_train:cfg.n_train + cfg.n_valid]),
            ds.subset(c[cfg.n_train + cfg.n_valid:]))


def run_benchmark(seed: int, cfg: BenchmarkConfig = BenchmarkConfig(), models=BENCHMARK_MODELS) -> dict:
    """Train every model on one synthetic draw; test RMSE/MAE and probe Fermi RMSE per model."""
    train, valid, test = benchmark_data(seed, cfg)
    probe_cfg = replace(cfg.probe, seed=seed, train=replace(cfg.probe.train, seed=seed))
    probe = fermi_probe_train(train.targets(), [c.fermi_target for c in train], probe_cfg,
                              valid.targets(), [c.fermi_target for c in valid])
    fermi_true = [c.fermi_target for c in test]
    out = {"seed": seed, "probe_on_true_dos": fermi_eval(probe, test.targets(), fermi_true)}
    for name, kind, energy in models:
        mcfg = ModelConfig(kind=kind, energy=energy, d=cfg.d, mp_layers=cfg.mp_layers,
                           attn_layers=cfg.attn_layers, m=cfg.grid.m, activation=cfg.activation, seed=seed)
        t0 = time.perf_counter()
        model, hist = fit(build_model(mcfg), train, valid, replace(cfg.train, seed=seed))
        pred = predict_many(test.crystals, model)
        rmse, mae = metrics(pred, test.targets())
        out[name] = {"rmse": rmse, "mae": mae, "fermi_rmse": fermi_eval(probe, pred, fermi_true),
                     "best_epoch": hist.best_epoch, "steps": hist.steps,
                     "seconds": time.perf_counter() - t0}
        log.info("seed %d %s: rmse %.4f fermi %.3f (%d steps)", seed, name, rmse,
                 out[name]["fermi_rmse"], hist.steps)
    return out


def medians(runs: list[dict], key: str) -> dict[str, float]:
    return {name: float(np.median([r[name][key] for r in runs])) for name, _, _ in BENCHMARK_MODELS
            if all(name in r for r in runs)}


def ordering_checks(runs: list[dict]) -> dict[str, bool]:
    """The qualitative orderings asserted on median test RMSE and probe Fermi RMSE."""
    rm, fm = medians(runs, "rmse"), medians(runs, "fermi_rmse")
    return {
        "mlp_energy<=mlp_direct": rm["mlp_energy"] <= rm["mlp_direct"],
        "gn_energy<=gn_direct": rm["gn_energy"] <= rm["gn_direct"],
        "dostransformer<=best_energy": rm["dostransformer"] <= min(rm["mlp_energy"], rm["gn_energy"]),
        "fermi_dostransformer<=mlp_direct": fm["dostransformer"] <= fm["mlp_direct"],
    }
