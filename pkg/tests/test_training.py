import math

import numpy as np
import pytest
import torch

from dos_transformer.batching import collate
from dos_transformer.crystal_data import CrystalGraph, FeaturizerConfig, generate_synthetic
from dos_transformer.layers import DTYPE
from dos_transformer.models import ModelConfig, build_model
from dos_transformer.spectrum import SmootherConfig, make_grid, prepare
from dos_transformer.training import (
    HYPERPARAMETERS, AdamWState, GraphFeed, NumericalError, TrainConfig, adamw_step, backward,
    evaluate_loss, fit, loss,
)

from conftest import random_crystal
from gradcheck import relative_errors, spread_params

FZ = FeaturizerConfig(num_species=4)
GRID = make_grid(-5, 5, 21)


def t(x):
    return torch.tensor(x, dtype=DTYPE)


def test_loss_examples():
    assert float(loss(t([[0.3, 0.2]]), t([[0.3, 0.2]]))) == 0.0
    for mode in ("paper_pointwise", "batch_rmse"):
        assert float(loss(t([[1.0]]), t([[0.0]]), mode)) == 1.0
    assert float(loss(t([[0.0, 0.0]]), t([[3.0, 4.0]]))) == 3.5
    assert float(loss(t([[0.0, 0.0]]), t([[3.0, 4.0]]), "batch_rmse")) == pytest.approx(math.sqrt(12.5), abs=1e-15)


def test_loss_errors():
    with pytest.raises(ValueError):
        loss(t([[0.0]]), t([[0.0, 1.0]]))
    with pytest.raises(NumericalError):
        loss(t([[float("nan")]]), t([[0.0]]))


def test_hyperparameter_table():
    assert HYPERPARAMETERS["electron_random"] == {"mp_layers": 3, "attn_layers": 2, "d": 256,
                                                  "lr": 0.0001, "batch_size": 8}
    assert HYPERPARAMETERS["phonon"]["lr"] == 0.001 and HYPERPARAMETERS["phonon"]["batch_size"] == 1
    assert HYPERPARAMETERS["electron_system"]["lr"] == 0.0005
    cfg = TrainConfig()
    assert (cfg.max_epochs, cfg.patience, cfg.weight_decay, cfg.betas, cfg.eps) == (1000, 50, 0.01, (0.9, 0.999), 1e-8)


def test_train_config_rejects():
    for bad in ({"lr": 0}, {"batch_size": 0}, {"patience": 0}, {"loss_mode": "huber"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def _batch(rng, m=GRID.m, n=3):
    graphs = [random_crystal(rng, cid=f"c{k}", with_dos_m=m) for k in range(n)]
    return collate(graphs, FZ)


@pytest.fixture
def tiny():
    return spread_params(build_model(ModelConfig(d=4, mp_layers=1, attn_layers=2, m=GRID.m, featurizer=FZ, seed=1)))


def test_backward_matches_finite_differences(tiny, rng):
    errs = relative_errors(tiny, _batch(rng, n=2))
    assert max(errs.values()) < 1e-4, errs


def test_backward_zero_residual(tiny, rng):
    b = _batch(rng)
    with torch.no_grad():
        target = tiny(b)
    value, grads = backward(tiny, b, target=target)
    assert value == 0.0
    assert all(not g.any() for g in grads.values())


def test_backward_nonfinite_names_tensor(tiny, rng):
    b = _batch(rng)
    with torch.no_grad():
        tiny.energy.bank[0, 0] = float("inf")
    with pytest.raises(NumericalError, match="energy.bank|NaN"):
        backward(tiny, b)


def test_alpha_gradient_flips_with_pooled_sign(rng):
    """At alpha = 0, L(alpha; -g) = L(-alpha; g), so d loss / d alpha changes sign."""
    from dos_transformer import energy_transformer as et

    dec = et.EnergyDecoder(3, generator=torch.Generator().manual_seed(2))
    e = torch.as_tensor(rng.normal(size=(5, 3)))
    g = torch.as_tensor(rng.normal(size=3))
    y = torch.as_tensor(rng.uniform(size=(1, 5)))
    with torch.no_grad():
        dec.alpha.zero_()

    def grad_alpha(vec):
        dec.zero_grad()
        loss(et.decode(e, vec, dec)[None], y, "batch_rmse").backward()
        return float(dec.alpha.grad)

    def fd_alpha(vec, h=1e-6):
        with torch.no_grad():
            vals = []
            for a in (h, -h):
                dec.alpha.fill_(a)
                vals.append(float(loss(et.decode(e, vec, dec)[None], y, "batch_rmse")))
            dec.alpha.zero_()
        return (vals[0] - vals[1]) / (2 * h)

    pos, neg = grad_alpha(g), grad_alpha(-g)
    assert pos != 0.0
    assert neg == pytest.approx(-pos, rel=1e-12)
    assert pos == pytest.approx(fd_alpha(g), rel=1e-6)
    assert neg == pytest.approx(fd_alpha(-g), rel=1e-6)


def test_shared_bank_gradient_is_mean_of_crystals(tiny, rng):
    graphs = [random_crystal(rng, cid=f"c{k}", with_dos_m=GRID.m) for k in range(2)]
    _, both = backward(tiny, collate(graphs, FZ))
    per = [backward(tiny, collate([g], FZ))[1]["energy.bank"].clone() for g in graphs]
    torch.testing.assert_close(both["energy.bank"], (per[0] + per[1]) / 2, rtol=0, atol=1e-14)


def test_adamw_fixed_point_and_first_step():
    cfg = TrainConfig(lr=1e-3, weight_decay=0.0)
    p = {"p": t([0.7])}
    adamw_step(p, {"p": t([0.0])}, AdamWState(), cfg)
    assert float(p["p"]) == 0.7
    p = {"p": t([0.0])}
    adamw_step(p, {"p": t([1.0])}, AdamWState(), TrainConfig(lr=1e-3))
    assert float(p["p"]) == pytest.approx(-1e-3, rel=1e-7)


def test_adamw_decay_only_geometric():
    cfg = TrainConfig(lr=0.1, weight_decay=0.5)
    p = {"p": t([2.0])}
    state = AdamWState()
    for k in range(1, 6):
        adamw_step(p, {"p": t([0.0])}, state, cfg)
        assert float(p["p"]) == pytest.approx(2.0 * 0.95 ** k, rel=1e-14)


def test_adamw_zero_lr_is_identity():
    p = {"p": t([1.0, -2.0])}
    before = p["p"].clone()
    adamw_step(p, {"p": t([0.3, 0.1])}, AdamWState(), TrainConfig(lr=1e-300, weight_decay=0.0))
    torch.testing.assert_close(p["p"], before, rtol=0, atol=1e-290)


def test_adamw_matches_torch_reference(rng):
    cfg = TrainConfig(lr=3e-3, weight_decay=0.05)
    ours = {"w": torch.as_tensor(rng.normal(size=(3, 2)))}
    ref = torch.nn.Parameter(ours["w"].clone())
    opt = torch.optim.AdamW([ref], lr=cfg.lr, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    state = AdamWState()
    for _ in range(25):
        g = torch.as_tensor(rng.normal(size=(3, 2)))
        adamw_step(ours, {"w": g}, state, cfg)
        ref.grad = g.clone()
        opt.step()
    torch.testing.assert_close(ours["w"], ref.detach(), rtol=0, atol=1e-12)


@pytest.fixture(scope="module")
def synth_sets():
    ds, _ = prepare(generate_synthetic(24, 5, GRID), SmootherConfig(5, 1))
    return ds.subset(ds.crystals[:16]), ds.subset(ds.crystals[16:])


def _fit(synth_sets, **kw):
    model = build_model(ModelConfig(d=8, mp_layers=1, attn_layers=1, m=GRID.m, featurizer=FZ, seed=0))
    cfg = TrainConfig(**{"lr": 3e-3, "batch_size": 4, "max_epochs": 30, "patience": 5, **kw})
    return fit(model, *synth_sets, cfg)


def test_fit_best_snapshot_and_history(synth_sets):
    model, hist = _fit(synth_sets)
    train, valid = synth_sets
    assert hist.epochs == list(range(1, len(hist.epochs) + 1))
    assert evaluate_loss(model, GraphFeed(valid, model)) == hist.best_valid
    assert hist.valid_loss[hist.best_epoch - 1] == hist.best_valid
    if hist.stop_epoch < 30:
        assert hist.stop_epoch - hist.best_epoch == 5
    assert hist.train_loss[-1] < hist.train_loss[0]


def test_fit_reproducible(synth_sets):
    m1, h1 = _fit(synth_sets, max_epochs=6)
    m2, h2 = _fit(synth_sets, max_epochs=6)
    assert h1.to_csv() == h2.to_csv()
    for (k, a), (_, b) in zip(m1.state_dict().items(), m2.state_dict().items()):
        assert torch.equal(a, b), k


def test_fit_early_stop_triggers(synth_sets):
    _, hist = _fit(synth_sets, max_epochs=200, patience=1, lr=0.05)
    assert hist.stop_epoch < 200
    assert hist.stop_epoch - hist.best_epoch == 1


def test_fit_max_steps(synth_sets):
    _, hist = _fit(synth_sets, max_steps=6)
    assert hist.steps == 6


def test_fit_rejects_empty(synth_sets):
    model = build_model(ModelConfig(d=4, mp_layers=1, m=GRID.m, featurizer=FZ))
    with pytest.raises(ValueError):
        fit(model, synth_sets[0].subset([]), synth_sets[1], TrainConfig())
