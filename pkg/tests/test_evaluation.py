import math

import numpy as np
import pytest
import torch

from dos_transformer.crystal_data import generate_synthetic
from dos_transformer.evaluation import (
    FermiProbe, MetricReport, ProbeConfig, family_breakdown, family_label, fermi_eval,
    fermi_probe_train, metrics, per_crystal_metrics, report,
)
from dos_transformer.spectrum import make_grid, prepare, SmootherConfig
from dos_transformer.training import TrainConfig

from conftest import random_crystal


def test_metrics_hand_example():
    pred = np.array([[0.0, 2.0], [1.0, 1.0]])
    target = np.zeros((2, 2))
    rmse, mae = per_crystal_metrics(pred, target)
    np.testing.assert_allclose(rmse, [math.sqrt(2.0), 1.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(mae, [1.0, 1.0], rtol=0, atol=1e-15)
    # averaged per crystal, not pooled over all points
    assert metrics(pred, target)[0] == pytest.approx((math.sqrt(2.0) + 1.0) / 2, abs=1e-15)
    assert metrics(pred, target)[0] != pytest.approx(math.sqrt(6.0 / 4.0))


def test_metrics_zero_and_shape():
    y = np.random.default_rng(0).random((3, 7))
    assert metrics(y, y) == (0.0, 0.0)
    with pytest.raises(ValueError):
        metrics(y, y[:, :5])
    with pytest.raises(ValueError):
        MetricReport(-1.0, 0.0, 1)


def test_family_breakdown(rng):
    crystals = [random_crystal(rng, cid=f"c{k}", with_dos_m=4) for k in range(12)]
    pred = rng.random((12, 4))
    target = np.stack([c.dos for c in crystals])
    fam = family_breakdown(pred, target, crystals, "n_species_kinds")
    assert sum(v["n"] for v in fam.values()) == 12
    rmse, _ = per_crystal_metrics(pred, target)
    for label, v in fam.items():
        sel = [k for k, c in enumerate(crystals) if family_label(c, "n_species_kinds") == label]
        assert v["rmse"] == pytest.approx(rmse[sel].mean(), abs=1e-15)
    rep = report(pred, target, crystals, "crystal_system")
    assert set(rep.per_family) <= {c.crystal_system for c in crystals}
    assert rep.to_dict()["n_crystals"] == 12
    with pytest.raises(ValueError):
        family_breakdown(pred, target, crystals, "space_group")


def test_probe_zero_weights_is_constant():
    probe = FermiProbe(5, ProbeConfig(hidden=8))
    with torch.no_grad():
        for name, p in probe.named_parameters():
            p.zero_()
        probe.net.b3.fill_(0.25)
    dos = np.random.default_rng(1).random((6, 5))
    fermi = np.linspace(-1, 1, 6)
    np.testing.assert_array_equal(probe.predict(dos), np.full(6, 0.25))
    assert fermi_eval(probe, dos, fermi) == pytest.approx(np.sqrt(np.mean((0.25 - fermi) ** 2)), abs=1e-15)
    with pytest.raises(ValueError):
        probe.predict(dos[:, :4])
    with pytest.raises(ValueError):
        fermi_eval(probe, dos, [None] * 6)


def test_probe_learns_fermi_from_true_dos():
    grid = make_grid(-5, 5, 41)
    ds, _ = prepare(generate_synthetic(96, 3, grid), SmootherConfig(5, 1))
    train, test = ds.subset(ds.crystals[:80]), ds.subset(ds.crystals[80:])
    cfg = ProbeConfig(hidden=32, train=TrainConfig(lr=3e-3, batch_size=16, max_epochs=150,
                                                   patience=30, loss_mode="mse"))
    ftrain = [c.fermi_target for c in train]
    probe = fermi_probe_train(train.targets(), ftrain, cfg)
    assert all(not p.requires_grad for p in probe.parameters())
    ftest = np.array([c.fermi_target for c in test])
    err = fermi_eval(probe, test.targets(), ftest)
    assert err < 0.5 * np.std(ftest)
