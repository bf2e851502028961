from __future__ import annotations

import sys

import numpy as np
import pytest

from fdibench.attacks import AttackKind, AttackModel, gps_mask
from fdibench.dynamics import ModelI, ModelII
from fdibench.ekf import ResidueSequence
from fdibench.noise import NoiseFamily, NoiseModel
from fdibench.simulate import Scenario, WaypointController


def make_noise(family=NoiseFamily.GAUSSIAN, model=None, gps_std=0.5,
               cam_std=0.05, mag_std=0.02, process_std=0.01):
    """Noise model with the stock sensor scales for either plant."""
    model = model or ModelI()
    stds = [gps_std] * 3 + [cam_std] * 3
    if model.m == 7:
        stds.append(mag_std)
    return NoiseModel.from_std(family, process_std, np.array(stds), n=model.n)


def make_scenario(model=None, family=NoiseFamily.GAUSSIAN, attack=None,
                  t_steps=400, seed=7, **noise_kw):
    model = model or ModelI()
    noise = make_noise(family, model, **noise_kw)
    if attack is None:
        attack = AttackModel.none(model.m)
    ctrl = WaypointController(waypoints=((1.0, -1.0, 1.0),))
    return Scenario(model=model, noise=noise, attack=attack, controller=ctrl,
                    t_steps=t_steps, seed=seed)


def bias_attack(model, magnitude=2.5, start=100, axes=(0, 1, 2), end=None):
    return AttackModel(kind=AttackKind.BIAS, mask=gps_mask(model, axes),
                       magnitude=magnitude, start=start, end=end)


def ramp_attack(model, rate=0.0125, start=100, axes=(0, 1, 2), end=None):
    return AttackModel(kind=AttackKind.RAMP, mask=gps_mask(model, axes),
                       magnitude=rate, start=start, end=end)


@pytest.fixture
def model1():
    return ModelI()


@pytest.fixture
def model2():
    return ModelII()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, when that suite ran."""
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok in sorted(results):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:02d} {verdict}  {title}")


def toy_sequence(data, labels=None, model_id="model1"):
    """Residue container around raw synthetic data (whitened = raw)."""
    data = np.asarray(data, dtype=float)
    t, m = data.shape
    return ResidueSequence(
        model_id=model_id,
        channel_names=tuple(f"ch{i}" for i in range(m)),
        r=data.copy(), r_tilde=data.copy(),
        warmup=np.zeros(t, dtype=bool),
        labels=list(labels) if labels is not None else ["clean"] * t,
        estimates=np.zeros((t, 1)), meta={})
