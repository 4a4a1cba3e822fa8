import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from dips.core import load_dataset, save_dataset
from dips.diffusion import TrajectoryDiffusion
from dips.discriminator import TrajectoryDiscriminator, train_discriminator
from dips.domain import make_task
from dips.pipeline import generate_dataset

# Trained artifacts are expensive on one CPU, so they are built once and cached.
ARTIFACT_DIR = Path(os.environ.get("DIPS_ARTIFACT_DIR", Path(__file__).resolve().parent.parent / ".artifacts"))

# sizes used by the acceptance suite
N_DEMOS = {"card": 192, "rotor": 240}
DIFFUSION_STEPS = {"card": 12000, "rotor": 120000}


@pytest.fixture(scope="session")
def card():
    return make_task("card")


@pytest.fixture(scope="session")
def rotor():
    return make_task("rotor")


@pytest.fixture(params=["card", "rotor"])
def task(request):
    return make_task(request.param)


def _timings_path():
    return ARTIFACT_DIR / "build_seconds.json"


def _record(key, seconds):
    path = _timings_path()
    data = json.loads(path.read_text()) if path.exists() else {}
    data[key] = seconds
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def build_seconds(name):
    """Wall time spent generating data and training models for one task, as recorded when built."""
    path = _timings_path()
    data = json.loads(path.read_text()) if path.exists() else {}
    keys = [f"{name}_dataset", f"{name}_models"]
    if not all(k in data for k in keys):
        return None
    return sum(data[k] for k in keys)


def _dataset(name):
    path = ARTIFACT_DIR / f"{name}_n{N_DEMOS[name]}.jsonl"
    if path.exists():
        return load_dataset(path)
    ARTIFACT_DIR.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ds = generate_dataset(make_task(name), N_DEMOS[name], seed=0)
    save_dataset(ds, path)
    _record(f"{name}_dataset", time.perf_counter() - t0)
    return ds


def _models(name, ds):
    dpath = ARTIFACT_DIR / f"{name}_diffusion_{DIFFUSION_STEPS[name]}.ckpt"
    spath = ARTIFACT_DIR / f"{name}_discriminator_{DIFFUSION_STEPS[name]}.ckpt"
    if dpath.exists() and spath.exists():
        return TrajectoryDiffusion.load(dpath, task=ds.task), TrajectoryDiscriminator.load(spath, task=ds.task)
    t0 = time.perf_counter()
    diff = TrajectoryDiffusion(task=ds.task, steps=DIFFUSION_STEPS[name], random_state=0).fit(ds)
    diff.save(dpath)
    disc = train_discriminator(ds, diff, seed=0)
    disc.save(spath)
    _record(f"{name}_models", time.perf_counter() - t0)
    return diff, disc


@pytest.fixture(scope="session")
def card_dataset():
    return _dataset("card")


@pytest.fixture(scope="session")
def rotor_dataset():
    return _dataset("rotor")


@pytest.fixture(scope="session")
def card_models(card_dataset):
    return _models("card", card_dataset)


@pytest.fixture(scope="session")
def rotor_models(rotor_dataset):
    return _models("rotor", rotor_dataset)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ------------------------------------------------------------


def pytest_configure(config):
    config._dips_acceptance = {}


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed at the end of the run."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config._dips_acceptance[number] = line
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_dips_acceptance", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
