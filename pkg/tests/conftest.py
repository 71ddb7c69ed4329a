"""Shared fixtures for the acceptance suite.

The desk-scale models take real CPU time to train, so datasets and trained
models are cached under the system temp directory, keyed by every input
that determines their bytes. Dataset files and model files are
byte-reproducible functions of those inputs, which is what makes the cache
safe; delete the directory to force a rebuild.
"""

import hashlib
import tempfile
from pathlib import Path

import numpy as np
import pytest

from mlao.network import Hyper, init_model, load_model, save_model
from mlao.training import DatasetSpec, generate_dataset, load_dataset, save_dataset, train

DESK_MODES = (5, 6, 7, 8, 11)
DESK_GRID = 64
# unaberrated peak photon budget spans dim to bright acquisitions so the
# comparison microscopes stay inside the training distribution
DESK_POISSON = (100.0, 3000.0)

CACHE = Path(tempfile.gettempdir()) / "mlao-acceptance-cache"


def desk_spec(tag, n_samples, seed):
    return DatasetSpec(
        scheme_tag=tag,
        corrected_modes=DESK_MODES,
        n_samples=n_samples,
        seed=seed,
        grid_size=DESK_GRID,
        poisson_range=DESK_POISSON,
    )


def _key(*parts):
    return hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()[:16]


def cached_dataset(spec, log=print):
    CACHE.mkdir(parents=True, exist_ok=True)
    path = CACHE / f"data-{_key(spec.to_json())}.mlaodat"
    if path.exists():
        return load_dataset(path)
    log(f"[fixtures] generating {spec.n_samples} {spec.scheme_tag} samples ...")
    data = generate_dataset(spec)
    save_dataset(path, data)
    return data


def cached_model(spec, init_seed, train_seed, epochs, log=print):
    CACHE.mkdir(parents=True, exist_ok=True)
    path = CACHE / f"model-{_key(spec.to_json(), init_seed, train_seed, epochs)}.mlaonet"
    scheme = spec.scheme()
    if path.exists():
        return load_model(path, expect_scheme=spec.scheme_tag)
    data = cached_dataset(spec, log)
    model = init_model(
        np.random.default_rng(init_seed),
        scheme.n_channels,
        scheme.n_modes,
        scheme_tag=spec.scheme_tag,
        corrected_modes=spec.corrected_modes,
    )
    log(f"[fixtures] training {spec.scheme_tag} for {epochs} epochs ...")
    train(model, data, Hyper(), epochs=epochs, val_fraction=0.1, seed=train_seed, log_fn=log)
    save_model(path, model)
    return model


@pytest.fixture(scope="session")
def desk_ast2():
    spec = desk_spec("ast2", 20000, seed=101)
    return cached_model(spec, init_seed=12, train_seed=1, epochs=25), spec


@pytest.fixture(scope="session")
def desk_2n():
    spec = desk_spec("2n", 20000, seed=102)
    return cached_model(spec, init_seed=11, train_seed=1, epochs=25), spec


@pytest.fixture(scope="session")
def trio_2n():
    """Three independently seeded smaller trainings for the weight trend.

    The first-section dominance develops with optimization steps (the later
    sections keep shrinking under weight decay while the input section does
    the discriminative work), so these shorter datasets train for more
    epochs to reach a comparable step count.
    """
    models = []
    for k in range(3):
        spec = desk_spec("2n", 5000, seed=801 + k)
        models.append(cached_model(spec, init_seed=31 + k, train_seed=21 + k, epochs=40))
    return models


_CRITERION_LINES = []


def record_criterion(line):
    """Collect a one-line verdict; printed together at the end of the run."""
    _CRITERION_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _CRITERION_LINES:
        terminalreporter.write_line(line)
