import os
from pathlib import Path

import numpy as np
import pytest

from fedrisk.dataset import OULAD_FILES, LabeledDataset, RegistrationKey

OULAD_ENV_VAR = "FEDRISK_OULAD_DIR"


def make_dataset(X, y, modules=None, presentation="2014J") -> LabeledDataset:
    """Build a LabeledDataset from raw arrays with generated keys."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.int64)
    n = y.shape[0]
    if modules is None:
        modules = ["AAA"] * n
    keys = [RegistrationKey(1000 + i, modules[i], presentation) for i in range(n)]
    names = [f"f{j}" for j in range(X.shape[1])]
    return LabeledDataset(feature_names=names, X=X, y=y, keys=keys)


def find_oulad_dir():
    """Directory with the real OULAD CSV files, or None."""
    candidates = []
    env = os.environ.get(OULAD_ENV_VAR)
    if env:
        candidates.append(Path(env))
    candidates.append(Path(__file__).resolve().parent.parent / "data" / "oulad")
    for candidate in candidates:
        if candidate.is_dir() and all((candidate / f).is_file() for f in OULAD_FILES):
            return candidate
    return None


@pytest.fixture(scope="session")
def oulad_dir():
    found = find_oulad_dir()
    if found is None:
        pytest.skip(
            f"real OULAD data not found (set {OULAD_ENV_VAR} or place the five "
            "CSV files under data/oulad/)"
        )
    return found
