"""Shared fixtures."""

from pathlib import Path

import numpy as np
import pytest

from quasirand.models.models import ObservedData


def random_observed(rng: np.random.Generator, *, p: int = 2, n_c: int | None = None, n_r: int | None = None):
    """Small random dataset with every optional column filled."""
    n_c = n_c or int(rng.integers(5, 20))
    n_r = n_r or int(rng.integers(5, 20))
    return ObservedData(
        conv_x=rng.normal(size=(n_c, p)),
        conv_y=rng.normal(size=n_c),
        conv_pi_r=rng.uniform(0.05, 0.9, size=n_c),
        ref_x=rng.normal(size=(n_r, p)),
        ref_pi_r=rng.uniform(0.05, 0.9, size=n_r),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def small_data(rng: np.random.Generator) -> ObservedData:
    return random_observed(rng, p=1, n_c=30, n_r=40)


@pytest.fixture(scope="session")
def seed7_data() -> ObservedData:
    """The fixed 40-unit dataset (20 convenience, 20 reference) behind the grid-search oracle."""
    rng = np.random.default_rng(7)
    return ObservedData(
        conv_x=rng.normal(0.5, 1.0, size=(20, 1)),
        conv_y=rng.normal(1.0, 1.0, size=20),
        conv_pi_r=rng.uniform(0.2, 0.6, size=20),
        ref_x=rng.normal(0.0, 1.0, size=(20, 1)),
        ref_pi_r=rng.uniform(0.2, 0.6, size=20),
    )


@pytest.fixture(scope="session")
def seed42_data() -> ObservedData:
    rng = np.random.default_rng(42)
    return random_observed(rng, p=1, n_c=60, n_r=80)


def write_csv(path: Path, header: list[str], rows: list[list[object]], *, bom: bool = False) -> Path:
    lines = [",".join(header)] + [",".join(str(v) for v in row) for row in rows]
    path.write_text(("﻿" if bom else "") + "\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def toy_files(tmp_path: Path) -> tuple[Path, Path]:
    """Convenience file with pi_r and a matching reference file, one covariate."""
    conv = write_csv(
        tmp_path / "convenience.csv",
        ["y", "x1", "pi_r"],
        [[1.0, 0.2, 0.3], [2.0, -0.4, 0.5], [3.5, 1.1, 0.2], [0.5, 0.0, 0.4], [2.2, 0.7, 0.25]],
    )
    ref = write_csv(
        tmp_path / "reference.csv",
        ["x1", "pi_r"],
        [[0.1, 0.3], [-0.8, 0.5], [0.9, 0.2], [-0.2, 0.4], [0.4, 0.25], [1.5, 0.35], [-1.2, 0.6]],
    )
    return conv, ref
