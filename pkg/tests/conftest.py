"""Fixtures: MNIST location, cached long-running pipeline artifacts.

The heavy experiments (10-epoch baseline, distillation, patch training) run
through the CLI exactly once and land in a cache directory; later pytest
invocations reuse them. Set ADVLAB_TEST_FRESH=1 to force a rebuild, and
ADVLAB_DATA_DIR / ADVLAB_TEST_CACHE to relocate the inputs/cache.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from advlab import cli, dataset

REPO_ROOT = Path(__file__).resolve().parent.parent
RUN_SEED = 0


@pytest.fixture(scope="session")
def data_dir() -> Path:
    path = Path(os.environ.get("ADVLAB_DATA_DIR", REPO_ROOT / "data"))
    if not path.is_dir():
        pytest.fail(
            f"MNIST data directory {path} not found; place the IDX train files "
            "there or point ADVLAB_DATA_DIR at them"
        )
    return path


@pytest.fixture(scope="session")
def cache_dir() -> Path:
    path = Path(os.environ.get("ADVLAB_TEST_CACHE", REPO_ROOT / ".testcache"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_cached(cache_dir: Path, name: str, argv: list[str]) -> Path:
    """Run a CLI command once; a DONE marker makes later sessions reuse it."""
    out = cache_dir / name
    marker = out / "DONE"
    if os.environ.get("ADVLAB_TEST_FRESH") == "1" and marker.exists():
        marker.unlink()
    if not marker.exists():
        out.mkdir(parents=True, exist_ok=True)
        code = cli.main(argv)
        assert code == 0, f"advlab {argv[0]} failed while building the {name} fixture"
        marker.write_text("ok\n", encoding="utf-8")
    return out


@pytest.fixture(scope="session")
def baseline_dir(data_dir, cache_dir) -> Path:
    return _run_cached(
        cache_dir,
        "baseline",
        [
            "train",
            "--data-dir", str(data_dir),
            "--out-dir", str(cache_dir / "baseline"),
            "--seed", str(RUN_SEED),
        ],
    )


@pytest.fixture(scope="session")
def fgsm_dir(data_dir, cache_dir, baseline_dir) -> Path:
    return _run_cached(
        cache_dir,
        "fgsm",
        [
            "attack-fgsm",
            str(baseline_dir / "baseline.ckpt"),
            "--data-dir", str(data_dir),
            "--out-dir", str(cache_dir / "fgsm"),
            "--seed", str(RUN_SEED),
        ],
    )


@pytest.fixture(scope="session")
def distill_dir(data_dir, cache_dir) -> Path:
    return _run_cached(
        cache_dir,
        "distill",
        [
            "distill",
            "--data-dir", str(data_dir),
            "--out-dir", str(cache_dir / "distill"),
            "--seed", str(RUN_SEED),
        ],
    )


@pytest.fixture(scope="session")
def patch_dir(data_dir, cache_dir, baseline_dir) -> Path:
    return _run_cached(
        cache_dir,
        "patch",
        [
            "attack-patch",
            str(baseline_dir / "baseline.ckpt"),
            "--data-dir", str(data_dir),
            "--out-dir", str(cache_dir / "patch"),
            "--seed", str(RUN_SEED),
        ],
    )


@pytest.fixture(scope="session")
def mnist_split(data_dir):
    full = dataset.load_mnist_train(data_dir)
    return dataset.split(full, RUN_SEED)


@pytest.fixture(scope="session")
def holdout(mnist_split) -> dataset.LabeledDataset:
    return mnist_split[1]


@pytest.fixture(scope="session")
def train_set(mnist_split) -> dataset.LabeledDataset:
    return mnist_split[0]
