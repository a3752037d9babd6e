"""Smoke test for the qus extension module.

Build and install first, e.g.

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/qus-*.whl

then run ``python python/smoke_test.py``.
"""

import json
import math
import random
import tempfile
from pathlib import Path

import qus

TINY = {
    "dataset": {
        "sim": {"phantom_width_mm": 6.0, "phantom_depth_mm": 5.0},
        "n_fds_phantoms": 3,
        "n_lds_phantoms": 3,
        "n_test_phantoms_per_class": 2,
        "train_patches": 40,
        "val_patches": 12,
        "test_patches": 12,
        "patch_rows": 64,
        "patch_cols": 16,
    },
    "train": {"schedule": {"max_epochs": 2, "batch_size": 16}},
    "bootstrap": {"n_resamples": 50},
}


def rayleigh_patch(rows, cols, rng):
    return [[math.hypot(rng.gauss(0, 1), rng.gauss(0, 1)) for _ in range(cols)] for _ in range(rows)]


def main():
    rng = random.Random(0)
    patch = rayleigh_patch(256, 256, rng)
    r, s, entropy, t = qus.features(patch, v=1.0)
    assert abs(r - 1.913) < 0.05, r
    assert abs(s - 0.631) < 0.1, s
    m = qus.nakagami_m(patch)
    assert abs(m - 1.0) < 0.05, m

    assert qus.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    report = qus.evaluate([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1], n_resamples=200, seed=1)
    assert report["youden_j"] == 0.5

    cfg = json.dumps(TINY)
    assert "dataset" in json.loads(qus.default_config())
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        splits = qus.simulate(tmp / "data", config=cfg, seed=3)
        assert splits["train"]["count"] == 40

        norm = qus.featurize(tmp / "data", tmp / "features", config=cfg)
        assert len(norm["min"]) == 4

        model = qus.train(tmp / "data", "mlp", tmp / "mlp", config=cfg, seed=3)
        assert model.model_id == "mlp" and model.outputs_probability
        loaded = qus.Model.load(tmp / "mlp" / "model.qusm")
        patches = [rayleigh_patch(64, 16, rng) for _ in range(3)]
        scores = loaded.score(patches)
        assert scores == model.score(patches)
        assert all(0.0 <= p <= 1.0 for p in scores)

        rep = qus.eval(tmp / "mlp" / "model.qusm", tmp / "data", tmp / "eval", config=cfg)
        assert 0.0 <= rep["auc"] <= 1.0 and rep["model_id"] == "mlp"

        frame = next((tmp / "data" / "frames").glob("*.qusf"))
        grid = qus.probability_map(tmp / "mlp" / "model.qusm", frame, tmp / "map", overlap=0.5, config=cfg)
        assert grid and all(0.0 <= p <= 1.0 for row in grid for p in row)

        try:
            qus.train(tmp / "data", "cnn9", tmp / "bad", config=cfg)
        except qus.Error as e:
            assert e.code == 1
        else:
            raise AssertionError("unknown model id accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
