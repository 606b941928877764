"""Smoke test for the dvqr extension module.

Build and run:
    cargo build --release -p dvqr-python --features extension-module
    cp target/release/libdvqr.so python/dvqr.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import dvqr  # noqa: E402


def main():
    c = dvqr.PairCopula("clayton", 1.0)
    assert abs(c.tau() - 1.0 / 3.0) < 1e-12
    assert abs(c.hfunc(c.hinv(0.3, 0.6), 0.6) - 0.3) < 1e-10
    assert abs(dvqr.PairCopula.from_tau("gumbel", 0.5, 180).theta - 2.0) < 1e-9

    rows = dvqr.sample_clayton(3, 1.0, 800, seed=1)
    x1 = [float(sum(u[0] > t for t in (0.25, 0.75))) for u in rows]
    x2 = [u[1] for u in rows]
    x3 = [u[2] for u in rows]
    y = [2.0 * a - 3.0 * c + 0.5 * math.sin(17.0 * i) for i, (a, c) in enumerate(zip(x1, x3))]
    columns = [y, x1, x2, x3]
    kinds = ["continuous", "discrete", "continuous", "continuous"]

    for mode in ("parametric", "nonparametric"):
        model = dvqr.Model.fit(columns, kinds, 0, [1, 2, 3], mode=mode, seed=3)
        assert set(model.covariates[:2]) == {1, 3}, model
        q = model.predict([0.1, 0.5, 0.9], [float("nan"), 1.0, 0.5, 0.4])
        assert q[0] <= q[1] <= q[2], q
        back = dvqr.Model.from_json(model.to_json())
        assert back.predict([0.5], [0.0, 1.0, 0.5, 0.4]) == model.predict([0.5], [0.0, 1.0, 0.5, 0.4])
        print(f"{mode}: {model!r} median at x=(1, 0.5, 0.4): {q[1]:.4f}")

    try:
        dvqr.Model.fit(columns, kinds, 0, [])
    except ValueError:
        pass
    else:
        raise AssertionError("fitting without covariates should fail")

    assert dvqr.tick_loss(-1.0, 0.0, 0.1) == 0.9
    assert dvqr.mrase([[1.0, 3.0]], [[1.0, 3.0]]) == 0.0
    table = dvqr.run_grid("g = linear3\nn_train = 200\nN = 2\nsnr = 2\nalpha = 0.5\nmethods = oracle\nreplications = 2\nn_eval = 20\n")
    assert table[0]["mrase"] == 0.0 and table[0]["method"] == "oracle"
    print("smoke test passed")


if __name__ == "__main__":
    main()
