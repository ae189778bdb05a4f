"""Smoke test for the ddnn_py extension.

Build and run from the workspace root:

    cargo build --release -p ddnn-python
    cp target/release/libddnn_py.so python/ddnn_py.so
    python3 python/smoke_test.py
"""

import json
import math

import ddnn_py


def check_solver():
    times, states = ddnn_py.solve_delay_logistic(1.4, 25.0)
    assert times[0] == 0.0 and times[-1] == 25.0
    late = [s[0] for t, s in zip(times, states) if t > 10.0]
    assert min(late) < 1.0 < max(late)


def check_field():
    field = ddnn_py.DelayField(2, 8, tau=2.5, combine="convex", lam=0.75, seed=3)
    assert len(field.theta) == field.param_count == 2 * 8 + 8 + 8 * 2 + 2
    f = field.eval(0.0, [0.1, -0.2], [0.3, 0.0])
    assert len(f) == 2 and all(math.isfinite(x) for x in f)
    dz, dv, dtheta = field.vjp(0.0, [0.1, -0.2], [0.3, 0.0], [1.0, 0.5])
    assert len(dz) == len(dv) == 2 and len(dtheta) == field.param_count

    times, states = field.solve([-0.2, 0.1], 3.0, times=[1.0, 2.0], h=0.05)
    assert 1.0 in times and times[-1] == 3.0 and len(states) == len(times)

    obs = [1.0, 3.0]
    grad = field.gradient([-0.2, 0.1], obs, [[1.0, 0.0], [0.0, 1.0]], h=0.01)
    assert len(grad) == field.param_count

    # directional finite difference on L = z_0(1) + z_1(3)
    def loss(theta):
        field.theta = theta
        ts, zs = field.solve([-0.2, 0.1], 3.0, times=obs, h=0.01)
        return zs[ts.index(1.0)][0] + zs[-1][1]

    theta0 = list(field.theta)
    eps = 1e-5
    direction = [math.sin(i + 1.0) for i in range(len(theta0))]
    plus = loss([t + eps * d for t, d in zip(theta0, direction)])
    minus = loss([t - eps * d for t, d in zip(theta0, direction)])
    field.theta = theta0
    fd = (plus - minus) / (2 * eps)
    ad = sum(g * d for g, d in zip(grad, direction))
    assert abs(fd - ad) <= 1e-3 * max(1.0, abs(fd)), (fd, ad)


def check_data_and_training():
    times, values, splits = ddnn_py.toy_series(200)
    assert len(times) == len(values) == len(splits) == 200
    assert values[0] == [-0.2, 0.1] and set(splits) == {"train", "val", "test"}
    points, labels = ddnn_py.two_circles(100, seed=1)
    assert len(points) == 100 and set(labels) == {0, 1}

    config = {
        "dataset": {"kind": "toy_2d", "n": 100},
        "field": {"state_dim": 2, "hidden_dim": 8, "combine": "convex", "lambda": 0.75, "tau": 2.5},
        "tau_candidates": [2.0, 2.5],
        "epochs": 5,
    }
    report = ddnn_py.train(json.dumps(config))
    assert len(report["train_loss"]) == 5 and not report["diverged"]
    again = ddnn_py.train(json.dumps(config))
    assert again["theta"] == report["theta"]

    rows, best = ddnn_py.sweep(json.dumps(config), threads=2)
    assert [r[0] for r in rows] == [2.0, 2.5] and best in (2.0, 2.5)

    try:
        ddnn_py.train(json.dumps({**config, "epochs": 0}))
    except ValueError:
        pass
    else:
        raise AssertionError("epochs = 0 should be rejected")


def check_gradcheck():
    max_rel, median_rel = ddnn_py.gradcheck("concat", seed=0, h=1e-3)
    assert max_rel < 1e-3 and median_rel <= max_rel


if __name__ == "__main__":
    check_solver()
    check_field()
    check_data_and_training()
    check_gradcheck()
    print("python smoke test ok")
