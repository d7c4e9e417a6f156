"""Exercises the extension module end to end. Build it first with
`maturin develop` (or `maturin build` and install the wheel)."""

import math
import random

import leki


def check_models():
    g = leki.Model.identity(3)
    assert g.evaluate([1.0, 2.0, 3.0]) == [1.0, 2.0, 3.0]
    cubic = leki.Model.local_cubic(1)
    assert abs(cubic.evaluate([1.0])[0] - 0.98368) < 1e-5
    l96 = leki.Model.lorenz96(8)
    assert l96.evaluate([8.0] * 8) == [8.0] * 8
    ext = l96.tikhonov([1.0] * 8)
    assert ext.output_dim == 16
    assert len(ext.jacobian([8.0] * 8)) == 16
    dc = leki.Model.dc()
    rho = dc.evaluate([10.0] * 20)
    assert all(abs(r / 10.0 - 1.0) < 1e-3 for r in rho)
    two = leki.apparent_resistivity([1.0, 10.0], [1.0], 0.01)
    assert abs(two - 1.0) < 1e-2


def check_run():
    rng = random.Random(3)
    d, j = 10, 6
    model = leki.Model.identity(d)
    members = [[rng.gauss(0, 1) for _ in range(d)] for _ in range(j)]
    y = [1.0] * d
    _, rows, exit_ = leki.run(model, members, y, dt=0.1, iterations=50)
    assert exit_ == "max-iterations"
    assert len(rows) == 51 and rows[-1]["misfit"] < rows[0]["misfit"]
    _, lrows, _ = leki.run(model, members, y, dt=0.1, iterations=50, radius=2.0)
    assert lrows[-1]["misfit"] < rows[-1]["misfit"]
    psi = leki.taper(4, 1.0)
    assert psi[0][0] == 1.0 and abs(psi[0][1] - math.exp(-0.5)) < 1e-15


def check_experiment():
    cfg = leki.ExperimentConfig.preset("nonlinear")
    cfg.dims = [12]
    cfg.trials = 2
    cfg.max_iterations = 20
    res = leki.run_experiment(cfg, workers=1)
    reports = res.reports()
    assert [r["method"] for r in reports] == ["eki", "leki"]
    assert all(r["trials"] == 2 for r in reports)
    trials = res.trials()
    assert trials[0]["input_digest"] == trials[1]["input_digest"]
    assert len(res.record(0)) == 21
    again = leki.run_experiment(cfg, workers=1)
    assert again.trials() == trials


def check_properties():
    assert abs(leki.riccati_solution(1.0, 0.0, 0.0, 1.0, 1.0) - 0.5) < 1e-14
    for name, passed, worst, tol in leki.self_check():
        assert passed, f"{name}: {worst} > {tol}"


if __name__ == "__main__":
    check_models()
    check_run()
    check_experiment()
    check_properties()
    print("smoke test passed")
