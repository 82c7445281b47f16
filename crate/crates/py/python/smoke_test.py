"""Smoke test for the influence_lab extension module.

Run after `pip install --no-build-isolation ./crates/py` (or with the built
shared library on PYTHONPATH as influence_lab.so):

    python crates/py/python/smoke_test.py
"""

import math
import random

import influence_lab as il


def check_estimand():
    ate = il.Estimand("ate")
    assert ate.name == "ate"
    assert ate.nuisances() == ["outcome_mean", "propensity"]
    assert ate.has_discrete_oracle
    assert il.Estimand("quantile(tau=0.25)").to_dict() == {"estimand": "quantile", "tau": 0.25}
    try:
        il.Estimand("density_at_point(y=0)")
    except il.NotPathwiseDifferentiableError as e:
        assert "not pathwise differentiable" in str(e)
    else:
        raise AssertionError("density_at_point was accepted")
    try:
        il.Estimand("quantile")
    except il.ValidationError:
        pass
    else:
        raise AssertionError("quantile without tau was accepted")


def check_estimate():
    rng = random.Random(4)
    n = 400
    z = [rng.random() for _ in range(n)]
    x = [1.0 if rng.random() < 1 / (1 + math.exp(-(zi - 0.5))) else 0.0 for zi in z]
    y = [1 + 2 * xi + zi + rng.gauss(0, 1) for xi, zi in zip(x, z)]
    data = il.Dataset(
        {"y": y, "x": x, "z": z},
        {"y": "outcome continuous", "x": "exposure binary", "z": "covariate"},
    )
    assert len(data) == n and data.columns == ["y", "x", "z"]

    one_step = il.estimate(data, "ate", method="one-step", seed=1)
    assert abs(one_step.psi_hat - 2.0) < 4 * one_step.se, one_step
    lo, hi = one_step.ci
    assert lo < one_step.psi_hat < hi
    assert len(one_step.eif_values) == n
    assert abs(sum(one_step.eif_values) / n) < 1e-10

    tmle = il.estimate(data, il.Estimand("ate"), method="tmle", seed=1,
                       learners={"outcome_mean": {"learner": "ols", "degree": 2}})
    assert abs(tmle.diagnostics["post_condition"]) <= 1e-10
    assert tmle.method == "tmle"

    try:
        il.estimate(data, "ate", learners={"propensity": "kde"})
    except il.ValidationError as e:
        assert "cannot fit" in str(e)
    else:
        raise AssertionError("kde accepted for a propensity")


def check_oracle_and_simulation():
    summary = il.verify_eif("all", trials=3, seed=7)
    assert summary["failures"] == 0 and summary["max_rel_error"] < 1e-6
    assert summary["checked"] > 0

    assert "ate-linear" in il.dgps()
    value, mc_se = il.truth("ate-linear")
    assert value == 1.0 and mc_se is None
    metrics = il.simulate("ate-linear", methods=["plugin", "one-step"], n=300, reps=20, seed=2)
    assert [m["method"] for m in metrics] == ["plugin", "one_step"]
    assert metrics[1]["completed"] == 20
    sample = il.generate("normal-mean", 50, seed=3)
    assert sample.n == 50


if __name__ == "__main__":
    check_estimand()
    check_estimate()
    check_oracle_and_simulation()
    print(f"influence_lab {il.__version__}: smoke test passed")
