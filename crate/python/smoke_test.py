"""Smoke test for the `aqr` extension module.

Build and install first, e.g. `maturin develop --release -m crates/py/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import json
import math
import random

import aqr


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def families():
    qr = aqr.WeightFamily("qr")
    es = aqr.WeightFamily("es")
    assert qr.validate()[0] and es.validate()[0]
    assert not aqr.WeightFamily("ge", schedule="linear").validate()[0]
    rt = aqr.WeightFamily.from_json(aqr.WeightFamily("ges", a=2.0).to_json())
    assert rt.label == aqr.WeightFamily("ges", a=2.0).label
    close(es.g(0.1, 0.05), 0.5, 1e-12)
    try:
        aqr.WeightFamily("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown family accepted")


def population():
    n = aqr.Distribution.normal(0.0, 1.0)
    z = 1.6448536269514722
    close(aqr.population_aqr(n, aqr.WeightFamily("qr"), 0.05), -z, 1e-8)
    phi = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    close(aqr.population_aqr(n, aqr.WeightFamily("es"), 0.05), -phi / 0.05, 1e-7)
    close(aqr.Distribution.from_json('{"kind": "exponential", "rate": 2.0}').quantile(0.5), math.log(2) / 2, 1e-12)


def sample_and_conditional():
    values = [float(v) for v in range(1, 100)]
    close(aqr.aqr_sample(values, aqr.WeightFamily("qr"), 0.5), 50.0, 1e-9)
    cdf = aqr.StepCDF([0.0, 1.0, 2.0], [0.25, 0.5, 1.0])
    assert cdf(1.5) == 0.5
    close(aqr.aqr_conditional(cdf, aqr.WeightFamily("es"), 0.75), 2.0, 1e-12)


def index_model():
    rng = random.Random(3)
    beta = [0.6, 0.8]
    x = [[rng.gauss(0, 1), rng.gauss(0, 1)] for _ in range(300)]
    y = [math.sin(r[0] * beta[0] + r[1] * beta[1]) + 0.2 * rng.gauss(0, 1) for r in x]
    data = aqr.Dataset(y, x, [i % 3 for i in range(300)])
    assert (data.n, data.p) == (300, 2)
    h = 0.4
    b = aqr.fit_full(data, h)
    close(math.hypot(*b), 1.0, 1e-9)
    assert abs(b[0] * beta[0] + b[1] * beta[1]) > 0.95
    g = aqr.psis_gradient(data, b, h)
    assert all(math.isfinite(v) for v in g)
    bd, comm = aqr.run_distributed(data, 3, h, 0.5)
    assert abs(bd[0] * beta[0] + bd[1] * beta[1]) > 0.9
    assert json.loads(comm)
    curve = aqr.index_cde_curve(data, b, h, [0.0, 0.0])
    assert curve.levels == sorted(curve.levels)


def portfolio():
    rng = random.Random(5)
    rows = [[0.01 + 0.001 * rng.gauss(0, 1), 0.02 * rng.gauss(0, 1)] for _ in range(120)]
    alpha, risk = aqr.optimize_weights(rows, aqr.WeightFamily("es"), 0.05, starts=4, iterations=300)
    close(sum(alpha), 1.0, 1e-10)
    assert alpha[0] > 0.9 and math.isfinite(risk)
    sharpe, pct = aqr.evaluate(rows, alpha, [r[1] for r in rows])
    assert math.isfinite(sharpe) and 0.0 <= pct <= 100.0


if __name__ == "__main__":
    for check in (families, population, sample_and_conditional, index_model, portfolio):
        check()
        print(f"ok {check.__name__}")
