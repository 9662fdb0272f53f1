import math

import numpy as np
import pytest

from dcchance.bench import (
    BenchSpec, GAMMA, MAX_WEIGHT, TARGET_RETURN, aggregate, gen_cardinality, gen_portfolio,
    gen_transport, run_bench, write_report,
)
from dcchance.model import (
    AffineMap, ChanceProblem, ConvexFunction, DcObjective, InvalidInputError, Polyhedron,
    ScenarioModel,
)
from dcchance.solve import solve_chance


def test_portfolio_default_sizing_and_psd():
    p = gen_portfolio(30, seed=1)
    assert p.N == 90 and p.n == 30
    Sigma = p.objective.g.hessian() / (2 * GAMMA)  # g = gamma x'Sigma x - mu'x
    assert np.linalg.eigvalsh(Sigma).min() >= -1e-10
    np.testing.assert_allclose(p.objective.g.a0, -p.scenarios.samples.mean(axis=0), atol=1e-15)


def test_portfolio_constraint_form():
    p = gen_portfolio(4, 12, seed=2)
    x = np.full(4, 0.25)
    xi = p.scenarios.samples
    np.testing.assert_allclose(p.scenarios.piece_values(x)[:, 0], TARGET_RETURN - xi @ x, atol=1e-15)
    assert p.domain.contains(x) and not p.domain.contains([MAX_WEIGHT + 0.1, 0.9 - MAX_WEIGHT, 0, 0])


def test_portfolio_symmetric_assets():
    rng = np.random.default_rng(0)
    half = rng.normal(0.002, 0.01, (10, 2))
    xi = np.vstack([half, half[:, ::-1]])  # exchangeable columns
    Sigma = np.cov(xi, rowvar=False)
    obj = DcObjective(ConvexFunction.quadratic(GAMMA * Sigma, -xi.mean(axis=0)), ConvexFunction.zero(2))
    dom = Polyhedron.box(np.zeros(2), np.full(2, MAX_WEIGHT), np.ones((1, 2)), np.ones(1))
    cmap = AffineMap(np.zeros(2), np.zeros(2), -1.0, -np.eye(2))  # slack target: always met
    p = ChanceProblem(obj, dom, ScenarioModel(xi, (cmap,)), 0.1)
    np.testing.assert_allclose(solve_chance(p, "pdca").x, [0.5, 0.5], atol=1e-7)


def test_transport_nonconvex_h_is_convex():
    p = gen_transport(3, 4, 20, seed=0, nonconvex=True)
    H = p.objective.h.hessian()
    assert np.all(np.diag(H) > 0) and not np.any(H - np.diag(np.diag(H)))
    assert gen_transport(3, 4, 20, seed=0).objective.h.kind == "zero"


def test_generators_are_seeded():
    a, b = gen_transport(3, 4, 20, seed=5), gen_transport(3, 4, 20, seed=5)
    assert a.scenarios.samples.tobytes() == b.scenarios.samples.tobytes()
    c = gen_transport(3, 4, 20, seed=6)
    assert a.scenarios.samples.tobytes() != c.scenarios.samples.tobytes()


def test_cardinality_requires_valid_K():
    with pytest.raises(InvalidInputError):
        gen_cardinality(4, 4)


def test_bench_spec_validation():
    with pytest.raises(InvalidInputError):
        BenchSpec("spaceship")
    with pytest.raises(InvalidInputError):
        BenchSpec("toy", methods=["newton"])
    with pytest.raises(InvalidInputError):
        BenchSpec("portfolio", n=30, methods=["oracle"])  # C(90, 86) subsets


def test_toy_ordering():
    rows = run_bench(BenchSpec("toy", alpha=0.25, methods=["cvar", "dca", "oracle"]))
    f = {r["method"]: r["fval"] for r in rows}
    assert f["cvar"] >= f["dca"] - 1e-9 >= f["oracle"] - 2e-9
    assert f["dca"] == pytest.approx(25.0, abs=1e-6)


def test_rows_and_aggregates():
    spec = BenchSpec("transport_convex", n=2, m=3, N=12, alpha=0.25, seeds=[0, 1],
                     methods=["cvar", "pdca1"])
    rows = run_bench(spec)
    assert [(r["seed"], r["method"]) for r in rows] == [(0, "cvar"), (0, "pdca1"), (1, "cvar"), (1, "pdca1")]
    assert all(r["prob"] >= 0.75 for r in rows)
    agg = aggregate(rows)
    assert len(agg) == 2 and all(a["runs"] == 2 and a["ok"] == 2 for a in agg)


def test_workers_do_not_change_rows():
    spec = dict(family="transport_nonconvex", n=2, m=3, N=12, alpha=0.25, seeds=[0, 1, 2],
                methods=["dca", "pdca2"])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "time_s"} for r in rows]
    assert strip(run_bench(BenchSpec(**spec))) == strip(run_bench(BenchSpec(**spec, workers=3)))


def test_report_is_byte_stable(tmp_path):
    spec = BenchSpec("toy", alpha=0.25, seeds=[0, 1], methods=["cvar", "pdca1"])
    a = write_report(run_bench(spec), tmp_path / "a", timing=False)
    b = write_report(run_bench(spec), tmp_path / "b", timing=False)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    header, first = a[0].read_text().splitlines()[:2]
    assert header.split(",")[8] == "time_s" and first.split(",")[8] == ""


def test_cardinality_cells():
    spec = BenchSpec("cardinality", n=5, alpha=0.4, seeds=[0], methods=["pdca1", "oracle", "cvar"])
    assert spec.K == 2
    rows = {r["method"]: r for r in run_bench(spec)}
    assert rows["cvar"]["status"] == "unsupported"
    assert rows["pdca1"]["fval"] >= rows["oracle"]["fval"] - 1e-9
    assert rows["pdca1"]["prob"] >= 0.6  # fraction of zero coordinates


def test_failed_cell_is_recorded():
    spec = BenchSpec("transport_convex", n=2, m=3, N=12, alpha=0.25, seeds=[0], methods=["pdca1"])
    row = run_bench(BenchSpec(**{**spec.__dict__, "max_iter": 1, "tol_rel": 1e-300}))[0]
    assert row["status"] == "max_iter"
    bad = run_bench(BenchSpec("portfolio", n=1, seeds=[0], methods=["cvar"]))[0]
    assert bad["status"] == "error:InvalidInputError" and math.isnan(bad["fval"])
