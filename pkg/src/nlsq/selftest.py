"""Quick self-checks: the exactly forced cases of every module plus the CLI contract."""

from __future__ import annotations

import contextlib
import io
import json
import math
import tempfile
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import NumericalError
from .free_field import build_covariance, gaussian_moment, minlos_increment_check, sample_field, triple_norm
from .interactions import (
    PotentialSpec,
    build_gibbs,
    continuity_bound_exp,
    cutoff_function,
    pointwise_variance,
    potential_value,
    reweighted_expectation,
    wick_power,
)
from .nonlocal_form import (
    GaussianDensity1D,
    JumpChainConfig,
    Smooth1D,
    conditional_density,
    constant,
    coordinate,
    cylinder_panel,
    form_value,
    invariance_report,
    phi_alpha,
    proposal_density,
    windowed_form_1d,
)
from .particles import (
    Configuration,
    coefficient_panel,
    embed,
    embedding_bound_check,
    geometric_tail,
    occupation_count,
    u_n_membership,
)
from .regularity import ConditionInput, check_bounded_union, check_tail_summability, preset_example0
from .spectral_core import (
    CoordinateVector,
    GridSpec,
    OperatorSpec,
    build_eigensystem,
    build_operator_matrix,
    eigendecompose,
    hilbert_schmidt_sum,
    tau_forward,
    tau_inverse,
    weighted_norm,
)


class SelfTestFailure(Exception):
    pass


def _need(ok):
    if not ok:
        raise SelfTestFailure("forced value not reproduced")


def _spectral():
    g = GridSpec(n=16)
    ident = build_operator_matrix(g, OperatorSpec(mult_power=0, lap_power=0))
    _need(np.allclose(ident, np.eye(16), atol=1e-13))
    es = eigendecompose(np.diag([2.0, 8.0]), 2)
    _need(np.allclose(es.lambdas, [1.0, 0.25], rtol=1e-15))
    _need(weighted_norm(CoordinateVector(np.array([3.0, 4.0]), np.ones(2))) == 5.0)
    _need(weighted_norm(CoordinateVector(np.array([1.0, 2.0]), np.array([4.0, 1.0]))) == math.sqrt(8))
    _need(hilbert_schmidt_sum(np.array([1.0, 0.5, 0.25])).total == 21 / 16)
    es = build_eigensystem(GridSpec(n=64), OperatorSpec(), 16)
    c = np.random.default_rng(0).standard_normal(16)
    for m in (-2, 1, 3):
        _need(np.max(np.abs(tau_inverse(tau_forward(c, m, es), m, es) - c)) < 1e-10)
    _need(tau_forward(np.zeros(16), 1, es).norm == 0.0)


def _free_field():
    model = build_covariance(build_eigensystem(GridSpec(n=64), OperatorSpec(), 8))
    a, b = sample_field(model, 1, seed=3), sample_field(model, 1, seed=3)
    _need(np.array_equal(a, b))
    _need(triple_norm(model, np.zeros(8)) == 0.0)
    _need(gaussian_moment(0.7, 0) == 1.0)
    check = minlos_increment_check(model, np.zeros(8), np.ones(8))
    _need(check.lhs == 0.0 and check.rhs == 0.0)


def _interactions():
    model = build_covariance(build_eigensystem(GridSpec(n=64), OperatorSpec(), 8))
    ctx = pointwise_variance(model)
    _need(np.all(ctx.variance > 0))
    phi = model.fields(sample_field(model, 5, seed=1))
    _need(np.all(wick_power(phi, 0, ctx) == 1.0))
    _need(np.array_equal(wick_power(phi, 1, ctx), phi))
    _need(np.allclose(wick_power(phi, 2, ctx), phi**2 - ctx.variance, atol=1e-14))
    g = cutoff_function(model.es.grid)
    v = potential_value(PotentialSpec("Exp", a0=0.0, cutoff=g), phi, ctx)
    _need(np.allclose(v, model.es.cell_volume * g.sum(), rtol=1e-13))
    x = sample_field(model, 2000, seed=2)
    free = build_gibbs(model, PotentialSpec(), x)
    _need(free.z.z == 1.0)
    gm = build_gibbs(model, PotentialSpec("Exp", a0=1.0, cutoff=g), x)
    _need(reweighted_expectation(gm, np.ones(len(x)), x).value == 1.0)
    b = continuity_bound_exp(gm, np.zeros(8), x)
    _need(b.lhs == 0.0 and b.rhs == 0.0)


def _forms():
    u = coordinate(0)
    _need(phi_alpha(u, u, 0, 1.0, 0.0, np.zeros(2), 1.0) == 1.0)
    model = build_covariance(build_eigensystem(GridSpec(n=64), OperatorSpec(), 4))
    x = sample_field(model, 200, seed=4)
    for w in cylinder_panel(4)[:3]:
        _need(form_value(w, constant(), model, 0.7, x).value == 0.0)
        _need(form_value(w, w, model, 1.0, x[:50]).value >= 0)
    diag = build_covariance(build_eigensystem(GridSpec(n=64), OperatorSpec(), 2))
    cond = conditional_density(type(diag).from_covariance(np.diag([2.0, 0.5])), 0, np.array([1.0, 3.0]))
    _need(cond.mean == 0.0 and abs(cond.std**2 - 2.0) < 1e-14)
    rng = np.random.default_rng(0)
    d, s = rng.normal(scale=3, size=10_000), rng.uniform(0.1, 2, 10_000)
    cfg = JumpChainConfig(alpha=0.7)
    p, q = proposal_density(d, s, cfg), proposal_density(-d, s, cfg)
    _need(np.max(np.abs(p - q) / np.maximum(p, 1e-300)) <= 1e-14)
    m16 = build_covariance(build_eigensystem(GridSpec(), OperatorSpec(), 16))
    rows = invariance_report(m16, JumpChainConfig(sweeps=0), sample_field(m16, 100, seed=1))
    _need(all(r.z == 0.0 for r in rows))
    flat = Smooth1D((), 2.5)
    for w in ("global", "local"):
        _need(windowed_form_1d(flat, flat, GaussianDensity1D(), 1.5, w) == 0.0)


def _regularity():
    ci = preset_example0(np.array([1.0, 0.5]))
    _need(np.array_equal(ci.beta, [1.0, 1 / 16]) and np.array_equal(ci.gamma, [1.0, 4.0]))
    i = np.arange(1, 11)
    _need(abs(check_tail_summability(ConditionInput(4.0**-i, np.ones(10))).total - 1 / 3) < 1e-5)
    model = build_covariance(build_eigensystem(GridSpec(n=64), OperatorSpec(), 16))
    x = sample_field(model, 500, seed=1)
    ci = preset_example0(model.es)
    _need(check_bounded_union(ci, x, [1e9]).fraction[0] == 1.0)
    frac = check_bounded_union(ci, x, [0.3, 1, 3, 10, 100]).fraction
    _need(np.all(np.diff(frac) >= 0))


def _particles():
    empty = Configuration.empty(1, 3.0)
    _need(occupation_count(empty, 0) == 0)
    _need(occupation_count(Configuration(np.zeros((1, 1)), np.array([3]), 1.0), 0) == 3)
    for n in (1, 2, 3):
        _need(u_n_membership(empty, n).member)
        _need(u_n_membership(Configuration(np.zeros((1, 1)), np.array([n]), 1.0), n).member)
        _need(not u_n_membership(Configuration(np.zeros((1, 1)), np.array([n + 1]), 1.0), n).member)
    _need(geometric_tail(math.log(2)) == 1.0)
    try:
        geometric_tail(0.0)
        _need(False)
    except NumericalError:
        pass
    es = build_eigensystem(GridSpec(n=64), OperatorSpec("Htilde"), 16)
    _need(not np.any(embed(empty, es)))
    _need(embedding_bound_check(empty, 1, es, coefficient_panel(es, 10), 1.0).max_ratio == 0.0)
    _need(Fraction(1, 2) == Fraction(math.exp(-math.log(2))))


def _cli():
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp, contextlib.redirect_stderr(io.StringIO()):
        root = Path(tmp)
        cfg = root / "spec.json"
        cfg.write_text(json.dumps({"base": {"K": 8, "n": 64}}))
        for out in ("a", "b"):
            _need(main(["spectrum", "--config", str(cfg), "--seed", "7", "--out", str(root / out)]) == 0)
        body = [ln for ln in (root / "a" / "spectrum.csv").read_text().splitlines() if not ln.startswith("#")]
        _need(len(body) == 9)
        for name in ("spectrum.csv", "hs_report.json", "run_manifest.json"):
            _need((root / "a" / name).read_bytes() == (root / "b" / name).read_bytes())
        bad = root / "bad.json"
        bad.write_text('{"base": {"K": 8,')
        _need(main(["spectrum", "--config", str(bad), "--out", str(root / "c")]) == 2)
        _need(not (root / "c").exists())
        dyn = root / "dyn.json"
        dyn.write_text(json.dumps({"base": {"K": 4, "n": 64}, "chains": 2, "chain": {"steps": 0}}))
        _need(main(["dynamics", "--config", str(dyn), "--out", str(root / "d")]) == 0)
        rows = [ln for ln in (root / "d" / "trajectory.csv").read_text().splitlines() if not ln.startswith("#")]
        _need(len(rows) == 2 and rows[1].startswith("0,"))


CHECKS = [
    ("spectral_core", _spectral),
    ("free_field", _free_field),
    ("interactions", _interactions),
    ("nonlocal_form", _forms),
    ("regularity", _regularity),
    ("particles", _particles),
    ("cli", _cli),
]


def run_selftest(stream=None) -> bool:
    """Run every check, print one line each, return whether all passed."""
    import sys

    stream = stream or sys.stdout
    ok = True
    start = time.perf_counter()
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            fn()
            status = "PASS"
        except Exception as exc:  # noqa: BLE001 - report and continue
            status = f"FAIL ({type(exc).__name__}: {exc})"
            ok = False
        print(f"{status:4s}  {name:14s} {time.perf_counter() - t0:6.2f} s", file=stream)
    print(f"selftest {'passed' if ok else 'FAILED'} in {time.perf_counter() - start:.1f} s", file=stream)
    return ok
