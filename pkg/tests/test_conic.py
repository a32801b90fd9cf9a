import math

import numpy as np
import pytest

from cellfree_ra.conic import (
    Affine,
    AffineLe,
    CompiledConicProgram,
    Concave,
    ConcaveGe,
    ConicProgram,
    LogTerm,
    MatTerm,
    PsdBlock,
    ScalTerm,
    ScalarVar,
    SolveStatus,
    SquareLe,
    dump_program,
    recover_rank1,
    solve,
)
from cellfree_ra.core import SolverConfig


def _phase_aligned(u, v):
    """Distance between vectors modulo a global phase."""
    inner = np.vdot(u, v)
    phase = inner / abs(inner) if abs(inner) > 0 else 1.0
    return np.linalg.norm(u * phase - v)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------


def test_solve_log_of_scalar(quiet_cvxpy):
    # maximize log2(x) subject to x <= 2
    prog = ConicProgram(
        psd_blocks=(),
        scalars=(ScalarVar("x", nonneg=True),),
        constraints=(AffineLe(Affine(scals=(ScalTerm("x"),)), Affine(const=2.0)),),
        objective=Concave(logs=(LogTerm(1.0, Affine(scals=(ScalTerm("x"),))),)),
    )
    sol = solve(prog)
    assert sol.status is SolveStatus.OPTIMAL
    assert sol.scalars["x"] == pytest.approx(2.0, rel=1e-6)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6)


def test_solve_psd_trace_objective(quiet_cvxpy):
    # maximize tr(diag(3,1) X) with tr(X) <= 1: optimum 3 at e1 e1^T
    A = np.diag([3.0, 1.0]).astype(complex)
    prog = ConicProgram(
        psd_blocks=(PsdBlock("X", 2),),
        constraints=(
            AffineLe(Affine(mats=(MatTerm("X", np.eye(2, dtype=complex)),)), Affine(const=1.0)),
        ),
        objective=Concave(affine=Affine(mats=(MatTerm("X", A),))),
    )
    sol = solve(prog)
    assert sol.status is SolveStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(3.0, abs=1e-6)
    X = sol.psd_blocks["X"]
    e1 = np.zeros(2, complex)
    e1[0] = 1.0
    assert np.allclose(X, np.outer(e1, e1), atol=1e-5)


def test_solve_affine_over_box(quiet_cvxpy):
    # maximize 2x + 3y over x in [0,1], y in [-1,2]: optimum 8 at a corner
    prog = ConicProgram(
        psd_blocks=(),
        scalars=(ScalarVar("x", lower=0.0, upper=1.0), ScalarVar("y", lower=-1.0, upper=2.0)),
        objective=Concave(affine=Affine(scals=(ScalTerm("x", 2.0), ScalTerm("y", 3.0)))),
    )
    sol = solve(prog)
    assert sol.status is SolveStatus.OPTIMAL
    assert sol.objective_value == pytest.approx(8.0, abs=1e-6)


def test_solve_infeasible(quiet_cvxpy):
    prog = ConicProgram(
        psd_blocks=(),
        scalars=(ScalarVar("x", lower=3.0),),
        constraints=(AffineLe(Affine(scals=(ScalTerm("x"),)), Affine(const=2.0)),),
        objective=Concave(affine=Affine(scals=(ScalTerm("x"),))),
    )
    sol = solve(prog)
    assert sol.status is SolveStatus.INFEASIBLE


def test_solve_deterministic(quiet_cvxpy):
    A = np.diag([3.0, 1.0]).astype(complex)
    prog = ConicProgram(
        psd_blocks=(PsdBlock("X", 2),),
        constraints=(
            AffineLe(Affine(mats=(MatTerm("X", np.eye(2, dtype=complex)),)), Affine(const=1.0)),
        ),
        objective=Concave(affine=Affine(mats=(MatTerm("X", A),))),
    )
    s1 = solve(prog)
    s2 = solve(prog)
    assert s1.objective_value == s2.objective_value
    np.testing.assert_array_equal(s1.psd_blocks["X"], s2.psd_blocks["X"])


def test_relaxing_rhs_never_decreases_optimum(quiet_cvxpy):
    # nested feasible sets: loosening x <= c raises the log objective
    values = []
    for c in (1.0, 2.0, 4.0):
        prog = ConicProgram(
            psd_blocks=(),
            scalars=(ScalarVar("x", nonneg=True),),
            constraints=(AffineLe(Affine(scals=(ScalTerm("x"),)), Affine(const=c)),),
            objective=Concave(logs=(LogTerm(1.0, Affine(const=1.0, scals=(ScalTerm("x"),))),)),
        )
        values.append(solve(prog).objective_value)
    assert values[0] <= values[1] <= values[2]


def test_parametric_resolve(quiet_cvxpy):
    # maximize log2(1+x) - g*x, re-solved for two slopes without rebuild
    prog = ConicProgram(
        psd_blocks=(),
        scalars=(ScalarVar("x", nonneg=True),),
        constraints=(AffineLe(Affine(scals=(ScalTerm("x"),)), Affine(const=10.0)),),
        objective=Concave(
            logs=(LogTerm(1.0, Affine(const=1.0, scals=(ScalTerm("x"),))),),
            affine=Affine(scals=(ScalTerm("x", scale=-1.0, param="g"),)),
        ),
        params=("g",),
    )
    compiled = CompiledConicProgram(prog)
    # optimum of log2(1+x) - g x is x* = 1/(g ln 2) - 1
    for g in (0.2, 0.5):
        sol = compiled.solve({"g": g})
        assert sol.status is SolveStatus.OPTIMAL
        assert sol.scalars["x"] == pytest.approx(1.0 / (g * math.log(2)) - 1.0, rel=1e-3)
    with pytest.raises(ValueError, match="missing parameter"):
        compiled.solve({})


def test_hermitian_round_trip(quiet_cvxpy):
    # complex Hermitian data survives the real embedding: the optimum of
    # max tr(A X) s.t. tr(X) <= 1 is the top eigenpair of A
    A = np.array([[1.0, 1j], [-1j, 1.0]], dtype=complex)
    prog = ConicProgram(
        psd_blocks=(PsdBlock("X", 2),),
        constraints=(
            AffineLe(Affine(mats=(MatTerm("X", np.eye(2, dtype=complex)),)), Affine(const=1.0)),
        ),
        objective=Concave(affine=Affine(mats=(MatTerm("X", A),))),
    )
    sol = solve(prog)
    vals, vecs = np.linalg.eigh(A)
    assert sol.objective_value == pytest.approx(vals[-1], abs=1e-6)
    top = vecs[:, -1]
    assert np.allclose(sol.psd_blocks["X"], np.outer(top, top.conj()), atol=1e-5)


# ---------------------------------------------------------------------------
# recover_rank1
# ---------------------------------------------------------------------------


def test_recover_rank1_exact():
    rng = np.random.default_rng(0)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    X = np.outer(v, v.conj())
    out = recover_rank1(X, SolverConfig())
    assert _phase_aligned(out, v) < 1e-8


def test_recover_rank1_diagonal():
    X = np.diag([4.0, 0.0]).astype(complex)
    out = recover_rank1(X, SolverConfig())
    assert _phase_aligned(out, np.array([2.0, 0.0], complex)) < 1e-10


def test_recover_rank1_randomization_path():
    X = np.eye(2, dtype=complex)  # top eigenvalue ratio 0.5
    cfg = SolverConfig(rank1_ratio_threshold=0.95, randomization_trials=25)
    rng = np.random.default_rng(5)
    calls = []

    def score(chi):
        calls.append(1)
        return -abs(chi[0])

    out = recover_rank1(X, cfg, rng=rng, score=score)
    assert len(calls) == 25  # randomization was taken
    assert np.vdot(out, out).real == pytest.approx(np.trace(X).real, rel=1e-9)


def test_recover_rank1_trace_budget():
    rng = np.random.default_rng(1)
    B = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    X = B @ B.conj().T
    cfg = SolverConfig(rank1_ratio_threshold=1.0, randomization_trials=30)
    out = recover_rank1(X, cfg, rng=np.random.default_rng(2), score=lambda c: 0.0)
    assert np.vdot(out, out).real <= np.trace(X).real * (1 + 1e-9)


def test_recover_rank1_deterministic_tiebreak():
    X = np.eye(2, dtype=complex)
    cfg = SolverConfig(rank1_ratio_threshold=1.0, randomization_trials=10)
    a = recover_rank1(X, cfg, rng=np.random.default_rng(3))
    b = recover_rank1(X, cfg, rng=np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)  # score=None keeps the first sample


def test_recover_rank1_rejects_indefinite():
    X = np.diag([1.0, -0.5]).astype(complex)
    with pytest.raises(ValueError, match="not PSD"):
        recover_rank1(X, SolverConfig())


def test_recover_rank1_phase_invariance():
    rng = np.random.default_rng(4)
    v = rng.normal(size=3) + 1j * rng.normal(size=3)
    X = np.outer(v, v.conj())
    out = recover_rank1(X, SolverConfig())
    h = rng.normal(size=3) + 1j * rng.normal(size=3)
    # |h^H chi|^2 is invariant under a global phase of chi
    rotated = out * np.exp(1j * 0.7)
    assert abs(np.vdot(h, out)) ** 2 == pytest.approx(abs(np.vdot(h, rotated)) ** 2, rel=1e-12)


# ---------------------------------------------------------------------------
# dump
# ---------------------------------------------------------------------------


def test_dump_program_listing(quiet_cvxpy):
    A = np.diag([3.0, 1.0]).astype(complex)
    prog = ConicProgram(
        psd_blocks=(PsdBlock("X", 2),),
        scalars=(ScalarVar("s", nonneg=True),),
        constraints=(
            AffineLe(Affine(mats=(MatTerm("X", np.eye(2, dtype=complex)),)), Affine(const=1.0)),
            SquareLe("s", Affine(mats=(MatTerm("X", A),))),
            ConcaveGe(Concave(logs=(LogTerm(1.0, Affine(const=1.0, scals=(ScalTerm("s"),))),)), Affine(const=0.0)),
        ),
        objective=Concave(affine=Affine(mats=(MatTerm("X", A),))),
    )
    text = dump_program(prog)
    assert text.startswith("conic-program v1")
    assert "psd X dim 2" in text
    assert "scalar s nonneg" in text
    assert "square-le s" in text
    assert "concave-ge" in text
    # triplet lines carry real and imaginary parts
    assert any(line.strip().startswith("0 0 3") for line in text.splitlines())
