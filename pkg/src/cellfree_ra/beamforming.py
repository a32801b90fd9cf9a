"""Beamformer constructions under a fixed schedule.

Three designs:

* ``mmse_beamformer`` - regularized inverse baseline, also the starting
  point of both iterative designs.
* ``bf_infbl`` - lifts w -> X = w w^H, drops the rank constraint, and
  iterates convex surrogates of the difference-of-logs rate.  The
  concave log of the signal-plus-interference term stays exact; the
  convex -log of the interference term is replaced by its tangent at
  the previous iterate, which upper-bounds it globally, so the true
  objective is monotone along the iterates.
* ``bf_fbl`` - same lifting, plus per-RE auxiliary scalars: a SINR lower
  bound z squeezed under amp^2/den, where amp^2 is bounded by the
  received signal power and den dominates interference plus noise.  The
  dispersion penalty is concave in z, so its tangent overestimates it
  and the surrogate objective under-approximates the true one.

Both loops compile their subproblem once and re-solve with updated
scalar parameters; recovered vectors are rescaled onto the per-slot
power budget when rounding violates it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import conic
from .channel import ChannelRealization
from .conic import (
    Affine,
    AffineLe,
    Concave,
    ConcaveGe,
    CompiledConicProgram,
    ConicProgram,
    LogTerm,
    MatTerm,
    PsdBlock,
    ScalTerm,
    ScalarVar,
    SolveStatus,
    SquareLe,
    recover_rank1,
)
from .core import Regime, STREAM_RANDOMIZATION, SolverConfig, SystemConfig, derive_power_budget, derive_rng
from .metrics import BeamformerSet, ScheduleMatrix, dispersion, q_inverse, weighted_throughput

LN2 = math.log(2.0)
DISPERSION_FLOOR = 1e-12  # keeps the penalty gradient finite at z = 0
AMP_FLOOR = 1e-9  # keeps the ratio tangent useful when a user lost all power


@dataclass
class ScaState:
    """Mutable state of one surrogate iteration loop."""

    X_hat: dict[tuple[int, int, int], np.ndarray] = field(default_factory=dict)
    z_hat: dict[tuple[int, int, int], float] = field(default_factory=dict)
    pi_hat: dict[tuple[int, int, int], float] = field(default_factory=dict)
    theta_hat: dict[tuple[int, int, int], float] = field(default_factory=dict)
    iteration: int = 0
    objective_trace: list[float] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Surrogate building blocks (module-level so tests can probe the bounds)
# ---------------------------------------------------------------------------


def lifted_sinr(grams: list[np.ndarray], blocks: list[np.ndarray], k: int, sigma_ke2: float) -> float:
    """SDR-form SINR tr(H_k X_k) / (sum_{j!=k} tr(H_k X_j) + noise)."""
    sig = float(np.real(np.trace(grams[k] @ blocks[k])))
    interf = sum(
        float(np.real(np.trace(grams[k] @ blocks[j]))) for j in range(len(blocks)) if j != k
    )
    return sig / (interf + sigma_ke2)


def lifted_rate_bits(grams, blocks, k, sigma_ke2) -> float:
    return math.log2(1.0 + lifted_sinr(grams, blocks, k, sigma_ke2))


def lifted_rate_surrogate_bits(grams, blocks, hat_blocks, k, sigma_ke2) -> float:
    """Tangent minorant of the per-RE rate around ``hat_blocks``.

    Equals the true rate at the expansion point and never exceeds it
    elsewhere (the -log interference term is replaced by its tangent).
    """
    total = sum(float(np.real(np.trace(grams[k] @ X))) for X in blocks) + sigma_ke2
    interf_hat = sum(
        float(np.real(np.trace(grams[k] @ hat_blocks[j])))
        for j in range(len(hat_blocks))
        if j != k
    )
    denom_hat = interf_hat + sigma_ke2
    interf = sum(
        float(np.real(np.trace(grams[k] @ blocks[j]))) for j in range(len(blocks)) if j != k
    )
    return math.log2(total) - math.log2(denom_hat) - (interf - interf_hat) / (denom_hat * LN2)


def fbl_penalty(z, eps: float) -> float:
    """Dispersion penalty Qinv(eps) * sqrt(sum_j (1 - (1+z_j)^-2))."""
    v = float(np.sum(dispersion(np.asarray(z, dtype=float))))
    return q_inverse(eps) * math.sqrt(v)


def fbl_penalty_gradient(z_hat, eps: float) -> np.ndarray:
    zh = np.asarray(z_hat, dtype=float)
    v = max(float(np.sum(dispersion(zh))), DISPERSION_FLOOR)
    return q_inverse(eps) * (1.0 + zh) ** -3 / math.sqrt(v)


def fbl_penalty_surrogate(z, z_hat, eps: float) -> float:
    """Affine overestimator of the penalty, tangent at ``z_hat``.

    The penalty is a concave function of z (concave coordinates under a
    nondecreasing concave square root), so the tangent dominates it.
    """
    zh = np.asarray(z_hat, dtype=float)
    grad = fbl_penalty_gradient(zh, eps)
    return fbl_penalty(zh, eps) + float(grad @ (np.asarray(z, dtype=float) - zh))


def ratio_lower_bound(amp, den, amp_hat, den_hat) -> float:
    """Affine-in-(amp, den) global lower bound of amp^2 / den around the
    reference point: 2(a/d) amp - (a/d)^2 den <= amp^2/den for den > 0."""
    r = amp_hat / den_hat
    return 2.0 * r * amp - r * r * den


# ---------------------------------------------------------------------------
# MMSE baseline
# ---------------------------------------------------------------------------


def mmse_beamformer(ch: ChannelRealization, zeta: ScheduleMatrix, cfg: SystemConfig) -> BeamformerSet:
    """Regularized-inverse beamformer under equal power splitting.

    Each RE gets p_t / F; the scheduled users of an RE share it evenly.
    Unscheduled (k, t, f) entries are exactly zero.
    """
    K, NM, T, F = ch.h.shape
    p_t = derive_power_budget(cfg)
    p_re = p_t / F
    w = np.zeros((K, NM, T, F), dtype=complex)
    eye = np.eye(NM)
    for t in range(T):
        for f in range(F):
            users = zeta.users_in_re(t, f)
            if users.size == 0:
                continue
            rows = ch.h[users, :, t, f]  # (Ktf, NM)
            gram = rows.T @ rows.conj()
            reg = users.size * ch.noise_power / p_re
            cols = np.linalg.solve(gram + reg * eye, rows.T)  # (NM, Ktf)
            share = p_re / users.size
            for i, k in enumerate(users):
                v = cols[:, i]
                n2 = float(np.vdot(v, v).real)
                if n2 > 0.0:
                    w[k, :, t, f] = v * math.sqrt(share / n2)
    _project_slot_power(w, p_t)
    return BeamformerSet(w)


def _project_slot_power(w: np.ndarray, p_t: float) -> None:
    power = np.sum(np.abs(w) ** 2, axis=(0, 1, 3))
    for t, p in enumerate(power):
        if p > p_t:
            w[:, :, t, :] *= math.sqrt(p_t / p)


# ---------------------------------------------------------------------------
# Shared SCA plumbing
# ---------------------------------------------------------------------------


def _scheduled_pairs(zeta: ScheduleMatrix) -> list[tuple[int, int, int]]:
    ks, ts, fs = np.nonzero(zeta.zeta)
    return [(int(k), int(t), int(f)) for k, t, f in zip(ks, ts, fs)]


def _normalized_problem_data(ch, pairs, p_t):
    """Channel grams and combined noises in solver units.

    Power is normalized so each slot's trace budget is 1 (the power
    budget multiplies the grams), and everything is jointly rescaled to
    a unit median gram trace.  SINRs, rates, and the QoS surrogates are
    invariant; the solver sees well-conditioned data.
    """
    grams = {
        (k, t, f): p_t * np.outer(ch.h[k, :, t, f], ch.h[k, :, t, f].conj()) for (k, t, f) in pairs
    }
    scale = float(np.median([np.real(np.trace(g)) for g in grams.values()]))
    scale = max(scale, 1e-100)
    grams = {b: g / scale for b, g in grams.items()}
    noise = {
        (k, t, f): float(ch.combined_noise[k, t, f]) / scale for (k, t, f) in pairs
    }
    return grams, noise


def _structural_qos_gap(zeta: ScheduleMatrix, cfg: SystemConfig) -> bool:
    min_bits = np.asarray(cfg.min_bits, dtype=float)
    per_user = zeta.zeta.sum(axis=(1, 2))
    return bool(np.any((min_bits > 0) & (per_user == 0)))


def _fallback(ch, zeta, cfg, regime, reason, trace=()):
    w = mmse_beamformer(ch, zeta, cfg)
    result = weighted_throughput(
        ch, w, zeta, cfg, regime, trace=tuple(trace), diagnostics={"fallback": reason}
    )
    return w, result


def _wtp_of_vectors(ch, zeta, cfg, regime, chi: dict, p_t: float) -> float:
    """Weighted throughput of a candidate set of recovered vectors."""
    K, NM, T, F = ch.h.shape
    w = np.zeros((K, NM, T, F), dtype=complex)
    for (k, t, f), v in chi.items():
        w[k, :, t, f] = v
    res = weighted_throughput(ch, BeamformerSet(w), zeta, cfg, regime)
    return res.weighted_throughput


def _psd_project(X: np.ndarray) -> np.ndarray:
    """Clear interior-point eigenvalue noise before rank-one recovery."""
    Xh = (X + X.conj().T) / 2.0
    vals, vecs = np.linalg.eigh(Xh)
    if vals[0] >= 0.0:
        return Xh
    return (vecs * np.maximum(vals, 0.0)) @ vecs.conj().T


def _recover_beamformers(
    ch, zeta, cfg, solver_cfg, regime, raw_blocks: dict, p_t: float
) -> tuple[BeamformerSet, dict]:
    """Rank-one rounding of all lifted blocks plus power projection.

    Blocks are in power-normalized units (trace budget 1 per slot); the
    physical vector picks up sqrt(p_t).
    """
    blocks = {b: _psd_project(X) for b, X in raw_blocks.items()}
    pairs = sorted(blocks.keys())
    ratios = {}
    chi = {}
    for b in pairs:
        X = blocks[b]
        vals = np.linalg.eigvalsh((X + X.conj().T) / 2.0)
        tr = float(np.maximum(vals, 0.0).sum())
        ratios[b] = float(vals[-1] / tr) if tr > 0 else 1.0
        lam, vec = np.linalg.eigh((X + X.conj().T) / 2.0)
        chi[b] = math.sqrt(max(lam[-1], 0.0)) * vec[:, -1] * math.sqrt(p_t)

    for b in pairs:
        if ratios[b] >= cfg_threshold(solver_cfg) or solver_cfg.randomization_trials == 0:
            continue
        k, t, f = b
        rng = derive_rng(cfg.rng_seed, STREAM_RANDOMIZATION, k, t, f)

        def score(v, _b=b):
            trial = dict(chi)
            trial[_b] = v * math.sqrt(p_t)
            return _wtp_of_vectors(ch, zeta, cfg, regime, trial, p_t)

        chi[b] = recover_rank1(blocks[b], solver_cfg, rng=rng, score=score) * math.sqrt(p_t)

    K, NM, T, F = ch.h.shape
    w = np.zeros((K, NM, T, F), dtype=complex)
    for (k, t, f), v in chi.items():
        w[k, :, t, f] = v
    _project_slot_power(w, p_t)
    return BeamformerSet(w), {"rank1_ratios": ratios}


def cfg_threshold(solver_cfg: SolverConfig) -> float:
    return solver_cfg.rank1_ratio_threshold


def _converged(trace: list[float], tol: float) -> bool:
    if len(trace) < 2:
        return False
    prev, curr = trace[-2], trace[-1]
    return abs(curr - prev) <= tol * max(abs(prev), 1e-12)


# ---------------------------------------------------------------------------
# Shannon-regime design
# ---------------------------------------------------------------------------


def bf_infbl(
    ch: ChannelRealization,
    zeta: ScheduleMatrix,
    cfg: SystemConfig,
    solver_cfg: SolverConfig,
) -> tuple[BeamformerSet, "AllocationResult"]:
    """Iterative lifted beamforming design for the Shannon-rate objective."""
    from .metrics import AllocationResult  # circular-safe for type only

    p_t = derive_power_budget(cfg)
    pairs = _scheduled_pairs(zeta)
    if not pairs:
        K, NM, T, F = ch.h.shape
        w = BeamformerSet(np.zeros((K, NM, T, F), dtype=complex))
        return w, weighted_throughput(ch, w, zeta, cfg, Regime.INFBL)
    if _structural_qos_gap(zeta, cfg):
        return _fallback(ch, zeta, cfg, Regime.INFBL, "unserved user with positive demand")

    K, NM, T, F = ch.h.shape
    weights = np.asarray(cfg.weights, dtype=float)
    min_bits = np.asarray(cfg.min_bits, dtype=float)
    grams, noise = _normalized_problem_data(ch, pairs, p_t)
    re_users = {}
    for k, t, f in pairs:
        re_users.setdefault((t, f), []).append(k)

    def block(k, t, f):
        return f"lift_{k}_{t}_{f}"

    psd = tuple(PsdBlock(block(k, t, f), NM) for (k, t, f) in pairs)
    params = []
    per_user_rate: dict[int, Concave] = {}
    obj_logs = []
    obj_affine_mats = []
    obj_affine_cparams = []
    for k, t, f in pairs:
        others = [j for j in re_users[(t, f)] if j != k]
        total = Affine(
            const=noise[(k, t, f)],
            mats=tuple(MatTerm(block(j, t, f), grams[(k, t, f)]) for j in re_users[(t, f)]),
        )
        c_name = f"tangent_const_{k}_{t}_{f}"
        g_name = f"tangent_grad_{k}_{t}_{f}"
        params += [c_name, g_name]
        interf_mats = tuple(
            MatTerm(block(j, t, f), grams[(k, t, f)], scale=-1.0, param=g_name) for j in others
        )
        user = per_user_rate.setdefault(k, Concave())
        per_user_rate[k] = Concave(
            logs=user.logs + (LogTerm(1.0, total),),
            affine=Affine(
                const=user.affine.const,
                mats=user.affine.mats + interf_mats,
                const_params=user.affine.const_params + ((1.0, c_name),),
            ),
        )
        obj_logs.append(LogTerm(float(weights[k]), total))
        obj_affine_mats += [
            MatTerm(block(j, t, f), grams[(k, t, f)], scale=-float(weights[k]), param=g_name)
            for j in others
        ]
        obj_affine_cparams.append((float(weights[k]), c_name))

    constraints: list = []
    for t in range(T):
        mats = tuple(
            MatTerm(block(k, t, f), np.eye(NM)) for (k, tt, f) in pairs if tt == t
        )
        if mats:
            constraints.append(AffineLe(Affine(mats=mats), Affine(const=1.0)))
    for k, expr in per_user_rate.items():
        constraints.append(ConcaveGe(expr, Affine(const=float(min_bits[k]))))

    prog = ConicProgram(
        psd_blocks=psd,
        constraints=tuple(constraints),
        objective=Concave(
            logs=tuple(obj_logs),
            affine=Affine(mats=tuple(obj_affine_mats), const_params=tuple(obj_affine_cparams)),
        ),
        params=tuple(params),
    )
    compiled = CompiledConicProgram(prog)

    w0 = mmse_beamformer(ch, zeta, cfg)
    state = ScaState()
    for k, t, f in pairs:
        v = w0.w[k, :, t, f] / math.sqrt(p_t)
        state.X_hat[(k, t, f)] = np.outer(v, v.conj())

    def param_values():
        values = {}
        for k, t, f in pairs:
            interf_hat = sum(
                float(np.real(np.trace(grams[(k, t, f)] @ state.X_hat[(j, t, f)])))
                for j in re_users[(t, f)]
                if j != k
            )
            denom_hat = interf_hat + noise[(k, t, f)]
            g = 1.0 / (denom_hat * LN2)
            values[f"tangent_grad_{k}_{t}_{f}"] = g
            values[f"tangent_const_{k}_{t}_{f}"] = -math.log2(denom_hat) + g * interf_hat
        return values

    def lifted_wtp(blocks_by_pair):
        total = 0.0
        for k, t, f in pairs:
            users = re_users[(t, f)]
            blks = [blocks_by_pair[(j, t, f)] for j in users]
            gr = [grams[(j, t, f)] for j in users]
            total += weights[k] * lifted_rate_bits(gr, blks, users.index(k), noise[(k, t, f)])
        return total

    statuses = []
    fallback_reason = None
    for it in range(solver_cfg.max_sca_iters):
        sol = compiled.solve(param_values())
        statuses.append(sol.status.value)
        if sol.status is not SolveStatus.OPTIMAL:
            if it == 0:
                if sol.status is SolveStatus.INFEASIBLE:
                    return _fallback(ch, zeta, cfg, Regime.INFBL, "subproblem infeasible")
                return _fallback(ch, zeta, cfg, Regime.INFBL, f"solver {sol.status.value}")
            fallback_reason = f"solver {sol.status.value} at iteration {it}"
            break
        state.X_hat = {b: sol.psd_blocks[block(*b)] for b in pairs}
        state.iteration = it + 1
        state.objective_trace.append(lifted_wtp(state.X_hat))
        if _converged(state.objective_trace, solver_cfg.convergence_tol):
            break

    w, diag = _recover_beamformers(ch, zeta, cfg, solver_cfg, Regime.INFBL, state.X_hat, p_t)
    diag.update({"sca_iterations": state.iteration, "solver_statuses": statuses})
    if fallback_reason:
        diag["note"] = fallback_reason
    result = weighted_throughput(
        ch, w, zeta, cfg, Regime.INFBL, trace=tuple(state.objective_trace), diagnostics=diag
    )
    return w, result


# ---------------------------------------------------------------------------
# Short-packet-regime design
# ---------------------------------------------------------------------------


def bf_fbl(
    ch: ChannelRealization,
    zeta: ScheduleMatrix,
    cfg: SystemConfig,
    solver_cfg: SolverConfig,
) -> tuple[BeamformerSet, "AllocationResult"]:
    """Iterative design for the normal-approximation objective.

    Auxiliary scalars per scheduled (k, t, f): a SINR bound z (kept
    above cfg.min_sinr_floor), a signal amplitude proxy with its square
    under the received power, and a denominator dominating interference
    plus noise; z sits under the tangent bound of amplitude^2/denominator.
    """
    if not (0.0 < cfg.bler < 0.5):
        raise ValueError(f"bler must lie in (0, 0.5), got {cfg.bler!r}")
    p_t = derive_power_budget(cfg)
    pairs = _scheduled_pairs(zeta)
    if not pairs:
        K, NM, T, F = ch.h.shape
        w = BeamformerSet(np.zeros((K, NM, T, F), dtype=complex))
        return w, weighted_throughput(ch, w, zeta, cfg, Regime.FBL)
    if _structural_qos_gap(zeta, cfg):
        return _fallback(ch, zeta, cfg, Regime.FBL, "unserved user with positive demand")

    K, NM, T, F = ch.h.shape
    weights = np.asarray(cfg.weights, dtype=float)
    min_bits = np.asarray(cfg.min_bits, dtype=float)
    eps = float(cfg.bler)
    z_floor = float(cfg.min_sinr_floor)
    grams, noise = _normalized_problem_data(ch, pairs, p_t)
    re_users = {}
    user_pairs: dict[int, list[tuple[int, int, int]]] = {}
    for k, t, f in pairs:
        re_users.setdefault((t, f), []).append(k)
        user_pairs.setdefault(k, []).append((k, t, f))

    def block(k, t, f):
        return f"lift_{k}_{t}_{f}"

    def zname(k, t, f):
        return f"snr_{k}_{t}_{f}"

    def aname(k, t, f):
        return f"amp_{k}_{t}_{f}"

    def dname(k, t, f):
        return f"den_{k}_{t}_{f}"

    psd = tuple(PsdBlock(block(*b), NM) for b in pairs)
    scalars = []
    params = []
    constraints: list = []
    for b in pairs:
        k, t, f = b
        scalars.append(ScalarVar(zname(*b), lower=z_floor))
        scalars.append(ScalarVar(aname(*b), nonneg=True))
        scalars.append(ScalarVar(dname(*b), nonneg=True))
        lin = f"ratio_lin_{k}_{t}_{f}"
        quad = f"ratio_quad_{k}_{t}_{f}"
        slope = f"pen_slope_{k}_{t}_{f}"
        params += [lin, quad, slope]
        # z <= 2(a/d) amp - (a/d)^2 den, the tangent bound of amp^2/den
        constraints.append(
            AffineLe(
                Affine(
                    scals=(
                        ScalTerm(zname(*b)),
                        ScalTerm(aname(*b), scale=-1.0, param=lin),
                        ScalTerm(dname(*b), scale=1.0, param=quad),
                    )
                ),
                Affine(const=0.0),
            )
        )
        constraints.append(SquareLe(aname(*b), Affine(mats=(MatTerm(block(*b), grams[b]),))))
        others = [j for j in re_users[(t, f)] if j != k]
        constraints.append(
            AffineLe(
                Affine(
                    const=noise[b],
                    mats=tuple(MatTerm(block(j, t, f), grams[b]) for j in others),
                ),
                Affine(scals=(ScalTerm(dname(*b)),)),
            )
        )

    obj_logs = []
    obj_scals = []
    obj_cparams = []
    for k, blist in user_pairs.items():
        pen_const = f"pen_const_{k}"
        params.append(pen_const)
        user_logs = []
        user_scals = []
        for b in blist:
            arg = Affine(const=1.0, scals=(ScalTerm(zname(*b)),))
            user_logs.append(LogTerm(1.0, arg))
            user_scals.append(ScalTerm(zname(*b), scale=-1.0, param=f"pen_slope_{b[0]}_{b[1]}_{b[2]}"))
            obj_logs.append(LogTerm(float(weights[k]), arg))
            obj_scals.append(
                ScalTerm(zname(*b), scale=-float(weights[k]), param=f"pen_slope_{b[0]}_{b[1]}_{b[2]}")
            )
        obj_cparams.append((-float(weights[k]), pen_const))
        constraints.append(
            ConcaveGe(
                Concave(
                    logs=tuple(user_logs),
                    affine=Affine(scals=tuple(user_scals), const_params=((-1.0, pen_const),)),
                ),
                Affine(const=float(min_bits[k])),
            )
        )

    for t in range(T):
        mats = tuple(MatTerm(block(*b), np.eye(NM)) for b in pairs if b[1] == t)
        if mats:
            constraints.append(AffineLe(Affine(mats=mats), Affine(const=1.0)))

    prog = ConicProgram(
        psd_blocks=psd,
        scalars=tuple(scalars),
        constraints=tuple(constraints),
        objective=Concave(
            logs=tuple(obj_logs),
            affine=Affine(scals=tuple(obj_scals), const_params=tuple(obj_cparams)),
        ),
        params=tuple(params),
    )
    compiled = CompiledConicProgram(prog)

    from .metrics import sinr_grid

    w0 = mmse_beamformer(ch, zeta, cfg)
    gamma0 = sinr_grid(ch, w0, zeta)
    state = ScaState()
    for b in pairs:
        k, t, f = b
        v = w0.w[k, :, t, f] / math.sqrt(p_t)
        state.X_hat[b] = np.outer(v, v.conj())
    for b in pairs:
        k, t, f = b
        sig = float(np.real(np.trace(grams[b] @ state.X_hat[b])))
        state.z_hat[b] = max(float(gamma0[k, t, f]), z_floor)
        state.pi_hat[b] = max(math.sqrt(max(sig, 0.0)), AMP_FLOOR)
        interf = sum(
            float(np.real(np.trace(grams[b] @ state.X_hat[(j, t, f)])))
            for j in re_users[(t, f)]
            if j != k
        )
        state.theta_hat[b] = interf + noise[b]

    def param_values():
        values = {}
        for k, blist in user_pairs.items():
            zh = np.array([state.z_hat[b] for b in blist])
            grad = fbl_penalty_gradient(zh, eps)
            for b, g in zip(blist, grad):
                values[f"pen_slope_{b[0]}_{b[1]}_{b[2]}"] = float(g)
            values[f"pen_const_{k}"] = fbl_penalty(zh, eps) - float(grad @ zh)
        for b in pairs:
            ratio = state.pi_hat[b] / state.theta_hat[b]
            values[f"ratio_lin_{b[0]}_{b[1]}_{b[2]}"] = 2.0 * ratio
            values[f"ratio_quad_{b[0]}_{b[1]}_{b[2]}"] = ratio * ratio
        return values

    def bound_wtp():
        total = 0.0
        for k, blist in user_pairs.items():
            zh = np.array([state.z_hat[b] for b in blist])
            total += weights[k] * (float(np.sum(np.log2(1.0 + zh))) - fbl_penalty(zh, eps))
        return total

    statuses = []
    fallback_reason = None
    for it in range(solver_cfg.max_sca_iters):
        sol = compiled.solve(param_values())
        statuses.append(sol.status.value)
        if sol.status is not SolveStatus.OPTIMAL:
            if it == 0:
                if sol.status is SolveStatus.INFEASIBLE:
                    return _fallback(ch, zeta, cfg, Regime.FBL, "subproblem infeasible")
                return _fallback(ch, zeta, cfg, Regime.FBL, f"solver {sol.status.value}")
            fallback_reason = f"solver {sol.status.value} at iteration {it}"
            break
        for b in pairs:
            state.X_hat[b] = sol.psd_blocks[block(*b)]
            state.z_hat[b] = max(float(sol.scalars[zname(*b)]), z_floor, 0.0)
            state.pi_hat[b] = max(float(sol.scalars[aname(*b)]), AMP_FLOOR)
            state.theta_hat[b] = max(float(sol.scalars[dname(*b)]), noise[b])
        state.iteration = it + 1
        state.objective_trace.append(bound_wtp())
        if _converged(state.objective_trace, solver_cfg.convergence_tol):
            break

    w, diag = _recover_beamformers(ch, zeta, cfg, solver_cfg, Regime.FBL, state.X_hat, p_t)
    diag.update({"sca_iterations": state.iteration, "solver_statuses": statuses})
    if fallback_reason:
        diag["note"] = fallback_reason
    result = weighted_throughput(
        ch, w, zeta, cfg, Regime.FBL, trace=tuple(state.objective_trace), diagnostics=diag
    )
    return w, result
