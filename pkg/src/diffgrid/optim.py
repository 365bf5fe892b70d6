"""Alternating per-color optimization with inversion resets.

One "iteration" is one color step: the active color's parameters get an
Adam update, everything else stays fixed. Inverted simplices are rolled
back to their previous vertex positions until the state is clean, which
always terminates because a full rollback reproduces the previous injective
state. A global backtracking line search over all vertices at once is kept
as the baseline it replaces.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from . import diffrep, energy
from .complexes import (EPS_AREA, BoundaryConstraint, SimplicialComplex,
                        apply_boundary, signed_measures)
from .coloring import VertexColoring, verify_independent

ALTERNATING = "alternating"
LINE_SEARCH = "line-search"
CONVEX = "convex"
DIRECT = "direct"


@dataclass
class OptConfig:
    iterations: int = 1000
    lr: float = 1e-3
    mode: str = ALTERNATING
    backtrack_factor: float = 0.9
    weight_mode: str = diffrep.PER_VERTEX
    parameterization: str = CONVEX
    checks_enabled: bool = True
    seed: int = 0
    init_jitter: float = 0.0       # seeded noise on the initial parameters
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_backtracks: int = 200
    validate_every_step: bool = False  # assert injectivity after each accepted step

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack factor must be in (0, 1)")
        if self.mode not in (ALTERNATING, LINE_SEARCH):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.parameterization not in (CONVEX, DIRECT):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")


@dataclass
class StepReport:
    iteration: int
    color: int
    energy: float
    barrier: float
    inverted: int
    resets: int
    wall_time: float
    skipped: bool = False

    CSV_HEADER = "iteration,color,energy,barrier,inverted,resets,wall_time,skipped"

    def csv_row(self) -> str:
        return (f"{self.iteration},{self.color},{self.energy:.17g},"
                f"{self.barrier:.17g},{self.inverted},{self.resets},"
                f"{self.wall_time:.6f},{int(self.skipped)}")


@dataclass
class OptResult:
    positions: np.ndarray
    weights: diffrep.DifferentialWeights | None
    reports: list[StepReport]
    final_loss: float
    final_barrier: float
    injective: bool
    wall_time: float
    skipped_steps: int = 0


class AdamState:
    """Plain Adam with bias correction; one instance per color."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def detect_inversions(complex_: SimplicialComplex,
                      positions: np.ndarray | None = None,
                      eps: float = EPS_AREA) -> np.ndarray:
    """Ids of simplices with signed measure <= eps, in index order."""
    return np.flatnonzero(signed_measures(complex_, positions) <= eps)


def reset_inverted(complex_: SimplicialComplex, positions: np.ndarray,
                   previous: np.ndarray, inverted: np.ndarray,
                   eps: float = EPS_AREA):
    """Restore vertices of inverted simplices to their previous positions.

    Re-detects until clean; terminates in at most |V| rounds because the set
    of restored vertices only grows and a fully restored simplex is clean.
    Returns (positions, rounds).
    """
    pos = positions.copy()
    rounds = 0
    inv = np.asarray(inverted, dtype=np.int64)
    while len(inv):
        verts = np.unique(complex_.simplices[inv])
        pos[verts] = previous[verts]
        rounds += 1
        inv = detect_inversions(complex_, pos, eps)
        if rounds > complex_.vertex_count + 1:
            raise RuntimeError("inversion reset failed to reach a fixpoint")
    return pos, rounds


def _check_initial_state(complex_, positions, spec, reference, config, coloring=None):
    if config.checks_enabled and len(detect_inversions(complex_, positions)):
        raise ValueError("initial configuration is not injective")
    lval, bval, _ = energy.total_value_grad(spec, positions, reference, complex_,
                                            want_grad=False)
    if not math.isfinite(lval + bval):
        raise ValueError("non-finite energy at the initial configuration")
    if coloring is not None and not verify_independent(coloring, complex_):
        raise ValueError("coloring has a monochromatic edge")


def _jittered_weights(complex_, config):
    weights = diffrep.DifferentialWeights.ones(complex_, config.weight_mode)
    if config.init_jitter > 0:
        rng = np.random.default_rng(config.seed)
        weights.raw = weights.raw + config.init_jitter * rng.standard_normal(weights.raw.shape)
    return weights


def _jittered_positions(complex_, constraints, config):
    positions = complex_.positions.copy()
    if config.init_jitter <= 0:
        return positions
    rng = np.random.default_rng(config.seed)
    scale = config.init_jitter
    for _ in range(40):
        cand = positions + scale * rng.standard_normal(positions.shape)
        cand = apply_boundary(cand, constraints)
        if not len(detect_inversions(complex_, cand)):
            return cand
        scale *= 0.5
    return positions


def alternating_optimize(complex_: SimplicialComplex,
                         weights: diffrep.DifferentialWeights | None,
                         coloring: VertexColoring, spec: energy.EnergySpec,
                         config: OptConfig, constraints: BoundaryConstraint,
                         reference: energy.ReferenceGeometry | None = None) -> OptResult:
    """Cycle colors round-robin, one Adam step per color per iteration.

    In the convex parameterization the active vertices are first rewritten
    as the weighted average of their fixed neighbors, the loss is evaluated
    there, the raw weights take the update, and the positions are recomputed
    with the new weights. Any simplex the recompute inverts is rolled back
    (the weight update is kept). In the direct parameterization the
    parameters are the vertex positions themselves under the same schedule.
    """
    if reference is None:
        if spec.kind in energy.TOY_KINDS:
            reference = energy.reference_for_toy(complex_, constraints)
        else:
            raise ValueError("non-toy energies need an explicit reference")

    direct = config.parameterization == DIRECT
    if direct:
        positions = _jittered_positions(complex_, constraints, config)
        weights = None
    else:
        if weights is None:
            weights = _jittered_weights(complex_, config)
        else:
            weights = weights.copy()
        positions = complex_.positions.copy()

    _check_initial_state(complex_, positions, spec, reference, config, coloring)

    plans = [diffrep.ColorPlan.build(complex_, rows) for rows in coloring.members]
    adam = []
    for c, plan in enumerate(plans):
        shape = plan.rows.shape + positions.shape[1:] if direct \
            else weights.raw[plan.entry_idx].shape
        adam.append(AdamState(shape, config.lr, config.beta1, config.beta2,
                              config.adam_eps))

    reports: list[StepReport] = []
    skipped = 0
    t_start = time.perf_counter()
    for it in range(config.iterations):
        t0 = time.perf_counter()
        color = it % coloring.color_count
        plan = plans[color]
        inverted_count = 0
        resets = 0
        step_skipped = False

        if direct:
            lval, bval, grad_pos = energy.total_value_grad(spec, positions,
                                                           reference, complex_)
            if grad_pos is None:
                step_skipped = True
                lval = lval if math.isfinite(lval) else math.inf
                bval = bval if math.isfinite(bval) else math.inf
            else:
                g = grad_pos[plan.rows]
                g[constraints.pinned_mask[plan.rows]] = 0.0
                circ = constraints.on_circle[plan.rows]
                if circ.any():
                    p = positions[plan.rows][circ]
                    r = np.maximum(np.linalg.norm(p, axis=1), 1e-300)
                    phat = p / r[:, None]
                    gc = g[circ]
                    g[circ] = (gc - (gc * phat).sum(axis=1)[:, None] * phat) / r[:, None]
                candidate = positions.copy()
                rows_new = candidate[plan.rows] + adam[color].step(g)
                # boundary projection restricted to the active rows so the
                # inactive ones stay bitwise unchanged
                m = constraints.pinned_mask[plan.rows]
                rows_new[m] = constraints.pinned_values[plan.rows][m]
                circ = constraints.on_circle[plan.rows]
                if circ.any():
                    p = rows_new[circ]
                    r = np.maximum(np.linalg.norm(p, axis=1), 1e-300)
                    rows_new[circ] = p / r[:, None]
                candidate[plan.rows] = rows_new
        else:
            try:
                lval, bval, cand_info = _convex_color_step(
                    complex_, weights, plan, positions, constraints,
                    spec, reference, adam[color])
                candidate = cand_info
            except energy.GradientUndefinedError:
                step_skipped = True
                lval, bval = math.inf, math.inf

        if not step_skipped:
            if config.checks_enabled:
                inv = detect_inversions(complex_, candidate)
                inverted_count = len(inv)
                if inverted_count:
                    candidate, resets = reset_inverted(complex_, candidate,
                                                       positions, inv)
                if config.validate_every_step:
                    assert len(detect_inversions(complex_, candidate)) == 0
            positions = candidate
        else:
            skipped += 1

        reports.append(StepReport(iteration=it, color=color, energy=lval,
                                  barrier=bval, inverted=inverted_count,
                                  resets=resets,
                                  wall_time=time.perf_counter() - t0,
                                  skipped=step_skipped))

    lval, bval, _ = energy.total_value_grad(spec, positions, reference, complex_,
                                            want_grad=False)
    return OptResult(
        positions=positions,
        weights=weights,
        reports=reports,
        final_loss=lval,
        final_barrier=bval,
        injective=len(detect_inversions(complex_, positions)) == 0,
        wall_time=time.perf_counter() - t_start,
        skipped_steps=skipped,
    )


def _convex_color_step(complex_, weights, plan, positions, constraints,
                       spec, reference, adam):
    """Gradient at forward(current weights), Adam on raw, forward again."""
    fwd, cache = diffrep.forward_active(complex_, weights, plan, positions,
                                        constraints)
    lval, bval, grad_pos = energy.total_value_grad(spec, fwd, reference, complex_)
    if grad_pos is None:
        raise energy.GradientUndefinedError("non-finite energy in color step")
    grad_raw = diffrep.backward_active(weights, cache, grad_pos, constraints)
    weights.raw[plan.entry_idx] += adam.step(grad_raw)
    candidate, _ = diffrep.forward_active(complex_, weights, plan, positions,
                                          constraints)
    return lval, bval, candidate


def direct_deform_optimize(complex_: SimplicialComplex, coloring: VertexColoring,
                           spec: energy.EnergySpec, config: OptConfig,
                           constraints: BoundaryConstraint,
                           reference: energy.ReferenceGeometry | None = None) -> OptResult:
    """Alternating schedule over extrinsic per-vertex offsets."""
    cfg = _with(config, parameterization=DIRECT)
    return alternating_optimize(complex_, None, coloring, spec, cfg,
                                constraints, reference)


def _with(config: OptConfig, **kw) -> OptConfig:
    return replace(config, **kw)


def backtrack_step(apply_fn, valid_fn, factor: float, max_retries: int):
    """Scale a step until valid_fn accepts it.

    ``apply_fn(t)`` produces the candidate state for step scale t;
    ``valid_fn(state)`` judges it. Returns (state or None, retries).
    """
    t = 1.0
    for retry in range(max_retries + 1):
        state = apply_fn(t)
        if valid_fn(state):
            return state, retry
        t *= factor
    return None, max_retries + 1


def line_search_optimize(complex_: SimplicialComplex, spec: energy.EnergySpec,
                         config: OptConfig, constraints: BoundaryConstraint,
                         reference: energy.ReferenceGeometry | None = None) -> OptResult:
    """One global step per iteration over ALL vertices with backtracking.

    Every vertex updates concurrently (so neighbors move under each other);
    a stepped state with any inversion or non-finite energy is retried at
    backtrack_factor times the scale, up to max_backtracks, then skipped.
    Supports both the convex-weight and the direct-position parameterization
    through ``config.parameterization``.
    """
    if reference is None:
        if spec.kind in energy.TOY_KINDS:
            reference = energy.reference_for_toy(complex_, constraints)
        else:
            raise ValueError("non-toy energies need an explicit reference")

    direct = config.parameterization == DIRECT
    all_rows = np.arange(complex_.vertex_count)
    plan = diffrep.ColorPlan.build(complex_, all_rows)
    if direct:
        positions = _jittered_positions(complex_, constraints, config)
        weights = None
        adam = AdamState(positions.shape, config.lr, config.beta1, config.beta2,
                         config.adam_eps)
    else:
        weights = _jittered_weights(complex_, config)
        positions = complex_.positions.copy()
        adam = AdamState(weights.raw.shape, config.lr, config.beta1,
                         config.beta2, config.adam_eps)

    _check_initial_state(complex_, positions, spec, reference, config)

    def state_valid(state):
        pos = state[0]
        if len(detect_inversions(complex_, pos)):
            return False
        lv, bv, _ = energy.total_value_grad(spec, pos, reference, complex_,
                                            want_grad=False)
        return math.isfinite(lv + bv)

    reports: list[StepReport] = []
    skipped = 0
    t_start = time.perf_counter()
    for it in range(config.iterations):
        t0 = time.perf_counter()
        step_skipped = False
        retries = 0
        if direct:
            lval, bval, grad_pos = energy.total_value_grad(spec, positions,
                                                           reference, complex_)
            if grad_pos is None:
                step_skipped = True
                lval, bval = math.inf, math.inf
            else:
                g = grad_pos.copy()
                g[constraints.pinned_mask] = 0.0
                circ = constraints.on_circle
                if circ.any():
                    p = positions[circ]
                    r = np.maximum(np.linalg.norm(p, axis=1), 1e-300)
                    phat = p / r[:, None]
                    gc = g[circ]
                    g[circ] = (gc - (gc * phat).sum(axis=1)[:, None] * phat) / r[:, None]
                delta = adam.step(g)

                def apply_direct(t):
                    return (apply_boundary(positions + t * delta, constraints),)

                state, retries = backtrack_step(apply_direct, state_valid,
                                                config.backtrack_factor,
                                                config.max_backtracks)
                if state is None:
                    step_skipped = True
                else:
                    positions = state[0]
        else:
            fwd, cache = diffrep.forward_active(complex_, weights, plan,
                                                positions, constraints)
            lval, bval, grad_pos = energy.total_value_grad(spec, fwd, reference,
                                                           complex_)
            if grad_pos is None:
                step_skipped = True
                lval, bval = math.inf, math.inf
            else:
                grad_raw = diffrep.backward_active(weights, cache, grad_pos,
                                                   constraints)
                delta = adam.step(grad_raw)
                base_raw = weights.raw

                def apply_convex(t):
                    trial = diffrep.DifferentialWeights(mode=weights.mode,
                                                        raw=base_raw + t * delta)
                    pos, _ = diffrep.forward_active(complex_, trial, plan,
                                                    positions, constraints)
                    return (pos, trial)

                state, retries = backtrack_step(apply_convex, state_valid,
                                                config.backtrack_factor,
                                                config.max_backtracks)
                if state is None:
                    step_skipped = True
                else:
                    positions, weights = state

        if step_skipped:
            skipped += 1
        reports.append(StepReport(iteration=it, color=0, energy=lval,
                                  barrier=bval, inverted=0, resets=retries,
                                  wall_time=time.perf_counter() - t0,
                                  skipped=step_skipped))

    lval, bval, _ = energy.total_value_grad(spec, positions, reference, complex_,
                                            want_grad=False)
    return OptResult(
        positions=positions,
        weights=weights,
        reports=reports,
        final_loss=lval,
        final_barrier=bval,
        injective=len(detect_inversions(complex_, positions)) == 0,
        wall_time=time.perf_counter() - t_start,
        skipped_steps=skipped,
    )
