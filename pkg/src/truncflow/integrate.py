"""Trajectory integration with sector-crossing event detection.

The vector fields are piecewise smooth: they jump whenever a training
point crosses an activation hyperplane.  A step is accepted only if the
set of truncated coordinates is unchanged across it; otherwise the
crossing time is localized by bisection, the step is split there, and an
event is recorded.  Rotations are advanced by retraction (exponential of
the averaged generator), so orthogonality is preserved to round-off;
every 100th retraction the rotation is re-projected onto the group.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import StepUnderflow
from .flows import (
    CollapsedState,
    collapsed_rhs,
    conserved_quantity,
    effective_rhs,
    general_rhs,
)
from .manifold import REPOLAR_EVERY, AntisymmetricMatrix, reproject, retract
from .measures import TrainingSet, warn_if_not_separated
from .model import ModelState, chained_truncation_batch, euclidean_cost

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntegratorOptions:
    """Step-control knobs; the defaults satisfy every stated check tolerance."""

    step: float = 1e-2          # nominal step, halved on rejection
    min_step: float = 1e-14     # below this, raise StepUnderflow
    cost_slack: float = 1e-8    # allowed cost increase: slack * (1 + cost)
    bisect_tol: float = 1e-9    # crossing-time localization in s
    atol: float = 1e-9          # collapsed-flow state tolerance, absolute
    rtol: float = 1e-7          # collapsed-flow state tolerance, relative


@dataclass(frozen=True)
class LayerDiagnostics:
    omega_norm: float
    beta_gap: float
    truncated_counts: np.ndarray


@dataclass(frozen=True)
class FlowSample:
    s: float
    state: ModelState
    cost: float
    per_layer: tuple[LayerDiagnostics, ...]


@dataclass(frozen=True)
class Event:
    """One coordinate of one point crossing an activation hyperplane."""

    s: float
    layer: int
    cluster: int
    point: int
    coordinate: int
    direction: str  # "entering" (became truncated) or "leaving"


@dataclass
class Trajectory:
    samples: list[FlowSample]
    events: list[Event]

    @property
    def times(self) -> np.ndarray:
        return np.array([smp.s for smp in self.samples])

    @property
    def costs(self) -> np.ndarray:
        return np.array([smp.cost for smp in self.samples])

    @property
    def final_state(self) -> ModelState:
        return self.samples[-1].state


def _apply(state: ModelState, slopes, dt: float) -> ModelState:
    """Advance every layer: beta by dt * beta_dot, R by retraction of dt * Omega."""
    layers = []
    for lp, (beta_dot, omega) in zip(state.layers, slopes):
        layers.append(
            lp.with_updates(
                rotation=retract(lp.rotation, omega, dt),
                beta=lp.beta + dt * beta_dot,
            )
        )
    return ModelState(layers, state.output_map, state.labels)


def _rk4_step(state: ModelState, rhs_fn, h: float) -> ModelState:
    """Classical 4-stage step; the rotation update uses the averaged generator."""
    k1 = rhs_fn(state)
    k2 = rhs_fn(_apply(state, k1, 0.5 * h))
    k3 = rhs_fn(_apply(state, k2, 0.5 * h))
    k4 = rhs_fn(_apply(state, k3, h))
    combined = []
    for (b1, o1), (b2, o2), (b3, o3), (b4, o4) in zip(k1, k2, k3, k4):
        beta_dot = (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0
        omega = AntisymmetricMatrix((o1.mat + 2.0 * o2.mat + 2.0 * o3.mat + o4.mat) / 6.0)
        combined.append((beta_dot, omega))
    return _apply(state, combined, h)


def _sector_masks(state: ModelState, data: TrainingSet, pairs) -> list[np.ndarray]:
    """Boolean (N, Q) activity patterns of chained cluster images, one per pair.

    `pairs` lists the tracked (layer, cluster) combinations; the cluster's
    points are pushed through layers 0..layer-1 and classified at `layer`.
    """
    out = []
    for layer, cluster in pairs:
        lp = state.layers[layer]
        images = chained_truncation_batch(state.layers, data.clusters[cluster], 0, layer)
        z = (images + lp.beta) @ lp.rotation.mat.T
        out.append(z > 0.0)
    return out


def _masks_equal(a, b) -> bool:
    return all(np.array_equal(ma, mb) for ma, mb in zip(a, b))


def _diff_events(s: float, pairs, before, after) -> list[Event]:
    events = []
    for (layer, cluster), ma, mb in zip(pairs, before, after):
        for point, coord in np.argwhere(ma != mb):
            direction = "entering" if ma[point, coord] else "leaving"
            events.append(Event(s, layer, cluster, int(point), int(coord), direction))
    return events


def _diagnostics(state: ModelState, slopes, own_masks) -> tuple[LayerDiagnostics, ...]:
    """Per-layer Omega norm, distance of beta to its attractor, truncation counts."""
    diags = []
    for k, (beta_dot, omega) in enumerate(slopes):
        gap = float(np.linalg.norm(state.layers[k].beta + state.pulled_labels[k]))
        counts = np.sum(~own_masks[k], axis=0)
        diags.append(LayerDiagnostics(omega_norm=omega.norm(), beta_gap=gap, truncated_counts=counts))
    return tuple(diags)


def _integrate_layered(state0, data, make_rhs, pairs, s_end, opts) -> Trajectory:
    """Event-splitting integration loop.

    `make_rhs(masks)` builds the right-hand side: with `masks` (aligned with
    `pairs`) it evaluates the smooth extension of that sector configuration,
    so no stage of a step ever samples the field across a boundary; with
    None it evaluates the true piecewise field (used for diagnostics).
    """
    if s_end <= 0:
        raise ValueError("s_end must be positive")
    if state0.depth > data.q:
        raise ValueError("need one cluster (and label) per layer: depth <= q")
    own_index = {pair: i for i, pair in enumerate(pairs)}
    own = [own_index[(k, k)] for k in range(state0.depth)]
    fresh_rhs = make_rhs(None)

    state = state0
    s = 0.0
    masks = _sector_masks(state, data, pairs)
    cost = euclidean_cost(state, data)
    samples = [
        FlowSample(s, state, cost, _diagnostics(state, fresh_rhs(state), [masks[i] for i in own]))
    ]
    events: list[Event] = []
    retractions = [0] * state.depth
    h_nominal = opts.step
    crawl_steps = 0  # consecutive event steps that barely advanced

    while s < s_end - 1e-13:
        h = min(h_nominal, s_end - s)
        rhs_step = make_rhs(masks)
        while True:
            if h < opts.min_step:
                raise StepUnderflow(f"step underflow at s = {s:.6g}")
            trial = _rk4_step(state, rhs_step, h)
            trial_masks = _sector_masks(trial, data, pairs)
            if _masks_equal(masks, trial_masks):
                advanced, new_masks, dt = trial, trial_masks, h
                pending_events = []
            else:
                lo, hi = 0.0, h
                while hi - lo > opts.bisect_tol:
                    mid = 0.5 * (lo + hi)
                    probe = _rk4_step(state, rhs_step, mid)
                    if _masks_equal(masks, _sector_masks(probe, data, pairs)):
                        lo = mid
                    else:
                        hi = mid
                advanced = _rk4_step(state, rhs_step, hi)
                new_masks = _sector_masks(advanced, data, pairs)
                pending_events = _diff_events(s + hi, pairs, masks, new_masks)
                dt = hi
            advanced_cost = euclidean_cost(advanced, data)
            if advanced_cost > cost + opts.cost_slack * (1.0 + cost):
                h *= 0.5
                continue
            break

        if pending_events and dt <= 100.0 * opts.bisect_tol:
            crawl_steps += 1
            if crawl_steps > 50:
                raise StepUnderflow(
                    f"chattering at s = {s:.6g}: a point is pinned to an activation "
                    "boundary (sliding configuration, outside the transversal-crossing regime)"
                )
        else:
            crawl_steps = 0
        events.extend(pending_events)

        for k in range(state.depth):
            if advanced.layers[k].rotation is not state.layers[k].rotation:
                retractions[k] += 1
                if retractions[k] % REPOLAR_EVERY == 0:
                    advanced = advanced.with_layer(
                        k, advanced.layers[k].with_updates(rotation=reproject(advanced.layers[k].rotation))
                    )
        state, masks = advanced, new_masks
        cost = euclidean_cost(state, data)
        s += dt
        samples.append(
            FlowSample(s, state, cost, _diagnostics(state, fresh_rhs(state), [masks[i] for i in own]))
        )

    return Trajectory(samples=samples, events=events)


def integrate_effective(state0: ModelState, data: TrainingSet, s_end: float,
                        opts: IntegratorOptions | None = None) -> Trajectory:
    """Integrate the cluster-separated flow: layer k is driven by cluster k only.

    Logs a warning when cluster separation does not hold, since the
    per-layer equations assume it; integration proceeds regardless.
    """
    warn_if_not_separated(state0, data)

    def make_rhs(masks):
        if masks is None:
            return lambda st: [effective_rhs(st, data, k) for k in range(st.depth)]
        return lambda st: [
            effective_rhs(st, data, k, frozen_masks=masks[k]) for k in range(st.depth)
        ]

    pairs = [(k, k) for k in range(state0.depth)]
    return _integrate_layered(state0, data, make_rhs, pairs, s_end, opts or IntegratorOptions())


def integrate_general(state0: ModelState, data: TrainingSet, s_end: float,
                      opts: IntegratorOptions | None = None) -> Trajectory:
    """Integrate the unrestricted flow; every cluster drives every layer."""
    pairs = [(k, l) for k in range(state0.depth) for l in range(data.q)]

    def make_rhs(masks):
        if masks is None:
            return lambda st: general_rhs(st, data)
        lookup = {pair: masks[i] for i, pair in enumerate(pairs)}
        return lambda st: general_rhs(st, data, frozen_masks=lookup)

    return _integrate_layered(state0, data, make_rhs, pairs, s_end, opts or IntegratorOptions())


@dataclass(frozen=True)
class CollapsedSample:
    s: float
    state: CollapsedState
    cost: float
    invariant_drift: float


@dataclass
class CollapsedTrajectory:
    samples: list[CollapsedSample]
    invariant0: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return np.array([smp.s for smp in self.samples])

    @property
    def costs(self) -> np.ndarray:
        return np.array([smp.cost for smp in self.samples])

    @property
    def final_state(self) -> CollapsedState:
        return self.samples[-1].state

    @property
    def max_drift(self) -> float:
        return max(smp.invariant_drift for smp in self.samples)


def _collapsed_rk4(b, w, y, h):
    def f(bb, ww):
        cs = CollapsedState(bb, w_out=ww, y_matrix=y)
        return collapsed_rhs(cs)

    kb1, kw1 = f(b, w)
    kb2, kw2 = f(b + 0.5 * h * kb1, w + 0.5 * h * kw1)
    kb3, kw3 = f(b + 0.5 * h * kb2, w + 0.5 * h * kw2)
    kb4, kw4 = f(b + h * kb3, w + h * kw3)
    bn = b + (h / 6.0) * (kb1 + 2 * kb2 + 2 * kb3 + kb4)
    wn = w + (h / 6.0) * (kw1 + 2 * kw2 + 2 * kw3 + kw4)
    return bn, wn


def integrate_collapsed(cs0: CollapsedState, s_end: float,
                        opts: IntegratorOptions | None = None) -> CollapsedTrajectory:
    """Integrate the collapsed-data standard-cost flow, logging the invariant.

    Adaptive RK4 with step doubling: a step is accepted when the difference
    between one full step and two half steps meets atol/rtol.  Each sample
    logs the drift of B B^T - W^T W from its initial value.
    """
    if s_end <= 0:
        raise ValueError("s_end must be positive")
    opts = opts or IntegratorOptions()
    inv0 = conserved_quantity(cs0)
    scale0 = 1.0 + float(np.linalg.norm(inv0))

    def make_sample(s, b, w):
        cs = CollapsedState(b, w_out=w, y_matrix=cs0.y_matrix)
        drift = float(np.linalg.norm(conserved_quantity(cs) - inv0))
        return CollapsedSample(s, cs, cs.cost(), drift)

    b, w = cs0.b_matrix.copy(), cs0.w_out.copy()
    s, h = 0.0, opts.step
    samples = [make_sample(s, b, w)]
    while s < s_end - 1e-13:
        dt = min(h, s_end - s)
        if dt < opts.min_step:
            raise StepUnderflow(f"step underflow at s = {s:.6g}")
        bf, wf = _collapsed_rk4(b, w, cs0.y_matrix, dt)
        bh, wh = _collapsed_rk4(b, w, cs0.y_matrix, 0.5 * dt)
        bh, wh = _collapsed_rk4(bh, wh, cs0.y_matrix, 0.5 * dt)
        err = max(np.max(np.abs(bf - bh)), np.max(np.abs(wf - wh)))
        tol = opts.atol + opts.rtol * max(np.max(np.abs(b)), np.max(np.abs(w)))
        if err > tol:
            h = 0.5 * dt
            continue
        b, w = bh, wh
        s += dt
        samples.append(make_sample(s, b, w))
        if err < 0.05 * tol:
            h = min(dt * 1.5, opts.step * 10)
    traj = CollapsedTrajectory(samples=samples, invariant0=inv0)
    if traj.max_drift > 1e-6 * scale0:
        logger.warning("collapsed invariant drift %.3e exceeds 1e-6 * scale", traj.max_drift)
    return traj


# --- export and analysis -------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Columns: s, cost, then per layer beta_gap, omega_norm, n_0..n_{Q-1}."""
    depth = traj.samples[0].state.depth
    q = traj.samples[0].state.dim
    cols = ["s", "cost"]
    for k in range(depth):
        cols += [f"layer{k}_beta_gap", f"layer{k}_omega_norm"]
        cols += [f"layer{k}_n{r}" for r in range(q)]
    lines = [",".join(cols)]
    for smp in traj.samples:
        row = [_fmt(smp.s), _fmt(smp.cost)]
        for diag in smp.per_layer:
            row += [_fmt(diag.beta_gap), _fmt(diag.omega_norm)]
            row += [str(int(c)) for c in diag.truncated_counts]
        lines.append(",".join(row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_events_csv(events: list[Event], path) -> None:
    lines = ["s,layer,cluster,point,coordinate,direction"]
    for ev in events:
        lines.append(
        f"{_fmt(ev.s)},{ev.layer},{ev.cluster},{ev.point},{ev.coordinate},{ev.direction}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_collapsed_csv(traj: CollapsedTrajectory, path) -> None:
    lines = ["s,cost,invariant_drift"]
    for smp in traj.samples:
        lines.append(f"{_fmt(smp.s)},{_fmt(smp.cost)},{_fmt(smp.invariant_drift)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fit_log_slope(ts: np.ndarray, values: np.ndarray) -> float | None:
    """Least-squares slope of log(values) over ts; None if degenerate."""
    keep = values > 1e-300
    if keep.sum() < 3:
        return None
    t, v = ts[keep], np.log(values[keep])
    if t[-1] - t[0] < 1e-12:
        return None
    a = np.vstack([t, np.ones_like(t)]).T
    slope, _ = np.linalg.lstsq(a, v, rcond=None)[0]
    return float(slope)


def fit_phase_exponents(traj: Trajectory, trailing: float = 0.5) -> list[dict]:
    """Per inter-event phase, fitted log slopes of cost and of each beta gap.

    Fits use the trailing fraction of each phase (default: trailing half),
    matching the piecewise-exponential structure of the flow.
    """
    ts = traj.times
    edges = [ts[0]] + sorted({ev.s for ev in traj.events}) + [ts[-1]]
    phases = []
    depth = traj.samples[0].state.depth
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi - lo <= 0:
            continue
        cut = hi - trailing * (hi - lo)
        sel = (ts >= cut - 1e-12) & (ts <= hi + 1e-12)
        sub = [smp for smp, keep in zip(traj.samples, sel) if keep]
        if len(sub) < 3:
            sel = (ts >= lo - 1e-12) & (ts <= hi + 1e-12)
            sub = [smp for smp, keep in zip(traj.samples, sel) if keep]
        tt = np.array([smp.s for smp in sub])
        phase = {
            "s_lo": float(lo),
            "s_hi": float(hi),
            "log_cost_slope": _fit_log_slope(tt, np.array([smp.cost for smp in sub])),
            "log_gap_slopes": [
                _fit_log_slope(tt, np.array([smp.per_layer[k].beta_gap for smp in sub]))
                for k in range(depth)
            ],
        }
        phases.append(phase)
    return phases


def freeze_time(traj: Trajectory, tol: float = 1e-10) -> float | None:
    """Earliest sample time after which every layer's Omega stays below tol."""
    norms = np.array([[d.omega_norm for d in smp.per_layer] for smp in traj.samples])
    quiet = np.all(norms <= tol, axis=1)
    if not quiet[-1]:
        return None
    idx = len(quiet) - 1
    while idx > 0 and quiet[idx - 1]:
        idx -= 1
    return float(traj.samples[idx].s)
