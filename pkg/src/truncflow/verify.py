"""Property suites behind the `verify` command: each suite exercises one
family of analytic claims at desk scale and reports worst discrepancies.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .flows import (
    CollapsedState,
    chained_projectors,
    effective_rhs,
    general_rhs,
    moment_form_rhs,
    one_dim_flow,
)
from .errors import NearKink, StepUnderflow
from .integrate import fit_phase_exponents, integrate_collapsed, integrate_effective, integrate_general
from .manifold import random_orthogonal
from .measures import TrainingSet
from .model import ModelState, chained_truncation, euclidean_cost
from .oracle import FDSettings, fd_grad_beta, fd_grad_rotation, reference_integrate
from .scenarios import make_one_dim_state, make_separated_config, state_from_arrays


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TRUNCFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _map_cases(fn, args_list):
    workers = _threads()
    if workers == 1:
        return [fn(a) for a in args_list]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args_list))


def _prop(name: str, worst: float, tol: float, cases: int) -> dict:
    return {
        "name": name,
        "passed": bool(worst <= tol),
        "worst": float(worst),
        "tolerance": float(tol),
        "cases": int(cases),
    }


def _suite(name: str, properties: list[dict]) -> dict:
    return {
        "suite": name,
        "passed": all(p["passed"] for p in properties),
        "properties": properties,
    }


def _random_state_and_data(q: int, n_max: int, rng: np.random.Generator):
    """Unstructured instance: mixed sectors likely, no separation guarantees."""
    depth = q
    rots = [random_orthogonal(q, rng).mat for _ in range(depth)]
    betas = [rng.normal(size=q) for _ in range(depth)]
    w = np.eye(q) + 0.2 * rng.normal(size=(q, q))
    ytil = rng.normal(size=(q, q))
    labels = (w @ ytil.T).T
    state = state_from_arrays(rots, betas, w, labels)
    clusters = [rng.normal(size=(int(rng.integers(2, n_max + 1)), q)) * 1.5 for _ in range(q)]
    return state, TrainingSet(clusters)


def gradients_suite(seed: int = 0, cases: int = 100,
                    effective_fn=effective_rhs, general_fn=general_rhs) -> dict:
    """Analytic velocities against central finite differences of the cost."""
    tol = 1e-5
    settings = FDSettings(step=1e-5)

    def rel(err: float, *norms: float) -> float:
        scale = max(norms)
        if scale < 1e-4:
            # both sides at the oracle's noise floor: nothing to resolve
            return 0.0
        return err / scale

    def effective_case(i):
        rng = np.random.default_rng((seed, 0, i))
        q = int(rng.integers(2, 5))
        state, data = make_separated_config(q, n_per=int(rng.integers(2, 9)), seed=int(rng.integers(2**31)))
        worst = 0.0
        for layer in range(state.depth):
            beta_dot, omega = effective_fn(state, data, layer)
            fd_b = fd_grad_beta(state, data, layer, settings)
            worst = max(worst, rel(np.linalg.norm(beta_dot + fd_b),
                                   np.linalg.norm(fd_b), np.linalg.norm(beta_dot)))
            fd_o = fd_grad_rotation(state, data, layer, settings=settings)
            worst = max(worst, rel(np.linalg.norm(omega.mat - fd_o.mat),
                                   np.linalg.norm(fd_o.mat), np.linalg.norm(omega.mat)))
        return worst

    def general_case(i):
        rng = np.random.default_rng((seed, 1, i))
        q = int(rng.integers(2, 5))
        state, data = _random_state_and_data(q, 8, rng)
        slopes = general_fn(state, data)
        worst = 0.0
        for layer in range(state.depth):
            try:
                fd_b = fd_grad_beta(state, data, layer, settings)
                fd_o = fd_grad_rotation(state, data, layer, settings=settings)
            except NearKink:
                return 0.0  # kink-adjacent draw; skipped, not forced
            beta_dot, omega = slopes[layer]
            worst = max(worst, rel(np.linalg.norm(beta_dot + fd_b),
                                   np.linalg.norm(fd_b), np.linalg.norm(beta_dot)))
            worst = max(worst, rel(np.linalg.norm(omega.mat - fd_o.mat),
                                   np.linalg.norm(fd_o.mat), np.linalg.norm(omega.mat)))
        return worst

    n_eff = max(1, cases // 2)
    n_gen = max(1, cases - n_eff)
    eff_worst = max(_map_cases(effective_case, range(n_eff)))
    gen_worst = max(_map_cases(general_case, range(n_gen)))
    return _suite("gradients", [
        _prop("effective_rhs_vs_fd", eff_worst, tol, n_eff),
        _prop("general_rhs_vs_fd", gen_worst, tol, n_gen),
    ])


def _integrate_transversal(integrator, state, data, s_end: float):
    """Back off s_end when the flow reaches a sliding (chattering) regime.

    A trajectory that ends pinned to an activation boundary is outside the
    transversal-crossing scope; the checked properties live on the portion
    before that, so the horizon is halved until integration completes.
    """
    while s_end >= 0.1:
        try:
            return integrator(state, data, s_end=s_end)
        except StepUnderflow:
            s_end *= 0.5
    return None


def monotonicity_suite(seed: int = 0, cases: int = 12) -> dict:
    """Cost decrease, the descent identity, and orthogonality preservation.

    Runs on separated configurations (lightly perturbed for the general
    flow), where sector crossings are transversal; horizons back off if a
    trajectory reaches a sliding configuration.
    """
    slack_worst = 0.0
    ortho_worst = 0.0
    descent_worst = 0.0
    checked = 0
    for i in range(cases):
        rng = np.random.default_rng((seed, 2, i))
        q = int(rng.integers(2, 4))
        state, data = make_separated_config(q, n_per=4, seed=int(rng.integers(2**31)))
        if i % 2 == 0:
            traj = _integrate_transversal(integrate_effective, state, data, 1.0)
            rhs_fn = lambda st: [effective_rhs(st, data, k) for k in range(st.depth)]
        else:
            layers = [
                lp.with_updates(beta=lp.beta + 0.05 * rng.normal(size=q))
                for lp in state.layers
            ]
            state = ModelState(layers, state.output_map, state.labels)
            traj = _integrate_transversal(integrate_general, state, data, 1.0)
            rhs_fn = lambda st: general_rhs(st, data)
        if traj is None:
            continue

        costs = traj.costs
        rises = np.diff(costs) - 1e-8 * (1.0 + costs[:-1])
        slack_worst = max(slack_worst, float(np.max(rises, initial=-np.inf)))
        for smp in traj.samples:
            for lp in smp.state.layers:
                ortho_worst = max(ortho_worst, lp.rotation.orthogonality_error())

        event_times = [ev.s for ev in traj.events]
        for frac in (0.3, 0.7):
            idx = int(frac * (len(traj.samples) - 1))
            smp = traj.samples[idx]
            if event_times and min(abs(smp.s - t) for t in event_times) < 1e-3:
                continue
            slopes = rhs_fn(smp.state)
            analytic = -sum(
                float(np.dot(bd, bd)) + float(np.sum(om.mat * om.mat)) for bd, om in slopes
            )
            h = 1e-5
            fwd = reference_integrate(rhs_fn, smp.state, h, step=h)
            back = reference_integrate(
                lambda st: [(-bd, type(om)(-om.mat)) for bd, om in rhs_fn(st)], smp.state, h, step=h
            )
            fd_rate = (euclidean_cost(fwd, data) - euclidean_cost(back, data)) / (2 * h)
            if abs(analytic) > 1e-8 and abs(fd_rate) > 1e-8:
                descent_worst = max(descent_worst, abs(fd_rate - analytic) / abs(analytic))
                checked += 1
    return _suite("monotonicity", [
        _prop("cost_non_increasing", slack_worst, 0.0, cases),
        _prop("orthogonality_drift", ortho_worst, 1e-8, cases),
        _prop("descent_identity", descent_worst, 1e-4, checked),
    ])


def conservation_suite(seed: int = 0, cases: int = 10, s_end: float = 5.0) -> dict:
    """Invariance of B B^T - W^T W along random collapsed flows."""
    worst = 0.0
    for i in range(cases):
        rng = np.random.default_rng((seed, 3, i))
        q = 3
        cs = CollapsedState(
            rng.normal(size=(q, q)), rng.normal(size=(q, q)), rng.normal(size=(q, q))
        )
        traj = integrate_collapsed(cs, s_end)
        scale = 1.0 + float(np.linalg.norm(traj.invariant0))
        worst = max(worst, traj.max_drift / scale)
    return _suite("conservation", [_prop("invariant_drift", worst, 1e-6, cases)])


def equivalence_suite(seed: int = 0) -> dict:
    """Three formula equivalences: per-point vs moment form, general vs
    separated form, and chained truncation vs its projector expansion."""
    rng = np.random.default_rng((seed, 4))
    moment_worst = 0.0
    for _ in range(500):
        q = int(rng.integers(2, 5))
        state, data = _random_state_and_data(q, 8, rng)
        for layer in range(state.depth):
            b1, o1 = effective_rhs(state, data, layer)
            b2, o2 = moment_form_rhs(state, data, layer)
            moment_worst = max(
                moment_worst,
                float(np.max(np.abs(b1 - b2))),
                float(np.max(np.abs(o1.mat - o2.mat))),
            )

    general_worst = 0.0
    for i in range(50):
        q = int(rng.integers(2, 5))
        state, data = make_separated_config(q, n_per=4, seed=int(rng.integers(2**31)))
        slopes = general_rhs(state, data)
        for layer in range(state.depth):
            b1, o1 = effective_rhs(state, data, layer)
            b2, o2 = slopes[layer]
            general_worst = max(
                general_worst,
                float(np.max(np.abs(b1 - b2))),
                float(np.max(np.abs(o1.mat - o2.mat))),
            )

    proj_worst = 0.0
    for _ in range(200):
        q = int(rng.integers(2, 5))
        state, _ = _random_state_and_data(q, 3, rng)
        x = rng.normal(size=q) * 2.0
        lo = int(rng.integers(0, state.depth))
        hi = int(rng.integers(lo, state.depth + 1))
        p_plus, p_minus = chained_projectors(state, x, lo, hi)
        recon = p_plus @ x
        for k, pm in zip(range(lo, hi), p_minus):
            recon = recon - pm @ state.layers[k].beta
        direct = chained_truncation(state.layers, x, lo, hi)
        proj_worst = max(proj_worst, float(np.max(np.abs(recon - direct))))

    return _suite("equivalence", [
        _prop("effective_vs_moment_form", moment_worst, 1e-12, 500),
        _prop("general_vs_effective_separated", general_worst, 1e-10, 50),
        _prop("chain_vs_projector_expansion", proj_worst, 1e-10, 200),
    ])


def oned_suite(seed: int = 0, cases: int = 10) -> dict:
    """The 1-D event ladder: crossing times and per-segment decay rates."""
    # canonical instance: points (1, 2), label 5, threshold starting at 1
    state, data = make_one_dim_state([1.0, 2.0], 5.0, 1.0)
    traj = integrate_effective(state, data, s_end=3.0)
    gap_expected = 2.0 * np.log(4.0 / 3.0)
    crossing = [ev.s for ev in traj.events if ev.direction == "entering"]
    gap_err = abs(crossing[0] - gap_expected) if crossing else np.inf

    rate_worst = 0.0
    phases = fit_phase_exponents(traj)
    expected = [0.5, 1.0]
    for phase, rate in zip(phases, expected):
        slope = phase["log_gap_slopes"][0]
        rate_worst = max(rate_worst, abs(-slope - rate) / rate if slope is not None else np.inf)

    closed_worst = 0.0
    rng = np.random.default_rng((seed, 5))
    for _ in range(cases):
        n = int(rng.integers(2, 7))
        points = np.sort(rng.uniform(-2.0, 2.0, size=n))
        while np.min(np.diff(points), initial=np.inf) < 1e-3:
            points = np.sort(rng.uniform(-2.0, 2.0, size=n))
        y = points[-1] + rng.uniform(1.0, 3.0)
        b0 = rng.uniform(points[0], points[-1])
        if min(abs(b0 - p) for p in points) < 1e-6:
            continue
        flow = one_dim_flow(points, y, b0, n)
        st, dt = make_one_dim_state(points, y, b0)
        tr = integrate_effective(st, dt, s_end=2.5)
        for smp in tr.samples[:: max(1, len(tr.samples) // 20)]:
            err = abs(smp.per_layer[0].beta_gap - flow.gap(smp.s))
            closed_worst = max(closed_worst, err / (1.0 + flow.gap(smp.s)))

    return _suite("oned", [
        _prop("ladder_crossing_gap", gap_err, 1e-6, 1),
        _prop("segment_rates_vs_n_over_N", rate_worst, 0.01, len(phases)),
        _prop("closed_form_vs_integrated", closed_worst, 1e-6, cases),
    ])


SUITES = {
    "gradients": gradients_suite,
    "monotonicity": monotonicity_suite,
    "conservation": conservation_suite,
    "equivalence": equivalence_suite,
    "oned": oned_suite,
}


def run_suites(names, seed: int = 0) -> dict:
    """Run the named suites (or all) and aggregate into one report."""
    if names == "all" or names == ["all"]:
        names = list(SUITES)
    elif isinstance(names, str):
        names = [names]
    results = [SUITES[name](seed=seed) for name in names]
    return {
        "seed": int(seed),
        "passed": all(r["passed"] for r in results),
        "suites": results,
    }
