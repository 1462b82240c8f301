"""Verification checks for flow axioms and transport identities.

Each check produces a CheckReport with an explicit error budget: it
passes iff

    statistic <= tolerance + 3 * std_error + bias_bound

and at most 1% of the ensemble was flagged during integration.  Every
check also has a constructed failure mode (`negative_control=True`)
that must fail; a check whose control passes is not measuring anything.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dynamics, transport
from .dynamics import IntegratorConfig, flow_batch, _forces, _energy_batch
from .errors import CoverageError, DomainError
from .potentials import (
    CONFINING_AT_ZERO,
    MollifierKernel,
    MollifiedPotential,
    ShrinkFunction,
)
from .profiles import bump, bump_prime
from .rng import rng_for
from .transport import (
    DT_BIAS_COEFFICIENT,
    Ensemble,
    EnergyCutoff,
    InitialDatum,
    PhaseBox,
    TestFunction,
    level_difference_series,
    random_test_function,
    sample_ensemble,
    weak_residual_suite,
)

FLAGGED_FRACTION_LIMIT = 0.01


@dataclass
class CheckReport:
    """Outcome of one verification check with its full error budget."""

    check_name: str
    potential: str
    seed: int
    sample_count: int
    statistic: float
    std_error: float
    bias_bound: float
    tolerance: float
    flagged_fraction: float
    passed: bool
    runtime_seconds: float
    details: dict = field(default_factory=dict)

    @staticmethod
    def build(
        check_name: str,
        potential: str,
        seed: int,
        sample_count: int,
        statistic: float,
        std_error: float,
        bias_bound: float,
        tolerance: float,
        flagged_fraction: float,
        runtime_seconds: float,
        details: dict | None = None,
    ) -> "CheckReport":
        passed = (
            statistic <= tolerance + 3.0 * std_error + bias_bound
            and flagged_fraction <= FLAGGED_FRACTION_LIMIT
        )
        return CheckReport(
            check_name=check_name,
            potential=potential,
            seed=seed,
            sample_count=sample_count,
            statistic=float(statistic),
            std_error=float(std_error),
            bias_bound=float(bias_bound),
            tolerance=float(tolerance),
            flagged_fraction=float(flagged_fraction),
            passed=passed,
            runtime_seconds=float(runtime_seconds),
            details=details or {},
        )

    def to_json_dict(self) -> dict:
        out = {
            "check_name": self.check_name,
            "potential": self.potential,
            "seed": self.seed,
            "N": self.sample_count,
            "statistic": self.statistic,
            "std_error": self.std_error,
            "bias_bound": self.bias_bound,
            "tolerance": self.tolerance,
            "flagged_fraction": self.flagged_fraction,
            "pass": self.passed,
            "runtime_seconds": self.runtime_seconds,
        }
        if self.details:
            out["details"] = _jsonable(self.details)
        return out

    def summary_line(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"{verdict}: {self.check_name} [{self.potential}] "
            f"statistic={self.statistic:.3e} "
            f"budget={self.tolerance + 3 * self.std_error + self.bias_bound:.3e}"
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_reports_jsonl(reports: Sequence[CheckReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_json_dict(), sort_keys=True) + "\n")


def write_summary_csv(reports: Sequence[CheckReport], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check_name", "potential", "N", "statistic", "tolerance", "pass"])
        for r in reports:
            writer.writerow(
                [
                    r.check_name,
                    r.potential,
                    r.sample_count,
                    f"{r.statistic:.17g}",
                    f"{r.tolerance:.17g}",
                    str(r.passed).lower(),
                ]
            )


# ---------------------------------------------------------------------------
# flow-axiom checks


def default_observable_for(potential, box: PhaseBox, seed: int) -> TestFunction:
    """Observable for the preservation check, adapted to the potential.

    For confining potentials the particle position supports tile the
    first axis with gaps, keeping the observable away from the
    coincidence set where probe energies diverge; otherwise a random
    product bump on a shrunken box is used.
    """
    if getattr(potential, "singularity_class", None) != CONFINING_AT_ZERO:
        mid = (box.highs + box.lows) / 2.0
        half = (box.highs - box.lows) / 2.0
        inner = PhaseBox(lows=mid - 0.6 * half, highs=mid + 0.6 * half, d=box.d, n=box.n)
        return random_test_function(
            box.d, box.n, inner, t_center=0.0, t_width=1.0,
            rng=rng_for(seed, "observable"),
        )
    n, d = box.n, box.d
    x_half = float((box.highs[0] - box.lows[0]) / 2.0)
    v_half = float((box.highs[n * d] - box.lows[n * d]) / 2.0)
    spacing = 1.6 * x_half / n
    centers = np.zeros(2 * n * d)
    widths = np.empty(2 * n * d)
    widths[: n * d] = 0.4 * x_half
    widths[n * d :] = 0.6 * v_half
    for i in range(n):
        centers[i * d] = -0.8 * x_half + spacing * (i + 0.5)
        widths[i * d] = 0.3 * spacing
    return TestFunction(
        d=d, n=n, t_center=0.0, t_width=1.0, centers=centers, widths=widths
    )


def _control_icfg(icfg: IntegratorConfig, negative_control: bool) -> IntegratorConfig:
    """Controls dissipate 1% of velocity per step, which no measure
    preserving, energy conserving flow can survive."""
    if not negative_control:
        return icfg
    return replace(icfg, velocity_damping=0.99)


def _require_preimage_coverage(
    phi: TestFunction, box: PhaseBox, potential, t: float, icfg: IntegratorConfig,
    seed: int, probes: int = 10_000, margin: float = 0.01,
) -> None:
    """Flow supp phi backward; if any probe leaves (or hugs) the sampling
    box, mass could enter supp phi from outside the box and the
    preservation statistic would be biased."""
    rng = rng_for(seed, "coverage-probes")
    lo, hi = phi.support_bounds()
    z = lo + rng.random((probes, lo.size)) * (hi - lo)
    nd = box.n * box.d
    x = z[:, :nd].reshape(probes, box.n, box.d)
    v = z[:, nd:].reshape(probes, box.n, box.d)
    bx, bv, flags = flow_batch(x, v, potential, -t, icfg)
    back = np.concatenate([bx.reshape(probes, -1), bv.reshape(probes, -1)], axis=1)
    pad = margin * (box.highs - box.lows)
    ok = flags == dynamics.FLAG_OK
    inside = np.all(back[ok] > box.lows + pad, axis=1) & np.all(
        back[ok] < box.highs - pad, axis=1
    )
    if not np.all(inside):
        raise CoverageError(
            "preimage of the observable support leaves the sampling box; "
            "enlarge the box or shorten the horizon"
        )


def check_measure_preservation(
    potential,
    box: PhaseBox,
    t: float,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    phi: TestFunction | None = None,
    tolerance: float = 0.0,
    negative_control: bool = False,
) -> CheckReport:
    """Flow invariance of integrals of a fixed observable.

    Samples z uniform in box; compares sum w phi(Y(t, z)) with
    sum w phi(z).  The default observable lives on a shrunken box so
    that its backward image can stay inside the sampling box, which
    _require_preimage_coverage verifies by flowing probe points
    backward.  Control: velocity damping contracts phase volume.
    """
    started = time.perf_counter()
    run_icfg = _control_icfg(icfg, negative_control)
    if phi is None:
        phi = default_observable_for(potential, box, seed)
    if (
        getattr(potential, "singularity_class", None) == CONFINING_AT_ZERO
        and phi.min_support_pair_distance() < 1e-3
    ):
        raise CoverageError(
            "observable support reaches the coincidence set of a confining"
            " potential; pass a phi with separated particle supports"
        )
    _require_preimage_coverage(phi, box, potential, t, run_icfg, seed)
    datum = InitialDatum(kind="constant", center=np.zeros(2 * box.n * box.d), width=1.0)
    e0 = sample_ensemble(box, count, datum, seed)
    e1 = transport.push_forward(e0, potential, t, run_icfg)
    before = phi.value(phi.t_center, e0.x, e0.v)
    after = phi.value(phi.t_center, e1.x, e1.v)
    ok = e1.flags == dynamics.FLAG_OK
    xi = np.where(ok, e0.weights * (after - before), 0.0)
    statistic = abs(float(np.sum(xi)))
    se = float(np.std(xi, ddof=1) * math.sqrt(count))
    bias = DT_BIAS_COEFFICIENT * run_icfg.dt**2 * float(
        np.sum(np.abs(np.where(ok, e0.weights * after, 0.0)))
    )
    return CheckReport.build(
        check_name="measure_preservation"
        + ("_control" if negative_control else ""),
        potential=potential.describe(),
        seed=seed,
        sample_count=count,
        statistic=statistic,
        std_error=se,
        bias_bound=bias,
        tolerance=tolerance,
        flagged_fraction=float(np.mean(~ok)),
        runtime_seconds=time.perf_counter() - started,
        details={"t": t, "observable_center": phi.centers.tolist()},
    )


def check_time_continuity(
    potential,
    box: PhaseBox,
    t: float,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    delta_steps: int = 10,
    tolerance: float = 1.05,
    energy_quantile: float = 0.9,
    negative_control: bool = False,
) -> CheckReport:
    """Difference quotients of t -> Y(t, z) stay below the phase speed.

    At resolution delta = delta_steps * dt the displacement
    |Y(t + delta) - Y(t)| of every selected sample must not exceed
    delta times the larger of its endpoint phase speeds |(v, a)|, up to
    the stated tolerance factor for speed variation along the way.
    Control: a positional jump is injected between the two snapshots,
    which no continuous-in-time flow can produce.
    """
    started = time.perf_counter()
    delta = delta_steps * icfg.dt
    datum = InitialDatum(kind="constant", center=np.zeros(2 * box.n * box.d), width=1.0)
    e0 = sample_ensemble(box, count, datum, seed)
    energies = _energy_batch(e0.x, e0.v, potential)
    m_level = float(np.quantile(energies, energy_quantile))
    xa, va, fla = flow_batch(e0.x, e0.v, potential, t, icfg)
    xb, vb, flb = flow_batch(xa, va, potential, delta, icfg)
    if negative_control:
        xb = xb + 0.5
    ok = (fla == dynamics.FLAG_OK) & (flb == dynamics.FLAG_OK)

    def phase_speed(x, v):
        acc, _ = _forces(x, potential)
        return np.sqrt(np.sum(v**2, axis=(1, 2)) + np.sum(acc**2, axis=(1, 2)))

    move = np.sqrt(np.sum((xb - xa) ** 2, axis=(1, 2)) + np.sum((vb - va) ** 2, axis=(1, 2)))
    speed = np.maximum(phase_speed(xa, va), phase_speed(xb, vb))
    selected = ok & (energies < m_level) & (speed > 0)
    ratio = move[selected] / (delta * speed[selected])
    statistic = float(np.max(ratio)) if np.any(selected) else math.inf
    return CheckReport.build(
        check_name="time_continuity" + ("_control" if negative_control else ""),
        potential=potential.describe(),
        seed=seed,
        sample_count=count,
        statistic=statistic,
        std_error=0.0,
        bias_bound=0.0,
        tolerance=tolerance,
        flagged_fraction=float(np.mean(~ok)),
        runtime_seconds=time.perf_counter() - started,
        details={"t": t, "delta": delta, "energy_level": m_level},
    )


def check_group_property(
    potential,
    box: PhaseBox,
    s: float,
    t: float,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    tolerance: float = 1e-6,
    energy_quantile: float = 0.9,
    negative_control: bool = False,
) -> CheckReport:
    """Composition law Y(t + s, z) = Y(t, Y(s, z)) below an energy level.

    The comparison is restricted to samples whose initial energy lies
    below the given quantile, matching the truncated form in which the
    law holds almost everywhere.  Control: a velocity kick after every
    flow invocation; composing applies it twice.
    """
    started = time.perf_counter()
    datum = InitialDatum(kind="constant", center=np.zeros(2 * box.n * box.d), width=1.0)
    e0 = sample_ensemble(box, count, datum, seed)
    kick = 0.05 if negative_control else 0.0

    def flow(x, v, dt_total):
        fx, fv, fl = flow_batch(x, v, potential, dt_total, icfg)
        if kick:
            fv = fv + kick
        return fx, fv, fl

    x_direct, v_direct, fl_direct = flow(e0.x, e0.v, s + t)
    x_mid, v_mid, fl_mid = flow(e0.x, e0.v, s)
    x_comp, v_comp, fl_comp = flow(x_mid, v_mid, t)
    flags = np.maximum(np.maximum(fl_direct, fl_mid), fl_comp)
    ok = flags == dynamics.FLAG_OK

    energies = _energy_batch(e0.x, e0.v, potential)
    m_level = float(np.quantile(energies, energy_quantile))
    selected = ok & (energies < m_level)
    gap = np.maximum(
        np.max(np.abs(x_comp - x_direct), axis=(1, 2)),
        np.max(np.abs(v_comp - v_direct), axis=(1, 2)),
    )
    statistic = float(np.max(gap[selected])) if np.any(selected) else math.inf
    return CheckReport.build(
        check_name="group_property" + ("_control" if negative_control else ""),
        potential=potential.describe(),
        seed=seed,
        sample_count=count,
        statistic=statistic,
        std_error=0.0,
        bias_bound=0.0,
        tolerance=tolerance,
        flagged_fraction=float(np.mean(~ok)),
        runtime_seconds=time.perf_counter() - started,
        details={"s": s, "t": t, "energy_level": m_level},
    )


def check_energy_invariance(
    potential,
    box: PhaseBox,
    t: float,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    tolerance: float = 1e-4,
    energy_quantile: float = 0.9,
    negative_control: bool = False,
) -> CheckReport:
    """Worst relative energy drift along the flow below an energy level.

    Control: velocity damping bleeds kinetic energy.
    """
    started = time.perf_counter()
    run_icfg = _control_icfg(icfg, negative_control)
    datum = InitialDatum(kind="constant", center=np.zeros(2 * box.n * box.d), width=1.0)
    e0 = sample_ensemble(box, count, datum, seed)
    e_before = _energy_batch(e0.x, e0.v, potential)
    e1 = transport.push_forward(e0, potential, t, run_icfg)
    e_after = _energy_batch(e1.x, e1.v, potential)
    ok = e1.flags == dynamics.FLAG_OK
    m_level = float(np.quantile(e_before, energy_quantile))
    selected = ok & (e_before < m_level)
    drift = np.abs(e_after - e_before) / np.maximum(1.0, np.abs(e_before))
    statistic = float(np.max(drift[selected])) if np.any(selected) else math.inf
    return CheckReport.build(
        check_name="energy_invariance" + ("_control" if negative_control else ""),
        potential=potential.describe(),
        seed=seed,
        sample_count=count,
        statistic=statistic,
        std_error=0.0,
        bias_bound=0.0,
        tolerance=tolerance,
        flagged_fraction=float(np.mean(~ok)),
        runtime_seconds=time.perf_counter() - started,
        details={"t": t, "energy_level": m_level},
    )


def check_weak_ode(
    potential,
    box: PhaseBox,
    t_final: float,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    tolerance: float = 1e-4,
    energy_quantile: float = 0.9,
    nodes: int = 129,
    negative_control: bool = False,
) -> CheckReport:
    """Distributional form of dY/dt = B(Y) against a smooth time bump.

    Integrating by parts, int (Y chi' + B(Y) chi) dt must vanish for
    every chi compactly supported in (0, t_final); the check integrates
    one bump per sample with composite Simpson and takes the worst
    component, restricted below an energy level.  The statistic also
    absorbs the initial-identity defect max |Y(0, z) - z|.  Control:
    velocity damping makes trajectories solve a different ODE.
    """
    started = time.perf_counter()
    run_icfg = _control_icfg(icfg, negative_control)
    datum = InitialDatum(kind="constant", center=np.zeros(2 * box.n * box.d), width=1.0)
    e0 = sample_ensemble(box, count, datum, seed)
    energies = _energy_batch(e0.x, e0.v, potential)
    m_level = float(np.quantile(energies, energy_quantile))
    x0, v0, _ = flow_batch(e0.x, e0.v, potential, 0.0, run_icfg)
    identity_defect = max(
        float(np.max(np.abs(x0 - e0.x))), float(np.max(np.abs(v0 - e0.v)))
    )

    t_mid, t_half = t_final / 2.0, t_final / 2.0
    if nodes < 5 or (nodes - 1) % 4 != 0:
        raise DomainError("node count must be 4 m + 1")
    times = np.linspace(0.0, t_final, nodes)
    w_full = transport.simpson_weights(nodes, 0.0, t_final)
    w_half = transport.simpson_weights((nodes + 1) // 2, 0.0, t_final)
    defect = np.zeros((count, 2, box.n, box.d))
    defect_half = np.zeros_like(defect)
    ok = np.ones(count, dtype=bool)
    x, v = e0.x, e0.v
    prev_t = 0.0
    for k, tk in enumerate(times):
        x, v, flags = flow_batch(x, v, potential, tk - prev_t, run_icfg)
        prev_t = tk
        ok &= flags == dynamics.FLAG_OK
        u = (tk - t_mid) / t_half
        chi = float(bump(np.asarray(u)))
        chi_p = float(bump_prime(np.asarray(u))) / t_half
        forces, _ = _forces(x, potential)
        term = np.stack([x * chi_p + v * chi, v * chi_p + forces * chi], axis=1)
        defect += w_full[k] * term
        if k % 2 == 0:
            defect_half += w_half[k // 2] * term
    selected = ok & (energies < m_level)
    per_sample = np.max(np.abs(defect), axis=(1, 2, 3))
    per_half = np.max(np.abs(defect - defect_half), axis=(1, 2, 3))
    statistic = float(np.max(per_sample[selected])) if np.any(selected) else math.inf
    statistic = max(statistic, identity_defect)
    quad_err = float(np.max(per_half[selected])) / 15.0 if np.any(selected) else 0.0
    return CheckReport.build(
        check_name="weak_ode" + ("_control" if negative_control else ""),
        potential=potential.describe(),
        seed=seed,
        sample_count=count,
        statistic=statistic,
        std_error=quad_err,
        bias_bound=0.0,
        tolerance=tolerance,
        flagged_fraction=float(np.mean(~ok)),
        runtime_seconds=time.perf_counter() - started,
        details={
            "t_final": t_final,
            "nodes": nodes,
            "energy_level": m_level,
            "initial_identity_defect": identity_defect,
        },
    )


def flow_axiom_suite(
    potential,
    box: PhaseBox,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    t: float = 1.0,
    group_tolerance: float = 1e-6,
    energy_tolerance: float = 1e-4,
    ode_tolerance: float = 1e-4,
    observable: TestFunction | None = None,
    measure_t: float | None = None,
    measure_count: int | None = None,
    with_controls: bool = True,
) -> list[CheckReport]:
    """The four flow-axiom checks, plus their negative controls.

    The preservation check may use its own horizon and sample count
    (shorter and larger, respectively): its power comes from how many
    samples visit the observable support, while the other checks are
    per-sample statements.
    """
    m_t = t if measure_t is None else measure_t
    m_count = count if measure_count is None else measure_count
    reports = []
    for control in [False] + ([True] if with_controls else []):
        reports += [
            check_time_continuity(
                potential, box, 0.5 * t, count, seed, icfg, negative_control=control
            ),
            check_measure_preservation(
                potential, box, m_t, m_count, seed, icfg, phi=observable,
                negative_control=control,
            ),
            check_group_property(
                potential, box, 0.4 * t, 0.6 * t, count, seed, icfg,
                tolerance=group_tolerance, negative_control=control,
            ),
            check_energy_invariance(
                potential, box, t, count, seed, icfg,
                tolerance=energy_tolerance, negative_control=control,
            ),
            check_weak_ode(
                potential, box, t, count, seed, icfg,
                tolerance=ode_tolerance, negative_control=control,
            ),
        ]
    return reports


# ---------------------------------------------------------------------------
# mollification convergence


def check_mollification_cauchy(
    base,
    kernel: MollifierKernel,
    shrink: ShrinkFunction,
    box: PhaseBox,
    t: float,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    levels: Sequence[int] = (3, 4, 5, 6),
    alt_kernel: MollifierKernel | None = None,
    negative_control: bool = False,
) -> list[CheckReport]:
    """Flows under consecutive regularization levels form a Cauchy sequence.

    Gap g_n = mean |Y_{n+1}(t,z) - Y_n(t,z)| must be non-increasing in n
    (first report), and at the finest level the flow must not depend on
    the kernel: switching to alt_kernel moves it by at most twice the
    finest gap (second report).  Control: a damped flow at the finest
    level breaks the gap ordering.
    """
    started = time.perf_counter()
    datum = InitialDatum(kind="constant", center=np.zeros(2 * box.n * box.d), width=1.0)
    e0 = sample_ensemble(box, count, datum, seed)
    if alt_kernel is None:
        alt_kernel = MollifierKernel(d=kernel.d, power=kernel.power + 2)

    ends = []
    flags_all = np.zeros(count, dtype=np.int8)
    for pos, lvl in enumerate(levels):
        run_icfg = icfg
        if negative_control and pos == len(levels) - 1:
            run_icfg = replace(icfg, velocity_damping=0.99)
        pot = MollifiedPotential(base, kernel, shrink, lvl)
        fx, fv, fl = flow_batch(e0.x, e0.v, pot, t, run_icfg)
        ends.append((fx, fv))
        flags_all = np.maximum(flags_all, fl)
    ok = flags_all == dynamics.FLAG_OK

    def phase_dist(a, b):
        return np.sqrt(
            np.sum((a[0] - b[0]) ** 2, axis=(1, 2)) + np.sum((a[1] - b[1]) ** 2, axis=(1, 2))
        )

    gaps = [phase_dist(ends[i], ends[i + 1]) for i in range(len(ends) - 1)]
    diffs = []
    diff_ses = []
    for i in range(len(gaps) - 1):
        delta = gaps[i + 1][ok] - gaps[i][ok]
        diffs.append(float(np.mean(delta)))
        diff_ses.append(float(np.std(delta, ddof=1) / math.sqrt(delta.size)))
    worst = int(np.argmax(diffs))
    flagged = float(np.mean(~ok))
    elapsed = time.perf_counter() - started
    cauchy = CheckReport.build(
        check_name="mollification_cauchy" + ("_control" if negative_control else ""),
        potential=base.describe(),
        seed=seed,
        sample_count=count,
        statistic=diffs[worst],
        std_error=diff_ses[worst],
        bias_bound=0.0,
        tolerance=0.0,
        flagged_fraction=flagged,
        runtime_seconds=elapsed,
        details={
            "levels": list(levels),
            "gap_means": [float(np.mean(g[ok])) for g in gaps],
        },
    )

    started = time.perf_counter()
    pot_alt = MollifiedPotential(base, alt_kernel, shrink, levels[-1])
    ax, av, afl = flow_batch(e0.x, e0.v, pot_alt, t, icfg)
    ok2 = ok & (afl == dynamics.FLAG_OK)
    kernel_gap = phase_dist(ends[-1], (ax, av))[ok2]
    finest_gap = float(np.mean(gaps[-1][ok2]))
    stat = float(np.mean(kernel_gap))
    se = float(np.std(kernel_gap, ddof=1) / math.sqrt(kernel_gap.size))
    independence = CheckReport.build(
        check_name="mollification_kernel_independence",
        potential=base.describe(),
        seed=seed,
        sample_count=count,
        statistic=stat,
        std_error=se,
        bias_bound=0.0,
        tolerance=2.0 * finest_gap,
        flagged_fraction=float(np.mean(~ok2)),
        runtime_seconds=time.perf_counter() - started,
        details={
            "level": levels[-1],
            "kernel_powers": [kernel.power, alt_kernel.power],
            "finest_gap": finest_gap,
        },
    )
    return [cauchy, independence]


# ---------------------------------------------------------------------------
# renormalization residual suite


def check_renormalization_suite(
    potential,
    box: PhaseBox,
    datum: InitialDatum,
    betas: Sequence[transport.BetaFunction],
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    phi: TestFunction | None = None,
    nodes: int = 65,
    negative_control: bool = False,
) -> list[CheckReport]:
    """Weak residual of f and of beta(f) for each shipped renormalizer.

    One ensemble pass serves the identity map and all betas.  Control:
    the carried values gain a smooth time-dependent factor, which no
    transported density can have.
    """
    started = time.perf_counter()
    if phi is None:
        phi = random_test_function(
            box.d, box.n, box,
            t_center=1.0, t_width=0.8, rng=rng_for(seed, "residual-phi"),
        )
    e0 = sample_ensemble(box, count, datum, seed)
    times = transport.simpson_times(phi, nodes)
    a, _ = transport.residual_window(phi)
    series = transport.evolve_series_iter(e0, potential, times, icfg)
    if negative_control:
        series = (
            e.with_values((1.0 + 3.0 * (e.time - a)) * e.values) for e in series
        )
    maps = [None] + list(betas)
    results = weak_residual_suite(
        series, potential, phi, maps, count=nodes, step_size=icfg.dt
    )
    elapsed = time.perf_counter() - started
    names = ["identity"] + [b.name for b in betas]
    suffix = "_control" if negative_control else ""
    reports = []
    for name, r in zip(names, results):
        reports.append(
            CheckReport.build(
                check_name=f"renormalized_residual[{name}]" + suffix,
                potential=potential.describe(),
                seed=seed,
                sample_count=r.sample_count,
                statistic=abs(r.estimate),
                std_error=r.std_error,
                bias_bound=r.bias_bound,
                tolerance=0.0,
                flagged_fraction=r.details.get("flagged_fraction", 0.0),
                runtime_seconds=elapsed / len(names),
                details=r.details,
            )
        )
    return reports


# ---------------------------------------------------------------------------
# uniqueness functional monotonicity


def check_uniqueness_monotone(
    base,
    kernel: MollifierKernel,
    shrink: ShrinkFunction,
    box: PhaseBox,
    datum: InitialDatum,
    level_pair: tuple[int, int],
    horizon: float,
    count: int,
    seed: int,
    icfg: IntegratorConfig,
    radius: float = 6.0,
    times_count: int = 10,
    beta: transport.BetaFunction | None = None,
    negative_control: bool = False,
) -> CheckReport:
    """The cutoff functional of beta(solution difference) never increases.

    h(t) = beta(f_a(t) - f_b(t)) rides the level-a flow, with f_b
    reconstructed by flowing backward at level b; F(t) integrates h
    against the contracting energy cutoff.  Increments of F must stay
    within 3 sigma plus an O(dt^2) integration tolerance restricted to
    samples whose round trip touches the datum support (elsewhere h
    vanishes identically at both endpoints).  Snapshot times snap to
    the integrator grid so that for identical levels the backward run
    retraces the forward one exactly and F is zero to roundoff.
    Control: a source term growing linearly in time is injected into h,
    which no difference of transported solutions can produce.
    """
    started = time.perf_counter()
    if beta is None:
        beta = transport.nonneg_squash(0.5)
    if datum.support_bounds() is None:
        raise DomainError("uniqueness check needs a compactly supported datum")
    e0 = sample_ensemble(box, count, datum, seed)
    stride = max(1, round(horizon / (times_count - 1) / icfg.dt))
    times = icfg.dt * stride * np.arange(times_count)
    horizon = float(times[-1])

    def make(lvl: int) -> MollifiedPotential:
        return MollifiedPotential(base, kernel, shrink, lvl)

    series, disps = level_difference_series(
        e0, make, level_pair[0], level_pair[1], beta, times, icfg
    )
    if negative_control:
        series = [
            e.with_values(e0.values * (1.0 + 60.0 * e.time)) for e in series
        ]
    pot = make(level_pair[0])
    cutoff = EnergyCutoff.for_potential(base, box.n, radius=radius, horizon=horizon)
    F = np.empty(times_count)
    SE = np.empty(times_count)
    biases = np.empty(times_count)
    xis = np.empty((times_count, count))
    lip = beta.lipschitz * datum.lipschitz_bound()
    lo, hi = datum.support_bounds()
    z0 = e0.phase_flat()
    f_a = e0.values
    for k, e in enumerate(series):
        phi_vals = cutoff.value_batch(times[k], e.x, e.v, pot)
        xi = np.where(e.active, e.weights * e.values * phi_vals, 0.0)
        xis[k] = xi
        F[k] = float(np.sum(xi))
        SE[k] = float(np.std(xi, ddof=1) * math.sqrt(e.size))
        near = (f_a > 0.0) | (
            np.all(
                np.abs(z0 - (lo + hi) / 2.0) < (hi - lo) / 2.0 + disps[k][:, None],
                axis=1,
            )
        )
        capacity = float(np.sum(np.where(e.active & near, e.weights * phi_vals, 0.0)))
        biases[k] = DT_BIAS_COEFFICIENT * icfg.dt**2 * (
            lip * capacity + float(np.sum(np.abs(xi)))
        )
    increments = F[1:] - F[:-1]
    # the same samples carry every node, so the increment noise is the
    # spread of the per-sample differences, not of the nodes separately
    deltas = xis[1:] - xis[:-1]
    inc_se = np.std(deltas, axis=1, ddof=1) * math.sqrt(count)
    inc_bias = biases[1:] + biases[:-1]
    margins = increments - 3.0 * inc_se - inc_bias
    worst = int(np.argmax(margins))
    flagged = max(e.flagged_fraction for e in series)
    return CheckReport.build(
        check_name="uniqueness_monotone" + ("_control" if negative_control else ""),
        potential=base.describe(),
        seed=seed,
        sample_count=count,
        statistic=float(increments[worst]),
        std_error=float(inc_se[worst]),
        bias_bound=float(inc_bias[worst]),
        tolerance=0.0,
        flagged_fraction=flagged,
        runtime_seconds=time.perf_counter() - started,
        details={
            "levels": list(level_pair),
            "functional": F.tolist(),
            "std_errors": SE.tolist(),
        },
    )
