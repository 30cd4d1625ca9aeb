"""Run one command of an ExperimentConfig and persist the resulting RunRecord.

Every command fills three parts of the record: `outputs` (JSON-ready numbers),
`tables` (per-node or per-sweep-point rows, written as CSV) and `assertions`
(named pass/fail flags). Timings stay in memory and are logged, never written,
so identical configs give byte-identical files.
"""
import csv
import json
import logging
import math
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from solitonforge import __version__
from solitonforge.ale_model import ale_coefficient, calabi_profile, decay_exponent
from solitonforge.config import ExperimentConfig, WeightSpec
from solitonforge.drift_operator import (
    barrier_check,
    forward_norm_sweep,
    inverse_norm_sweep,
    maximum_principle_check,
)
from solitonforge.exceptions import OutputError, SolitonError
from solitonforge.glue import (
    build_glued,
    error_components,
    error_norm,
    error_norm_sweep,
    expected_exponent,
    fit_exponent,
    glued_grid,
    transition_estimates,
)
from solitonforge.models import Grid, RunRecord, SolitonProfile
from solitonforge.radial_soliton import (
    asymptote_neg,
    cigar_profile,
    derivative_bounds,
    family_identity_error,
    neg_correction_rate,
    pos_correction_coefficient,
    pos_correction_rate,
    soliton_residual,
    solve_profile,
)
from solitonforge.sampling import gaussian_bumps, make_rng
from solitonforge.soliton_newton import (
    certify,
    certify_sweep,
    converged_metric,
    convexity_check,
    convexity_depth,
    decay_rate,
    family_compare,
    multistart,
    newton_solve,
)

logger = logging.getLogger(__name__)

DECAY_DELTAS = (0.25, 0.5, 0.75, 0.9)
# the barrier and maximum-principle runs stay where phi_t is not below roundoff
BARRIER_WINDOW = (-6.0, 20.0)
NEG_END = -8.0


def _columns(**columns: np.ndarray) -> tuple:
    header = list(columns)
    rows = np.column_stack([np.asarray(v, dtype=float) for v in columns.values()]).tolist()
    return header, rows


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.tolerances = config.tolerances()
        self.record = RunRecord(config=config.echo(), version=__version__)
        self.handlers: Dict[str, Callable[[], None]] = {
            "cao": self.run_cao,
            "ale": self.run_ale,
            "glue": self.run_glue,
            "error-scan": self.run_error_scan,
            "invert-scan": self.run_invert_scan,
            "newton": self.run_newton,
            "verify-all": self.run_verify_all,
        }

    def run(self) -> RunRecord:
        command = self.config.command
        logger.info(f"Running {command} (n={self.config.n}, seed={self.config.seed})")
        start = time.perf_counter()
        try:
            self.handlers[command]()
        except SolitonError as e:
            logger.error(f"{command} failed: {str(e)}")
            self.record.failed = True
            self.record.outputs["error"] = {"type": type(e).__name__, "message": str(e)}
        self.record.timings[command] = time.perf_counter() - start
        failing = sorted(name for name, ok in self.record.assertions.items() if not ok)
        if failing:
            logger.warning(f"Failed assertions: {', '.join(failing)}")
        logger.info(f"{command} finished in {self.record.timings[command]:.2f}s")
        return self.record

    def _assert(self, name: str, ok: bool) -> None:
        self.record.assertions[name] = bool(ok)

    def _grid(self, h: Optional[float] = None) -> Grid:
        return Grid.uniform(self.config.t_min, self.config.t_max, h or self.config.h)

    def _spec(self, gamma: Optional[float] = None) -> WeightSpec:
        c = self.config
        return WeightSpec(gamma=c.gamma if gamma is None else gamma, delta=c.delta).check(c.n)

    # cao

    def profile_checks(self, p: SolitonProfile, key: str) -> Dict[str, Any]:
        residual = soliton_residual(p.metric(), p.n)
        sup_phi_t, sup_phi_tt = derivative_bounds(p)
        out: Dict[str, Any] = {
            "family_identity_error": family_identity_error(p),
            "residual_spread": float(np.max(residual) - np.min(residual)),
            "sup_phi_t": sup_phi_t,
            "sup_phi_tt": sup_phi_tt,
        }
        self._assert(f"{key}.family_identity", out["family_identity_error"] < 1e-12)
        self._assert(f"{key}.residual_constant", out["residual_spread"] < 1e-11)
        self._assert(f"{key}.phi_t_below_n", sup_phi_t <= p.n)
        if p.n == 1:
            out["cigar_error"] = float(np.max(np.abs(p.phi_t - cigar_profile(p.a, p.grid).phi_t)))
            self._assert(f"{key}.cigar", out["cigar_error"] < 1e-12)
        out.update(self.asymptotic_rates(p, key))
        self.record.outputs[key] = out
        return out

    def asymptotic_rates(self, p: SolitonProfile, key: str) -> Dict[str, float]:
        out: Dict[str, float] = {"neg_rate": neg_correction_rate(p.n, p.a, tolerances=self.tolerances)}
        expected = 2.0 if p.a == 0 else float(p.n)
        self._assert(f"{key}.neg_rate", abs(out["neg_rate"] - expected) <= 0.15 * expected)
        t = p.grid.nodes
        neg = t <= NEG_END
        if np.any(neg):
            out["neg_asymptote_error"] = float(np.max(np.abs(p.phi[neg] - asymptote_neg(p.n, p.a, t[neg]))))
        if p.n >= 2:
            out["pos_rate"] = pos_correction_rate(p.n, p.a, tolerances=self.tolerances)
            self._assert(f"{key}.pos_rate", abs(out["pos_rate"] - 1.0) <= 0.15)
            out["pos_coefficient"] = pos_correction_coefficient(p.n, p.a, tolerances=self.tolerances)
            expected = (p.n - 1) ** 2 / p.n
            self._assert(f"{key}.pos_coefficient", abs(out["pos_coefficient"] - expected) <= 0.02 * expected)
        return out

    def run_cao(self) -> None:
        c = self.config
        p = solve_profile(c.n, c.a, self._grid(), self.tolerances)
        self.profile_checks(p, "cao")
        residual = soliton_residual(p.metric(), p.n)
        self.record.tables["profile"] = _columns(t=p.grid.nodes, phi=p.phi, phi_t=p.phi_t, residual=residual)

    # ale

    def ale_checks(self, n: int, key: str) -> None:
        p = calabi_profile(n, self._grid())
        expected = 2.0 - 2.0 * n
        fitted = decay_exponent(p)
        self.record.outputs[key] = {"A": ale_coefficient(n), "tail_constant": p.tail_constant, "decay_exponent": fitted}
        self._assert(f"{key}.decay_exponent", abs(fitted - expected) <= 0.15 * abs(expected))
        if key == "ale":
            self.record.tables["ale"] = _columns(t=p.grid.nodes, u=p.u, u_t=p.u_t, potential=p.potential)

    def run_ale(self) -> None:
        self.ale_checks(self.config.n, "ale")

    # glue

    def run_glue(self) -> None:
        c = self.config
        spec = self._spec()
        gd = build_glued(c.n, c.eps, glued_grid(c.eps, c.h, c.t_far), spec, tolerances=self.tolerances)
        estimates = transition_estimates(gd)
        self.record.outputs["glue"] = {
            "eps": c.eps,
            "r_eps": gd.r_eps,
            "transition_estimates": list(estimates),
            "error_norm": error_norm(gd, spec),
            "error_components": error_components(gd, spec),
        }
        self.record.tables["glued"] = _columns(t=gd.grid.nodes, u_eps=gd.u_eps, u_eps_t=gd.u_eps_t, f_eps=gd.f_eps)

    # sweeps

    def error_scan(self, spec: WeightSpec, key: str) -> None:
        c = self.config
        rows = error_norm_sweep(c.n, spec, c.eps_list, c.h, c.t_far, c.jobs, self.tolerances)
        fitted = fit_exponent([row[0] for row in rows], [row[2] for row in rows])
        expected = expected_exponent(c.n, spec.gamma)
        passed = abs(fitted - expected) <= 0.1 * expected
        self.record.outputs[key] = {"fitted_exponent": fitted, "expected": expected, "pass": passed}
        self.record.tables[key] = (["eps", "r_eps", "value"], [list(row) for row in rows])
        self._assert(f"{key}.exponent", passed)

    def run_error_scan(self) -> None:
        self.error_scan(self._spec(), "error_scan")

    def invert_scan(self, spec: WeightSpec, key: str) -> None:
        c = self.config
        rows = inverse_norm_sweep(
            c.n, spec, c.eps_list, c.probes, c.seed, c.h, c.t_far, c.jobs, tolerances=self.tolerances
        )
        forward = forward_norm_sweep(c.n, spec, c.eps_list, c.probes, c.seed, c.h, c.t_far, c.jobs, self.tolerances)
        # contrast run at the critical weight exponent 0
        critical = inverse_norm_sweep(
            c.n, spec, c.eps_list, c.probes, c.seed, c.h, c.t_far, c.jobs, gamma=0.0, tolerances=self.tolerances
        )
        drift = np.array([row["drift"] for row in rows])
        plain = np.array([row["plain"] for row in rows])
        finite = np.isfinite(drift) & np.isfinite(plain)
        out: Dict[str, Any] = {"failed_points": int(np.count_nonzero(~finite))}
        if np.any(finite):
            out["uniformity_ratio"] = float(np.max(drift[finite]) / np.min(drift[finite]))
            gaps = np.abs(drift - plain) / drift
            order = np.argsort([row["eps"] for row in rows])
            usable = [i for i in order if finite[i]]
            out["drift_plain_gap_smallest_eps"] = float(gaps[usable[0]])
            out["drift_plain_gap_largest_eps"] = float(gaps[usable[-1]])
            contrast = [critical[i]["drift"] for i in usable]
            out["critical_growth"] = float(contrast[0] / contrast[-1])
            if len(usable) > 1:
                self._assert(f"{key}.critical_degrades", out["critical_growth"] > 1.0)
            self._assert(f"{key}.uniform", out["uniformity_ratio"] < 2.0)
            self._assert(f"{key}.kappa_converge", gaps[usable[0]] <= gaps[usable[-1]])
        forward_values = np.array([value for _, value in forward])
        if np.any(np.isfinite(forward_values)):
            finite_forward = forward_values[np.isfinite(forward_values)]
            out["forward_ratio"] = float(np.max(finite_forward) / np.min(finite_forward))
            self._assert(f"{key}.forward_bounded", out["forward_ratio"] < 2.0)
        self._assert(f"{key}.all_points", out["failed_points"] == 0)
        self.record.outputs[key] = out
        self.record.tables[key] = (
            ["eps", "drift", "plain", "perturbation", "critical"],
            [
                [row["eps"], row["drift"], row["plain"], row["perturbation"], contrast_row["drift"]]
                for row, contrast_row in zip(rows, critical)
            ],
        )
        self.record.tables[f"{key}_forward"] = (["eps", "r_eps", "value"], [
            [eps, eps ** (c.n / (c.n + 1.0)), value] for eps, value in forward
        ])

    def run_invert_scan(self) -> None:
        self.invert_scan(self._spec(), "invert_scan")

    # newton

    def newton_case(self, eps: float, h: float, key: str, table: bool = False) -> Dict[str, Any]:
        c = self.config
        spec = self._spec()
        gd = build_glued(c.n, eps, glued_grid(eps, h, c.t_far), spec, tolerances=self.tolerances)
        certificate = certify(gd, spec, c.samples, c.probes, c.seed, 0, self.tolerances)
        report = newton_solve(gd, spec, c.newton_tol, self.tolerances)
        out: Dict[str, Any] = {
            "eps": eps,
            "h": h,
            "ift_certificate": asdict(certificate),
            "converged": report.converged,
            "history": [list(step) for step in report.iterations],
            "quadratic_constant": report.quadratic_constant,
        }
        self._assert(f"{key}.converged", report.converged)
        q_newton = report.quadratic_constant
        self._assert(f"{key}.quadratic", q_newton is not None and math.isfinite(q_newton))
        if report.converged:
            out["family_sup_error"] = family_compare(gd, report, self.tolerances)
            out["class_drift"] = abs(float(report.final_psi_t[0]))
            residual = soliton_residual(converged_metric(gd, report), gd.n)[1:-1]
            out["soliton_residual_spread"] = float(np.max(residual) - np.min(residual))
            best, sups = decay_rate(gd, report, DECAY_DELTAS)
            out["decay_delta"] = best
            out["decay_sups"] = {f"{delta:g}": value for delta, value in sups.items()}
            self._assert(f"{key}.family_match", out["family_sup_error"] <= 5.0 * h ** 2)
            self._assert(f"{key}.class_preserved", out["class_drift"] <= 1e-10)
            self._assert(f"{key}.soliton", out["soliton_residual_spread"] <= 1e-8)
            if table:
                self.record.tables["newton"] = _columns(
                    t=gd.grid.nodes,
                    psi=report.final_psi,
                    psi_t=report.final_psi_t,
                    v=gd.u_eps + report.final_psi_t,
                )
        logger.info(f"Newton eps={eps}, h={h}: converged={report.converged} in {len(report.iterations) - 1} steps")
        self.record.outputs[key] = out
        return out

    def run_newton(self) -> None:
        self.newton_case(self.config.eps, self.config.h, "newton", table=True)

    # verify-all

    def barrier_checks(self) -> None:
        lo, hi = BARRIER_WINDOW
        rows = []
        for n in (2, 3):
            coarse_profile = solve_profile(n, 0.0, Grid.uniform(lo, hi, self.config.h), self.tolerances)
            fine_profile = solve_profile(n, 0.0, coarse_profile.grid.refined(), self.tolerances)
            for delta in (0.25, 0.5, 0.75):
                coarse, fine = barrier_check(coarse_profile, delta), barrier_check(fine_profile, delta)
                ratio = coarse / fine if fine > 0 else math.inf
                key = f"barrier[n={n},delta={delta:g}]"
                self._assert(f"{key}.residual", coarse < 1e-4)
                self._assert(f"{key}.order", 3.2 <= ratio <= 4.8)
                rows.append([n, delta, coarse, fine, ratio])
        self.record.tables["barrier"] = (["n", "delta", "residual", "residual_refined", "ratio"], rows)

    def maximum_principle_checks(self, solves: int = 32) -> None:
        lo, hi = BARRIER_WINDOW
        rows = []
        for n in (2, 3):
            p = solve_profile(n, 0.0, Grid.uniform(lo, hi, self.config.h), self.tolerances)
            for index, delta in enumerate((0.25, 0.5, 0.75)):
                rng = make_rng(self.config.seed, 100 * n + index)
                violations, worst = 0, math.inf
                for _ in range(solves):
                    g, _, _ = gaussian_bumps(rng, (lo, hi), p.grid.h).evaluate(p.grid.nodes)
                    lhs, bound, slack = maximum_principle_check(p, delta, g)
                    worst = min(worst, slack / bound)
                    violations += slack < -1e-9 * bound
                self._assert(f"max_principle[n={n},delta={delta:g}]", violations == 0)
                rows.append([n, delta, violations, worst])
        self.record.tables["max_principle"] = (["n", "delta", "violations", "min_relative_slack"], rows)

    def uniqueness_checks(self) -> None:
        c = self.config
        spec = self._spec()
        gd = build_glued(c.n, c.eps, glued_grid(c.eps, c.h, c.t_far), spec, tolerances=self.tolerances)
        seeds = list(range(c.seed + 1, c.seed + 1 + max(c.starts, 5)))
        gap, _ = multistart(gd, spec, seeds, c.newton_tol, self.tolerances)
        p = solve_profile(c.n, 0.0, self._grid(), self.tolerances)
        violation = convexity_check(p.metric(), c.n, 500, make_rng(c.seed, 2))
        # same draws at two amplitudes; the gap to equality is quadratic
        depths = [convexity_depth(p.metric(), c.n, 50, make_rng(c.seed, 3), level) for level in (0.02, 0.01)]
        self.record.outputs["uniqueness"] = {
            "multistart_gap": gap,
            "starts": len(seeds),
            "convexity_violation": violation,
            "convexity_order": depths[0] / depths[1],
        }
        self._assert("uniqueness.multistart", gap <= 1e-8)
        self._assert("uniqueness.convexity", violation <= 1e-10)
        self._assert("uniqueness.convexity_order", abs(depths[0] / depths[1] - 4.0) < 0.4)

    def run_verify_all(self) -> None:
        c = self.config
        for n in (1, 2, 3):
            for a in (0.0, 0.25):
                self.profile_checks(solve_profile(n, a, self._grid(), self.tolerances), f"cao[n={n},a={a:g}]")
        for n in (2, 3):
            self.ale_checks(n, f"ale[n={n}]")
        self.barrier_checks()
        self.maximum_principle_checks()
        for gamma in (0.5, 1.0):
            self.error_scan(self._spec(gamma), f"error_scan[gamma={gamma:g}]")
        self.invert_scan(self._spec(), "invert_scan")

        certificates, eps_star = certify_sweep(
            c.n, self._spec(), c.eps_list, c.samples, c.probes, c.seed, c.h, c.t_far, c.jobs, self.tolerances
        )
        self.record.outputs["certify"] = {
            "eps_star": eps_star,
            "certificates": {f"{eps:g}": None if cert is None else asdict(cert) for eps, cert in certificates},
        }
        self._assert("certify.eps_star", eps_star is not None and eps_star > 1e-3)

        for eps in (1e-2, 3e-3):
            coarse = self.newton_case(eps, c.h, f"newton[eps={eps:g}]")
            fine = self.newton_case(eps, c.h / 2, f"newton[eps={eps:g},h/2]")
            if "family_sup_error" in coarse and "family_sup_error" in fine and fine["family_sup_error"] > 0:
                coarse["refinement_ratio"] = coarse["family_sup_error"] / fine["family_sup_error"]
                self._assert(f"newton[eps={eps:g}].refinement", coarse["refinement_ratio"] >= 2.0)
        self.uniqueness_checks()


def run(config: ExperimentConfig) -> RunRecord:
    return ExperimentRunner(config).run()


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no NaN or infinity
        return value if math.isfinite(value) else None
    return value


def record_document(record: RunRecord) -> Dict[str, Any]:
    return _plain(
        {
            "config": record.config,
            "version": record.version,
            "outputs": record.outputs,
            "assertions": record.assertions,
            "failed": record.failed,
            "passed": record.passed,
        }
    )


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["%.17g" % value for value in row])


def emit(record: RunRecord, out: str, formats: Sequence[str] = ("csv", "json")) -> List[Path]:
    """Write the record's tables as CSV and the record itself as record.json under `out`."""
    directory = Path(out)
    path = directory
    written: List[Path] = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            for name, (header, rows) in sorted(record.tables.items()):
                path = directory / f"{name}.csv"
                _write_csv(path, header, rows)
                written.append(path)
        if "json" in formats:
            path = directory / "record.json"
            text = json.dumps(record_document(record), sort_keys=True, indent=2)
            path.write_text(text + "\n", encoding="utf-8")
            written.append(path)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {str(e)}", path=str(path))
    logger.info(f"Wrote {len(written)} files to {directory}")
    return written
