"""Single-point runs and sweeps: basis -> operators -> deviation -> observables."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .fock import ModelParams, enumerate_basis
from .liouville import (
    DensityMatrix,
    build_operators,
    extract_deviation,
    maximally_mixed,
    propagate_to_steady_state,
    solve_deviation_direct,
    steady_state_residual,
    write_checkpoint,
)
from .rmt import MIN_LEVELS, emit_distribution, unfold_spacings
from .transport import (
    decompose_hermitian,
    lambda_sigma_relation,
    transport_report,
)

log = logging.getLogger(__name__)


class NotConverged(RuntimeError):
    pass


@dataclass
class PointResult:
    params: ModelParams
    ops: object
    Rtilde: DensityMatrix
    residual: float
    converged: bool
    dec_R: object
    dec_I: object
    report: object
    spacing: object | None
    seconds: float
    solve_meta: dict = field(default_factory=dict)


def solve_point(p: ModelParams, run: dict) -> PointResult:
    t0 = time.perf_counter()
    ops = build_operators(p, enumerate_basis(p.L, p.N))
    if run["method"] == "propagate":
        R, rep = propagate_to_steady_state(maximally_mixed(ops.basis), p, tol=run["tol"], t_max=run["t_max"],
                                           ops=ops, atol=run["atol"], rtol=run["rtol"])
        X = extract_deviation(R, p.dgamma)
        converged = rep.converged
        meta = {"method": "propagate", **rep.as_dict()}
    else:
        X = solve_deviation_direct(p, ops, linear_response=run["linear_response"], rtol=run["direct_rtol"],
                                   cap=run["direct_cap"])
        converged = X.meta["residual"] <= 10 * run["direct_rtol"]
        meta = {"method": "direct", **X.meta}
    residual = steady_state_residual(X, p, ops)
    dec_R = decompose_hermitian(X)
    dec_I = decompose_hermitian(ops.I)
    rep = transport_report(X, ops.I, p, dec_R)
    rep.extra["lambda_sigma"] = lambda_sigma_relation(dec_R, dec_I, p.J).summary()
    spacing = None
    if ops.dim >= MIN_LEVELS:
        spacing = unfold_spacings(dec_R.values, run["window"], run["unfold_degree"])
        rep.extra["spacing"] = spacing.metadata()
    return PointResult(p, ops, X, residual, converged, dec_R, dec_I, rep, spacing,
                       time.perf_counter() - t0, meta)


@dataclass
class RunRecord:
    config: dict
    params: dict
    dim: int
    current: float
    residual: float
    converged: bool
    seconds: float
    files: dict
    solve: dict = field(default_factory=dict)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=1, default=float)


def _tag(p: ModelParams) -> str:
    return f"L{p.L}_N{p.N}_U{p.U:g}"


def _write_csv(path: Path, header: str, columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config {header}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def emit_point(res: PointResult, cfg: ExperimentConfig, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    header = cfg.header()
    tag = _tag(res.params)
    files = {}

    path = outdir / f"report_{tag}.json"
    res.report.write_json(path, cfg.data)
    files["report"] = str(path)

    path = outdir / f"quantiles_{tag}.csv"
    res.report.write_quantiles_csv(path, [f"config {header}"])
    files["quantiles"] = str(path)

    # sorted scaled lambda against sorted sigma
    ls = lambda_sigma_relation(res.dec_R, res.dec_I, res.params.J)
    d = res.ops.dim
    path = outdir / f"lambda_sigma_{tag}.csv"
    _write_csv(path, header, ["j", "x", "scaled_lambda", "sigma"],
               [(j + 1, (j + 0.5) / d, ls.scaled_lambda[j], ls.sigma[j]) for j in range(d)])
    files["lambda_sigma"] = str(path)

    # |R~| in the current eigenbasis, rows/cols ordered by sigma
    Q = res.dec_I.vectors
    mag = np.abs(Q.conj().T @ res.Rtilde.data @ Q)
    path = outdir / f"rtilde_current_basis_{tag}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# config {header}\n")
        fh.write(f"# |<Phi_i|R~|Phi_j>|, {d}x{d}, ordered by ascending current eigenvalue\n")
        np.savetxt(fh, mag, delimiter=",", fmt="%.17g")
    files["rtilde_current_basis"] = str(path)

    if res.spacing is not None:
        path = outdir / f"spacing_{tag}.csv"
        emit_distribution(res.spacing, path, [f"config {header}"], {"config": cfg.data})
        files["spacing"] = str(path)

    if cfg.run["checkpoint"]:
        path = outdir / f"rtilde_{tag}.bhrho"
        write_checkpoint(path, res.Rtilde)
        files["checkpoint"] = str(path)

    rec = RunRecord(cfg.data, res.params.as_dict(), d, res.report.current, res.residual, res.converged,
                    res.seconds, files, res.solve_meta)
    path = outdir / f"run_{tag}.json"
    rec.write(path)
    files["record"] = str(path)
    return files


def cmd_run(cfg: ExperimentConfig, heavy: bool = False) -> RunRecord:
    p = cfg.params()
    cfg.check_size(p, heavy)
    res = solve_point(p, cfg.run)
    files = emit_point(res, cfg, cfg.out)
    rec = RunRecord(cfg.data, p.as_dict(), res.ops.dim, res.report.current, res.residual, res.converged,
                    res.seconds, files, res.solve_meta)
    if not res.converged:
        raise NotConverged(f"steady state not converged at {_tag(p)}")
    return rec


def _sweep_worker(args):
    p, run = args
    try:
        res = solve_point(p, run)
        sp = res.spacing
        return {
            "U": p.U, "N": p.N, "dim": res.ops.dim, "current": res.report.current,
            "ks_poisson": sp.ks_poisson if sp else float("nan"),
            "ks_gue": sp.ks_gue if sp else float("nan"),
            "residual": res.residual, "converged": res.converged, "error": "",
        }
    except Exception as exc:  # recorded per point; the sweep goes on
        log.exception("sweep point %s failed", _tag(p))
        return {"U": p.U, "N": p.N, "dim": 0, "current": float("nan"), "ks_poisson": float("nan"),
                "ks_gue": float("nan"), "residual": float("nan"), "converged": False, "error": repr(exc)}


def crossover(rows: list[dict]) -> dict:
    """First U per N where the current falls below half its U = 0 value."""
    out = {}
    for n in sorted({r["N"] for r in rows}):
        pts = sorted((r["U"], r["current"]) for r in rows if r["N"] == n)
        base = [c for u, c in pts if u == 0]
        if not base:
            out[n] = None
            continue
        out[n] = next((u for u, c in pts if c < 0.5 * base[0]), None)
    return out


SUMMARY_COLUMNS = ["U", "N", "dim", "current", "ks_poisson", "ks_gue", "residual", "converged", "error"]


def cmd_sweep(cfg: ExperimentConfig, heavy: bool = False) -> tuple[list[dict], dict]:
    points = cfg.sweep_points()
    for p in points:
        cfg.check_size(p, heavy)
    jobs = int(cfg["jobs"])
    tasks = [(p, cfg.run) for p in points]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_sweep_worker, tasks))
    else:
        rows = [_sweep_worker(t) for t in tasks]
    cross = crossover(rows)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "sweep_summary.csv", cfg.header(), SUMMARY_COLUMNS,
               [[r[c] for c in SUMMARY_COLUMNS] for r in rows])
    with open(out / "sweep_crossover.json", "w") as fh:
        json.dump({"config": cfg.data, "crossover_U": {str(k): v for k, v in cross.items()}}, fh, indent=1)
    return rows, cross


def cmd_spectra(cfg: ExperimentConfig, heavy: bool = False) -> list:
    us = cfg.data["sweep"]["U"]
    us = [cfg.data["model"]["U"]] if us is None else us
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for u in us:
        p = cfg.params(U=float(u))
        cfg.check_size(p, heavy)
        if enumerate_basis(p.L, p.N).dim < cfg.run["min_spectrum"]:
            log.warning("dimension below %d: spacing statistics will be noisy", cfg.run["min_spectrum"])
        res = solve_point(p, cfg.run)
        if res.spacing is None:
            raise ValueError(f"dimension {res.ops.dim} too small for spacing statistics")
        path = out / f"spacing_{_tag(p)}.csv"
        emit_distribution(res.spacing, path, [f"config {cfg.header()}"], {"config": cfg.data})
        results.append((p, res.spacing, path))
    return results
