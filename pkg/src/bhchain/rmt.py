"""Nearest-neighbour spacing statistics with polynomial unfolding."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import stats
from scipy.special import erf

log = logging.getLogger(__name__)

MIN_LEVELS = 50


def _check_s(s):
    s = np.asarray(s, dtype=float)
    if (s < 0).any():
        raise ValueError("spacings must be non-negative")
    return s


def reference_density(kind: str, s):
    s = _check_s(s)
    if kind == "poisson":
        return np.exp(-s)
    if kind == "gue":
        return 32 / np.pi**2 * s**2 * np.exp(-4 * s**2 / np.pi)
    if kind == "goe":
        return np.pi / 2 * s * np.exp(-np.pi * s**2 / 4)
    raise ValueError(f"unknown reference {kind!r}")


def reference_integrated(kind: str, s):
    """Cumulative spacing distribution of the Poisson, GUE or GOE surmise."""
    s = _check_s(s)
    if kind == "poisson":
        return -np.expm1(-s)
    if kind == "gue":
        return erf(2 * s / np.sqrt(np.pi)) - 4 * s / np.pi * np.exp(-4 * s**2 / np.pi)
    if kind == "goe":
        return -np.expm1(-np.pi * s**2 / 4)
    raise ValueError(f"unknown reference {kind!r}")


def ks_distance(sample, reference) -> float:
    """Sup distance between the empirical CDF of ``sample`` and ``reference``.

    ``reference`` is a surmise name or a second sample.
    """
    sample = np.asarray(sample, dtype=float)
    if sample.size == 0:
        raise ValueError("empty sample")
    if isinstance(reference, str):
        return float(stats.kstest(sample, lambda s: reference_integrated(reference, np.maximum(s, 0))).statistic)
    return float(stats.ks_2samp(sample, np.asarray(reference, dtype=float)).statistic)


@dataclass
class SpacingStatistics:
    eigenvalues: np.ndarray  # sorted input
    central_fraction: float
    window: np.ndarray  # retained (and de-duplicated) levels
    spacings: np.ndarray
    degree: int
    raw_mean: float  # mean spacing before the final normalisation
    n_degenerate: int
    ks_poisson: float
    ks_gue: float
    ks_goe: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.spacings)

    def empirical_cdf(self, s):
        srt = np.sort(self.spacings)
        return np.searchsorted(srt, np.asarray(s, dtype=float), side="right") / len(srt)

    def favours(self) -> str:
        return "gue" if self.ks_gue < self.ks_poisson else "poisson"

    def metadata(self) -> dict:
        return {
            "central_fraction": self.central_fraction,
            "fit_degree": self.degree,
            "sample_size": self.n,
            "levels_in_window": len(self.window),
            "collapsed_degeneracies": self.n_degenerate,
            "raw_mean_spacing": self.raw_mean,
            "ks_poisson": self.ks_poisson,
            "ks_gue": self.ks_gue,
            "ks_goe": self.ks_goe,
            **self.meta,
        }


def central_window(eigs: np.ndarray, central_fraction: float) -> np.ndarray:
    n = len(eigs)
    cut = int(round(n * (1 - central_fraction) / 2))
    return eigs[cut:n - cut]


def _monotone_fit(x: np.ndarray, y: np.ndarray, degree: int) -> tuple[Polynomial, int]:
    grid = np.linspace(x[0], x[-1], 20 * len(x))
    for deg in range(min(degree, len(x) - 1), 0, -1):
        p = Polynomial.fit(x, y, deg)
        if (p.deriv()(grid) > 0).all():
            return p, deg
    raise ValueError("could not fit a monotone staircase")


def unfold_spacings(
    eigs,
    central_fraction: float = 0.6,
    degree: int = 7,
    collapse_degenerate: bool = True,
    degeneracy_tol: float = 1e-12,
    normalize: bool = True,
) -> SpacingStatistics:
    """Unfold the central part of a spectrum: s_k = (e_{k+1} - e_k) * rho(e_k).

    rho is the derivative of a polynomial fit to the level staircase over the
    retained window; the degree drops from ``degree`` until the fit is
    monotone.  Levels closer than ``degeneracy_tol`` times the spectral width
    are treated as exact multiplets and merged when ``collapse_degenerate``.
    """
    e = np.sort(np.asarray(eigs, dtype=float))
    if len(e) < MIN_LEVELS:
        raise ValueError(f"need at least {MIN_LEVELS} eigenvalues, got {len(e)}")
    if not 0 < central_fraction <= 1:
        raise ValueError(f"central_fraction must be in (0, 1], got {central_fraction}")
    w = central_window(e, central_fraction)
    n_deg = 0
    if collapse_degenerate:
        width = e[-1] - e[0]
        keep = np.concatenate([[True], np.diff(w) > degeneracy_tol * width])
        n_deg = int((~keep).sum())
        w = w[keep]
    if len(w) < 3:
        raise ValueError("too few distinct levels in the window")
    p, deg = _monotone_fit(w, np.arange(len(w), dtype=float), degree)
    s = np.diff(w) * p.deriv()(w[:-1])
    s = np.maximum(s, 0.0)
    raw_mean = float(s.mean())
    if normalize and raw_mean > 0:
        s = s / raw_mean
    if n_deg:
        log.info("collapsed %d degenerate levels", n_deg)
    return SpacingStatistics(
        eigenvalues=e,
        central_fraction=central_fraction,
        window=w,
        spacings=s,
        degree=deg,
        raw_mean=raw_mean,
        n_degenerate=n_deg,
        ks_poisson=ks_distance(s, "poisson"),
        ks_gue=ks_distance(s, "gue"),
        ks_goe=ks_distance(s, "goe"),
    )


S_GRID = np.round(np.arange(201) * 0.02, 10)


def emit_distribution(st: SpacingStatistics, path=None, header_lines=(), sidecar_extra=None) -> list[tuple]:
    """Rows (s, empirical, poisson, gue) on s = 0, 0.02, ..., 4.

    With ``path`` the rows go to CSV and the metadata (plus ``sidecar_extra``)
    to ``<stem>.meta.json``.
    """
    emp = st.empirical_cdf(S_GRID)
    poi = reference_integrated("poisson", S_GRID)
    gue = reference_integrated("gue", S_GRID)
    rows = list(zip(S_GRID.tolist(), emp.tolist(), poi.tolist(), gue.tolist()))
    if path is not None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            fh.write(f"# {json.dumps(st.metadata())}\n")
            w = csv.writer(fh)
            w.writerow(["s", "empirical", "poisson_ref", "gue_ref"])
            for row in rows:
                w.writerow([repr(v) for v in row])
        sidecar = str(path).rsplit(".", 1)[0] + ".meta.json"
        with open(sidecar, "w") as fh:
            json.dump({**(sidecar_extra or {}), **st.metadata()}, fh, indent=1)
    return rows


# synthetic spectra for calibration


def gue_spectrum(n: int, rng=None) -> np.ndarray:
    rng = np.random.default_rng(rng)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return np.linalg.eigvalsh((a + a.conj().T) / 2)


def poisson_spectrum(n: int, rng=None) -> np.ndarray:
    """Sorted independent uniform levels."""
    rng = np.random.default_rng(rng)
    return np.sort(rng.uniform(0, 1, n))
