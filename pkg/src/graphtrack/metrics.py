"""Run records and the table metric.

The headline metric follows the benchmark table definition verbatim:
s_rms = (1/N) sum_i (1/K) sum_k s_i(k)^T s_i(k), i.e. a mean square without
the square root despite the RMS name.  The conventional rooted variant is
available behind a flag so both conventions can be reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Table column order: tracking error, velocity error, observer-net error in
# the two windows, interaction-net error in the two windows, control effort.
SUMMARY_COLUMNS = ("e_rms", "edot_rms", "phi1_rms_0_10", "phi1_rms_10_60",
                   "phi2_rms_0_10", "phi2_rms_10_60", "u_rms")


def window_mask(t: np.ndarray, start: float, stop: float) -> np.ndarray:
    """Samples with start <= t < stop; the trailing window keeps t == stop."""
    t = np.asarray(t, float)
    if stop >= t[-1] - 1e-12:
        return (t >= start - 1e-12) & (t <= stop + 1e-12)
    return (t >= start - 1e-12) & (t < stop - 1e-12)


def rms(series: np.ndarray, mask: np.ndarray | None = None,
        sqrt: bool = False) -> float:
    """Agent-averaged, time-averaged squared signal magnitude.

    `series` has shape (K, N, n) for K samples of N agents' n-vectors;
    `mask` selects the time window.  `sqrt=True` gives conventional RMS.
    """
    series = np.asarray(series, float)
    if series.ndim != 3:
        raise ValueError("series must be (samples, agents, dim)")
    if mask is not None:
        series = series[np.asarray(mask, bool)]
    if series.shape[0] == 0:
        raise ValueError("empty window")
    value = float(np.mean(np.sum(series * series, axis=2)))
    return float(np.sqrt(value)) if sqrt else value


@dataclass
class RunResult:
    """Time series, summary row, certificate, and health of one run."""

    t: np.ndarray
    series: dict[str, np.ndarray]
    summary: dict[str, float]
    certificate: dict | None = None
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def summary_row(self) -> dict:
        row = dict(self.meta)
        row.update({k: self.summary.get(k) for k in SUMMARY_COLUMNS})
        row["diverged"] = self.diverged
        return row


def summarize(t: np.ndarray, series: dict[str, np.ndarray],
              sqrt_rms: bool = False) -> dict[str, float]:
    """Summary row from recorded vector series, table-window convention."""
    full = window_mask(t, 0.0, float(t[-1]))
    early = window_mask(t, 0.0, 10.0)
    late = window_mask(t, 10.0, float(t[-1]))
    out = {
        "e_rms": rms(series["e"], full),
        "edot_rms": rms(series["edot"], full),
        "phi1_rms_0_10": rms(series["phi1err"], early),
        "phi1_rms_10_60": rms(series["phi1err"], late),
        "phi2_rms_0_10": rms(series["phi2err"], early),
        "phi2_rms_10_60": rms(series["phi2err"], late),
        "u_rms": rms(series["u"], full),
    }
    if sqrt_rms:
        out.update({k + "_sqrt": float(np.sqrt(v))
                    for k, v in list(out.items())})
    # mean-over-agents tracking error magnitude in the leading/trailing
    # 10 s windows, the qualitative convergence check
    e_norm = np.linalg.norm(series["e"], axis=2)
    first = window_mask(t, 0.0, 10.0)
    last = window_mask(t, float(t[-1]) - 10.0, float(t[-1]))
    out["e_mean_first10"] = float(e_norm[first].mean())
    out["e_mean_last10"] = float(e_norm[last].mean())
    return out
