"""Analytic multiply-accumulate estimators and an instrumented counter.

The analytic forms count only the four matmul phases of one attention pass
(QKV projections, the score product, the value product, and the output
projection); softmax, bias adds, layer norms and MLPs are out of scope:

* global attention over a length-``length`` sequence of width ``channels``
  costs 4*L*C^2 + 2*L^2*C;
* windowed attention restricted to non-overlapping windows of the scales in
  ``windows`` costs 4*L*C^2 + 2*L*C*sum(M_i), with the shared QKV and output
  projections counted once.

``measure_macs`` runs the real attention primitives under a counting hook
and must reconcile with these terms exactly, phase by phase.  The caller
decides whether ``length`` means raw samples or patch tokens; reconciliation
against the running model is at token level.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as tc
from .errors import AdmissibilityError, DimensionError
from .tensor import MacCounter

PHASES = ("qkv", "qk", "av", "out")


def omega_msa(length: int, channels: int) -> int:
    """MAC count of one global-attention pass: 4LC^2 + 2L^2C."""
    if length < 0 or channels < 0:
        raise ValueError("length and channels must be non-negative")
    return 4 * length * channels**2 + 2 * length**2 * channels


def omega_mswsa(length: int, channels: int, windows) -> int:
    """MAC count of one multi-scale windowed pass: 4LC^2 + 2LC*sum(M_i)."""
    windows = tuple(int(m) for m in windows)
    if not windows:
        raise ValueError("windows must be non-empty")
    if length < 0 or channels < 0 or any(m < 1 for m in windows):
        raise ValueError("length/channels must be >= 0 and window scales >= 1")
    return 4 * length * channels**2 + 2 * length * channels * sum(windows)


def analytic_phases(tokens: int, channels: int, windows) -> dict[str, int]:
    total_m = sum(int(m) for m in windows)
    return {
        "qkv": 3 * tokens * channels**2,
        "qk": tokens * total_m * channels,
        "av": tokens * total_m * channels,
        "out": tokens * channels**2,
    }


@dataclass(frozen=True)
class ComplexityReport:
    tokens: int
    channels: int
    windows: tuple[int, ...]
    omega_msa: int
    omega_mswsa: int
    measured: dict[str, int]
    analytic: dict[str, int]

    @property
    def measured_total(self) -> int:
        return sum(self.measured.values())

    @property
    def reconciled(self) -> bool:
        return self.measured == self.analytic

    @property
    def ratio(self) -> float:
        return self.omega_msa / self.omega_mswsa


def measure_macs(tokens: int, channels: int, windows, seed: int = 0) -> ComplexityReport:
    """Run the attention matmuls on live buffers and tally their MACs.

    One MAC per scalar multiply inside a matmul; the counting hook sits in
    the matmul primitive itself, so the tally reflects shapes actually
    executed.  Raises if the measurement disagrees with the analytic phase
    terms (they are equalities, not approximations).
    """
    windows = tuple(int(m) for m in windows)
    if not windows:
        raise ValueError("windows must be non-empty")
    for m in windows:
        if m < 1 or tokens % m != 0:
            raise AdmissibilityError(f"window scale {m} does not divide token count {tokens}")
    rng = np.random.default_rng(seed)
    x = tc.tensor(rng.normal(size=(tokens, channels)))
    wq, wk, wv, wz = (tc.tensor(rng.normal(size=(channels, channels))) for _ in range(4))

    counter = MacCounter()
    with counter.active():
        with counter.phase("qkv"):
            q = tc.matmul(x, wq)
            k = tc.matmul(x, wk)
            v = tc.matmul(x, wv)
        merged = tc.tensor(np.zeros((tokens, channels)))
        for m in windows:
            n_w = tokens // m
            qw = tc.reshape(q, (n_w, m, channels))
            kw = tc.reshape(k, (n_w, m, channels))
            vw = tc.reshape(v, (n_w, m, channels))
            with counter.phase("qk"):
                scores = tc.matmul(qw, tc.transpose(kw, (0, 2, 1)))
            attn = tc.softmax_lastdim(tc.scale(scores, 1.0 / math.sqrt(channels)))
            with counter.phase("av"):
                zw = tc.matmul(attn, vw)
            merged = tc.add(merged, tc.reshape(zw, (tokens, channels)))
        with counter.phase("out"):
            tc.matmul(tc.scale(merged, 1.0 / len(windows)), wz)

    analytic = analytic_phases(tokens, channels, windows)
    measured = {phase: counter.phases.get(phase, 0) for phase in PHASES}
    if measured != analytic:
        raise DimensionError(
            f"MAC accounting out of step: measured {measured} vs analytic {analytic}"
        )
    return ComplexityReport(
        tokens=tokens,
        channels=channels,
        windows=windows,
        omega_msa=omega_msa(tokens, channels),
        omega_mswsa=omega_mswsa(tokens, channels, windows),
        measured=measured,
        analytic=analytic,
    )


def sweep(lengths, channels: int, windows) -> list[tuple[int, int, int, float]]:
    """Rows (L, MAC_global, MAC_windowed, ratio) over a range of lengths."""
    rows = []
    for length in lengths:
        msa = omega_msa(int(length), channels)
        mswsa = omega_mswsa(int(length), channels, windows)
        rows.append((int(length), msa, mswsa, msa / mswsa))
    return rows


def format_sweep_csv(rows, channels: int, windows, unit: str = "samples") -> str:
    buf = io.StringIO()
    buf.write(f"# channels = {channels}\n")
    buf.write(f"# windows = {list(windows)}\n")
    buf.write(f"# length_unit = {unit}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["L", "omega_msa", "omega_mswsa", "ratio"])
    for length, msa, mswsa, ratio in rows:
        writer.writerow([length, msa, mswsa, repr(ratio)])
    return buf.getvalue()


def write_sweep_csv(rows, path, channels: int, windows, unit: str = "samples") -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_sweep_csv(rows, channels, windows, unit))
