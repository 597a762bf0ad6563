"""Phase diagram of the oblivious sample complexity over (eps, alpha).

Each cell records which of the four rate terms dominates, the oblivious
and adaptive sample counts, and whether the oblivious rate is strictly
smaller.  Cells with alpha <= eps are infeasible and carry no numbers.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import asdict, dataclass
from typing import Optional
from xml.sax.saxutils import escape

from rmt.harness.config import PhaseGrid
from rmt.harness.experiments import write_csv
from rmt.oblivious_tester import required_samples_adaptive, required_samples_oblivious, sample_complexity_terms

TERM_LABELS = ("sqrt(d)/a^2", "d e^3/a^4", "d^(2/3) e^(2/3)/a^(8/3)", "d e/a^2")
COLORS = ("#4477aa", "#ee6677", "#228833", "#ccbb44")
INFEASIBLE_COLOR = "#bbbbbb"


@dataclass(frozen=True)
class PhaseRow:
    eps: float
    alpha: float
    feasible: bool
    dominant: int  # 1..4 into TERM_LABELS, 0 when infeasible
    oblivious: float  # the rate formula, before rounding
    required_samples_oblivious: float
    adaptive: float
    separation: bool


COLUMNS = ("eps", "alpha", "feasible", "dominant", "oblivious", "required_samples_oblivious", "adaptive", "separation")


def oblivious_rate(d: int, alpha: float, eps: float) -> tuple[float, int]:
    """(t1 + t2 + min(t3, t4), index of the largest active term)."""
    t1, t2, t3, t4 = sample_complexity_terms(d, alpha, eps)
    third = (3, t3) if t3 <= t4 else (4, t4)
    active = [(1, t1), (2, t2), third]
    dominant = max(active, key=lambda p: p[1])[0]
    return t1 + t2 + third[1], dominant


def phase_row(d: int, eps: float, alpha: float) -> PhaseRow:
    if alpha <= eps:
        return PhaseRow(eps, alpha, False, 0, math.nan, math.nan, math.nan, False)
    rate, dominant = oblivious_rate(d, alpha, eps)
    adaptive = required_samples_adaptive(d, alpha, eps)
    required = float(required_samples_oblivious(d, alpha, eps))
    return PhaseRow(eps, alpha, True, dominant, rate, required, adaptive, rate < adaptive)


def sweep_phase_diagram(grid: PhaseGrid) -> list[PhaseRow]:
    eps_axis, alpha_axis = grid.axes()
    return [phase_row(grid.d, e, a) for a in alpha_axis for e in eps_axis]


def phase_csv(rows: list[PhaseRow]) -> str:
    return write_csv([asdict(r) for r in rows], COLUMNS)


def phase_svg(rows: list[PhaseRow], grid: PhaseGrid, *, meta: bool = True, now: Optional[datetime.datetime] = None) -> str:
    """Scatter of cells coloured by dominant term (log axes)."""
    eps_axis, alpha_axis = grid.axes()
    cell, pad, legend = 10, 50, 220
    width = pad * 2 + cell * len(eps_axis) + legend
    height = pad * 2 + cell * len(alpha_axis)
    ei = {e: i for i, e in enumerate(eps_axis)}
    ai = {a: j for j, a in enumerate(alpha_axis)}
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    if meta:
        stamp = (now or datetime.datetime.now(datetime.timezone.utc)).isoformat(timespec="seconds")
        out.append(f"<!-- generated {stamp} -->")
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">')
    for r in rows:
        x = pad + cell * ei[r.eps]
        y = pad + cell * (len(alpha_axis) - 1 - ai[r.alpha])
        fill = COLORS[r.dominant - 1] if r.feasible else INFEASIBLE_COLOR
        out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}"/>')
        if r.separation:
            out.append(f'<circle cx="{x + cell / 2}" cy="{y + cell / 2}" r="2" fill="#000000"/>')
    gx = pad * 2 + cell * len(eps_axis) - pad // 2
    labels = list(zip(COLORS, TERM_LABELS)) + [(INFEASIBLE_COLOR, "alpha <= eps")]
    for k, (color, label) in enumerate(labels):
        y = pad + 20 * k
        out.append(f'<rect x="{gx}" y="{y}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{gx + 18}" y="{y + 11}" font-size="11">{escape(label)}</text>')
    y = pad + 20 * len(labels)
    out.append(f'<circle cx="{gx + 6}" cy="{y + 6}" r="2" fill="#000000"/>')
    out.append(f'<text x="{gx + 18}" y="{y + 11}" font-size="11">oblivious &lt; adaptive</text>')
    out.append(f'<text x="{pad}" y="{height - 15}" font-size="11">eps (log scale), d = {grid.d}</text>')
    out.append(f'<text x="10" y="{pad - 15}" font-size="11">alpha (log scale)</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
