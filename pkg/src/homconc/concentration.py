"""Field-concentration moments, L^p lower bounds and tail estimates.

For a macroscopic gradient ``xi`` and a corrector field ``P`` on the unit cell

    f_p(xi)   = ( int_Q |P(y) xi|^p dy )^(1/p)
    f_p^i(xi) = ( int_Q chi_i(y) |P(y) xi|^p dy )^(1/p)
    f_inf(xi) = ess sup |P(y) xi|

Cell integrals are plain voxel averages (midpoint rule) and ``f_inf`` is the
discrete maximum; singular integrands are diagnosed from how these numbers move
under grid refinement, never extrapolated.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError
from .macro import Box

INF_LITERAL = "+inf"
CSV_COLUMNS = ("p", "phase", "value", "divergent_flag", "resolution")
WHOLE_CELL = -1


def _check_p(p):
    if not (np.isfinite(p) and p >= 2):
        raise ValueError(f"moment order p must be finite and >= 2, got {p}")


def _flat(P_field):
    P = np.asarray(P_field, dtype=np.float64)
    d = P.shape[-1]
    if P.ndim < 3 or P.shape[-2] != d:
        raise ValueError("P_field must have trailing shape (dim, dim)")
    P = np.ascontiguousarray(P.reshape(-1, d, d))
    if not np.all(np.isfinite(P)):
        raise ValueError("P_field contains non-finite entries")
    return P


def _xi(xi, d):
    if xi is None:
        return np.eye(d)[0]
    xi = np.asarray(xi, dtype=np.float64).reshape(-1)
    if xi.shape != (d,) or not np.all(np.isfinite(xi)):
        raise ValueError(f"xi must be a finite {d}-vector")
    return xi


def _power_mean(P_field, xi, p, labels=None, phase=None, weights=None):
    P = _flat(P_field)
    xi = _xi(xi, P.shape[-1])
    lab = None if labels is None else np.ascontiguousarray(np.asarray(labels, dtype=np.uint8).reshape(-1))
    w = None if weights is None else np.ascontiguousarray(np.asarray(weights, dtype=np.float64).reshape(-1))
    if lab is not None and lab.shape[0] != P.shape[0]:
        raise ValueError("phase labels do not match the field")
    s, _ = kernels.moment_sum(P, xi, float(p), lab, -1 if phase is None else int(phase), w)
    return s if w is not None else s / P.shape[0]


def moment_fp(P_field, xi, p, weights=None) -> float:
    """``(mean |P xi|^p)^(1/p)``; with ``weights`` the mean is the weighted sum
    (weights must add up to the cell measure 1)."""
    _check_p(p)
    return _power_mean(P_field, xi, p, weights=weights) ** (1.0 / p)


def phase_moment_fp(P_field, phase_labels, i, xi, p, num_phases=None, weights=None) -> float:
    """Phase-restricted moment; normalized by the cell measure, not the phase volume."""
    _check_p(p)
    if num_phases is not None and not 0 <= i < num_phases:
        raise ValueError(f"phase {i} out of range")
    return _power_mean(P_field, xi, p, phase_labels, i, weights) ** (1.0 / p)


def moment_finf(P_field, phase_labels=None, i=None, xi=None) -> float:
    """Discrete maximum of ``|P xi|`` over the (phase-restricted) voxels."""
    P = _flat(P_field)
    xi = _xi(np.eye(P.shape[-1])[0] if xi is None else xi, P.shape[-1])
    lab = None if phase_labels is None else np.ascontiguousarray(np.asarray(phase_labels, dtype=np.uint8).reshape(-1))
    _, m = kernels.moment_sum(P, xi, 2.0, lab, -1 if i is None else int(i), None)
    return float(m)


@dataclass(frozen=True)
class MomentSpec:
    p_grid: tuple
    phases: tuple = ()
    gradient: tuple = None  # None means e1

    def __post_init__(self):
        p = tuple(float(v) for v in self.p_grid)
        if not p:
            raise ValueError("p_grid is empty")
        for v in p:
            _check_p(v)
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ValueError("p_grid must be strictly increasing")
        object.__setattr__(self, "p_grid", p)
        object.__setattr__(self, "phases", tuple(int(i) for i in self.phases))
        if self.gradient is not None:
            object.__setattr__(self, "gradient", tuple(float(v) for v in self.gradient))


def _element_selection(macro, D):
    mids = macro.element_midpoints()
    if D is None:
        return np.ones(mids.shape[0], dtype=bool)
    if isinstance(D, Box):
        return D.contains(mids)
    mask = np.asarray(D, dtype=bool).reshape(-1)
    if mask.shape[0] != mids.shape[0]:
        raise ValueError("element mask does not match the macro mesh")
    return mask


def moment_integral(macro, cell_data, p, D=None, phase=None) -> float:
    """``int_D f_p(x, grad u^H(x))^p dx`` with element-midpoint gradients.

    ``cell_data`` maps subdomain id to anything with ``cell_moment(xi, p, phase)``
    (a corrector solution or analytic cell data). ``inf`` propagates.
    """
    _check_p(p)
    sel = _element_selection(macro, D)
    sub = macro.subdomain[sel]
    grads = macro.grad_u_H[sel]
    vol = macro.element_volume
    total = 0.0
    for s in np.unique(sub):
        if int(s) not in cell_data:
            raise ConfigError(f"no cell data for subdomain {int(s)} inside D")
        data = cell_data[int(s)]
        g = grads[sub == s]
        uniq, counts = np.unique(g, axis=0, return_counts=True)
        for xi, c in zip(uniq, counts):
            m = data.cell_moment(xi, p, phase)
            if math.isinf(m):
                return float("inf")
            total += c * vol * m
    return float(total)


def lower_bound_Lp(macro, cell_data, p, D=None, phase=None) -> float:
    """``(int_D f_p^p)^(1/p)``: the lower bound on the limiting ``L^p(D)`` norm of the
    (phase-restricted) fine-scale gradient; ``inf`` when any cell moment diverges."""
    v = moment_integral(macro, cell_data, p, D, phase)
    return v if math.isinf(v) else v ** (1.0 / p)


def chebyshev_tail(bound_value, p, t, measure_D=None) -> float:
    """``t^-p * bound_value`` capped at ``|D|``; ``bound_value`` is the p-th power integral."""
    if not t > 0:
        raise ValueError("threshold t must be positive")
    _check_p(p)
    if math.isinf(t):
        return 0.0
    val = float("inf") if math.isinf(bound_value) else bound_value * t ** (-p)
    if measure_D is not None:
        val = min(val, float(measure_D))
    return val


def _image_sorted(P_flat, xi):
    return np.sort(np.linalg.norm(np.einsum("kij,j->ki", P_flat, xi), axis=1))


def _contribution(v_sorted, p, count):
    """(top-``count`` part, full) voxel average of ``v^p``."""
    n = v_sorted.shape[0]
    top = np.ascontiguousarray(v_sorted[-count:])
    return kernels.pairwise_sum(top ** p) / n, kernels.pairwise_sum(v_sorted ** p) / n


def _crossing(ps, logs, level):
    """First ``p`` where ``logs`` rises to ``level``, linearly interpolated."""
    for k, (p, g) in enumerate(zip(ps, logs)):
        if g >= level:
            if k == 0:
                return float(p)
            p0, g0 = ps[k - 1], logs[k - 1]
            if not math.isfinite(g0):
                return float(p)
            return float(p0 + (level - g0) * (p - p0) / (g - g0))
    return float("inf")


def estimate_threshold_exponent(fields, p_scan, directions=None, factor=None, rule="tail",
                                tail_count=None) -> float:
    """Estimated largest ``p`` with a finite cell moment ``int_Q |P e|^p``.

    ``fields`` is either analytic cell data (the first scanned ``p`` whose moment
    is infinite is returned) or a sequence of corrector fields (solutions or
    ``P`` arrays) at two or more resolutions. For grids the finest pair of
    consecutive resolutions is compared:

    ``rule="tail"`` (default) compares the contribution of the ``tail_count``
    largest voxels (default ``2**dim``) to the moment. For a field blowing up
    like ``s^-b`` at a point this ratio is ``2^(p b - dim)`` under halving of
    the voxel size, so it reaches 1 exactly at the integrability threshold.
    ``rule="moment"`` compares full voxel averages. Either way divergence is
    declared when the ratio reaches ``factor`` (default 1 for ``"tail"``, 2 for
    ``"moment"``); returns ``inf`` if it never does.
    """
    ps = [float(p) for p in p_scan]
    for p in ps:
        _check_p(p)
    if hasattr(fields, "cell_moment"):
        d = 3
        for p in ps:
            if math.isinf(fields.cell_moment(np.eye(d)[0], p)):
                return p
        return float("inf")
    fields = list(fields)
    if len(fields) < 2:
        raise ValueError("threshold estimation needs at least two grid resolutions")
    Ps = [_flat(f.P if hasattr(f, "P") else f) for f in fields]
    Ps.sort(key=lambda P: P.shape[0])
    coarse, fine = Ps[-2], Ps[-1]
    if coarse.shape[0] == fine.shape[0]:
        raise ValueError("threshold estimation needs distinct grid resolutions")
    d = fine.shape[-1]
    count = 2 ** d if tail_count is None else int(tail_count)
    if rule not in ("tail", "moment"):
        raise ValueError(f"unknown rule {rule!r}")
    dirs = np.eye(d) if directions is None else np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if factor is None:
        factor = 1.0 if rule == "tail" else 2.0
    level = math.log(factor)
    best = float("inf")
    for xi in dirs:
        vc, vf = _image_sorted(coarse, xi), _image_sorted(fine, xi)
        logs = []
        for p in ps:
            tc, mc = _contribution(vc, p, count)
            tf, mf = _contribution(vf, p, count)
            a, b = (tf, tc) if rule == "tail" else (mf, mc)
            logs.append(math.log(a / b) if a > 0 and b > 0 else -math.inf)
        best = min(best, _crossing(ps, logs, level))
    return best


def _cell_label(phase):
    return WHOLE_CELL if phase is None else int(phase)


@dataclass(frozen=True)
class ConcentrationReport:
    """Moments per ``(p, phase)`` with divergence flags.

    ``rows`` are dicts with the CSV columns (phase ``-1`` is the whole cell);
    ``f_inf`` maps phase label to the
    discrete maximum per resolution; ``grid_limited`` is set when the maximum
    grows by more than 1% under refinement (a singular field).
    """

    rows: tuple
    f_inf: dict = field(default_factory=dict)
    grid_limited: bool = False
    threshold_estimate: float = float("inf")
    notes: dict = field(default_factory=dict)
    source: str = "numeric"

    def value(self, p, phase=None) -> float:
        for r in self.rows:
            if r["p"] == float(p) and r["phase"] == _cell_label(phase):
                return r["value"]
        raise KeyError((p, phase))

    def to_dict(self) -> dict:
        def enc(v):
            return INF_LITERAL if isinstance(v, float) and math.isinf(v) else v

        return {
            "source": self.source,
            "rows": [{k: enc(v) for k, v in r.items()} for r in self.rows],
            "f_inf": {str(k): [enc(v) for v in vals] for k, vals in self.f_inf.items()},
            "grid_limited": self.grid_limited,
            "threshold_estimate": enc(self.threshold_estimate),
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([format_value(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()


def format_value(v) -> str:
    """CSV cell text: numbers, booleans as 0/1, and the literal ``+inf``."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, float):
        return INF_LITERAL if math.isinf(v) else repr(v)
    return str(v)


def report_from_solutions(solutions, spec: MomentSpec, factor=None, rule="tail") -> ConcentrationReport:
    """Report on the finest of ``solutions``; coarser grids feed the divergence
    diagnostics (threshold estimate and ``f_inf`` trend)."""
    sols = sorted(solutions, key=lambda s: s.grid.resolution)
    fine = sols[-1]
    xi = _xi(spec.gradient, fine.grid.dim)
    phases = [None] + list(spec.phases)
    threshold = float("inf")
    if len(sols) >= 2:
        threshold = estimate_threshold_exponent(sols, spec.p_grid, xi[None], factor, rule)
    finf = {}
    for ph in phases:
        finf[_cell_label(ph)] = [moment_finf(s.P, s.grid.phase, ph, xi) for s in sols]
    grid_limited = any(v[-1] > 1.01 * v[0] for v in finf.values() if len(v) > 1)
    rows = []
    for p in spec.p_grid:
        for ph in phases:
            val = phase_moment_fp(fine.P, fine.grid.phase, ph, xi, p) if ph is not None \
                else moment_fp(fine.P, xi, p)
            rows.append({"p": p, "phase": _cell_label(ph), "value": float(val),
                         "divergent_flag": bool(p >= threshold), "resolution": fine.grid.resolution})
    notes = {"resolutions": [s.grid.resolution for s in sols], "divergence_rule": rule,
             "divergence_factor": factor}
    return ConcentrationReport(tuple(rows), finf, grid_limited, threshold, notes, "numeric")


def report_from_analytics(analytics, spec: MomentSpec) -> ConcentrationReport:
    """Report built from closed-form cell moments (resolution column 0)."""
    xi = _xi(spec.gradient, 3)
    phases = [None] + list(spec.phases)
    rows = []
    for p in spec.p_grid:
        for ph in phases:
            m = analytics.cell_moment(xi, p, ph)
            val = float("inf") if math.isinf(m) else m ** (1.0 / p)
            rows.append({"p": p, "phase": _cell_label(ph), "value": val,
                         "divergent_flag": math.isinf(val), "resolution": 0})
    singular = bool(analytics.cell.crystallites)
    finf = {_cell_label(ph): [float("inf") if singular and ph != 0 else float(np.linalg.norm(xi))]
            for ph in phases}
    threshold = analytics.p_c if singular else float("inf")
    return ConcentrationReport(tuple(rows), finf, singular, threshold,
                               {"mode": analytics.mode}, "analytic")
