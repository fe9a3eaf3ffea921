"""Norms, epsilon sweeps, fitted bound constants and the wall temperature jump."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collision import maxwellian_sqrt
from .grid import Sector, SpatialGrid
from .maxwell import WeightSpec, weight_w

LAYER_ZONE = 5.0


# -- norms -----------------------------------------------------------------------------


@dataclass(frozen=True)
class NormTriple:
    weighted_Linf: float
    Lp_macro: float
    L2_micro: float
    p: float
    boundary_L2: float | None = None
    boundary_Linf: float | None = None

    def __post_init__(self):
        for k in ("weighted_Linf", "Lp_macro", "L2_micro"):
            if not getattr(self, k) >= 0:
                raise ValueError(f"{k} must be nonnegative")

    def as_dict(self) -> dict:
        return {"weighted_Linf": self.weighted_Linf, "Lp_macro": self.Lp_macro, "L2_micro": self.L2_micro}


def _invariant_basis(sector: Sector) -> np.ndarray:
    v = sector.nodes
    s2 = np.sum(v * v, axis=1)
    full = {"mass": np.ones(len(v)), "v1": v[:, 0], "v2": v[:, 1], "v3": v[:, 2], "energy": s2}
    names = {"full": list(full), "axisym": ["mass", "v1", "energy"], "odd2": ["v2"], "odd3": ["v3"]}[sector.name]
    return np.array([full[k] for k in names])


def macro_part(F: np.ndarray, M: np.ndarray, sector: Sector) -> np.ndarray:
    """P_M F: the orthogonal projection of F onto span{1, v, |v|^2} M in the
    inner product int f g / M, node by node (F, M of shape (..., n))."""
    F = np.asarray(F, dtype=float)
    M = np.broadcast_to(M, F.shape)
    X = _invariant_basis(sector)
    w = sector.weights
    out = np.empty_like(F)
    for idx in np.ndindex(F.shape[:-1]):
        m = M[idx]
        B = X * m
        gram = (B * (w / m)) @ B.T
        out[idx] = np.linalg.solve(gram, (B * w) @ (F[idx] / m)) @ B
    return out


def norm_triple(F, M, x: SpatialGrid, sector: Sector, spec: WeightSpec | None = None, p: float = 4.0,
                nu=None, boundary: bool = False) -> NormTriple:
    """(||w F/sqrt(mu)||_inf, ||P_M F/sqrt(M)||_p, ||nu^(1/2)(I - P_M) F/sqrt(M)||_2)
    with grid maxima for the sup norm and trapezoid-in-x quadrature otherwise.
    mu is the unit Maxwellian at theta = 1; ``nu`` defaults to one."""
    if not p > 2:
        raise ValueError("p must exceed 2")
    spec = spec or WeightSpec()
    F = np.asarray(F, dtype=float)
    M = np.asarray(M, dtype=float)
    v = sector.nodes
    sup = float(np.max(np.abs(F * weight_w(spec, v) / maxwellian_sqrt(v, 1.0)))) if F.size else 0.0
    PF = macro_part(F, M, sector)
    sqM = np.sqrt(M)
    wv = sector.weights
    Lp = float(x.integrate(np.sum(np.abs(PF / sqM) ** p * wv, axis=-1)) ** (1 / p))
    micro = (F - PF) / sqM
    nu = np.ones_like(F) if nu is None else np.broadcast_to(nu, F.shape)
    L2 = float(np.sqrt(max(x.integrate(np.sum(nu * micro * micro * wv, axis=-1)), 0.0)))
    bL2 = bLinf = None
    if boundary:
        v1 = v[:, 0]
        tot, mx = 0.0, 0.0
        for j, out in ((0, v1 < 0), (-1, v1 > 0)):
            f = np.where(out, F[j], 0.0)
            tot += float(np.sum(f * f / M[j] * np.abs(v1) * wv))
            mx = max(mx, float(np.max(np.abs(f * weight_w(spec, v) / maxwellian_sqrt(v, 1.0)))))
        bL2, bLinf = float(np.sqrt(tot)), mx
    return NormTriple(sup, Lp, L2, float(p), bL2, bLinf)


# -- bounds of the expansion -----------------------------------------------------------


def _decay_fit(x, values, eps, start: float = 0.5, floor: float = 1e-6):
    """log sup ~ log C - sigma x/eps over the resolved part of the layer:
    x/eps >= ``start`` up to where it first falls below ``floor`` times its
    peak (beyond that the layer sits at the truncation and rounding level)."""
    y = np.asarray(x) / eps
    values = np.asarray(values, dtype=float)
    peak = float(np.max(values)) if values.size else 0.0
    below = np.flatnonzero(values < floor * peak)
    end = below[0] if below.size else values.size
    sel = np.zeros(values.size, dtype=bool)
    sel[:end] = True
    sel &= y >= start
    if sel.sum() < 3:
        return {"C": float("nan"), "sigma": float("nan"), "r2": 0.0, "envelope": float("nan")}
    ly = np.log(values[sel])
    A = np.vstack([np.ones(sel.sum()), -y[sel]]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss if ss > 0 else 1.0
    C, sigma = float(np.exp(coef[0])), float(coef[1])
    # smallest C' with values <= C' exp(-sigma y) on the whole resolved range
    keep = np.arange(values.size) < end
    env = float(np.max(values[keep] * np.exp(sigma * y[keep]))) if sigma > 0 else float("inf")
    return {"C": C, "sigma": sigma, "r2": r2, "envelope": env}


def expansion_bounds(bundle, spec: WeightSpec | None = None) -> dict:
    """Fitted constants of the pointwise and integral bounds on G, the layers,
    F2, A_s and r, each normalized by max |theta'| (the layers by the wall
    gradient)."""
    b = bundle
    spec = spec or WeightSpec()
    s = b.sector
    v = s.nodes
    x = b.x.nodes
    wmu = weight_w(spec, v) / maxwellian_sqrt(v, 1.0)
    speed = np.sqrt(np.sum(v * v, axis=1))
    g = np.abs(b.dtheta)
    gmax = float(np.max(g))
    out = {"max_dtheta": gmax}
    if gmax == 0.0:
        return out | {"C_G": 0.0}
    env = (1 + speed) ** 4 * b.M * g[:, None]
    out["C_G"] = float(np.max(np.abs(b.G) / np.maximum(env, 1e-300)))
    out["F2_weighted"] = float(np.max(np.abs(b.F2) * wmu)) / gmax
    out["dF2_weighted"] = float(np.max(np.abs(b.dF2) * wmu)) / gmax
    d0, d1 = b.dtheta[0], b.dtheta[-1]
    B0 = np.max(np.abs(b.B0) * wmu, axis=1) / abs(d0)
    B1 = np.max(np.abs(b.B1) * wmu, axis=1) / abs(d1)
    f0 = _decay_fit(x, B0, b.eps)
    f1 = _decay_fit(1.0 - x[::-1], B1[::-1], b.eps)
    for k, f in ((0, f0), (1, f1)):
        out.update({f"B{k}_C": f["C"], f"B{k}_sigma": f["sigma"], f"B{k}_r2": f["r2"], f"B{k}_envelope": f["envelope"]})
    Mc = 0.5 * (b.M[1:] + b.M[:-1])
    nuc = 0.5 * (b.nu[1:] + b.nu[:-1])
    dx = np.diff(x)
    out["A_s_sup"] = float(np.max(np.abs(b.A_s) * wmu / nuc)) / gmax
    l2 = np.sqrt(float(np.sum(dx * np.sum(b.A_s ** 2 / (nuc * Mc) * s.weights, axis=1))))
    out["A_s_L2"] = l2
    out["A_s_L2_const"] = l2 / (np.sqrt(b.eps) * gmax)
    v1 = v[:, 0]
    rb = 0.0
    for r, M, inc in ((b.r0, b.M[0], v1 > 0), (b.r1, b.M[-1], v1 < 0)):
        rr = np.where(inc, r, 0.0)
        rb = max(rb, float(np.max(np.abs(rr) * wmu)) + float(np.sqrt(np.sum(rr ** 2 / M * np.abs(v1) * s.weights))))
    out["r_const"] = rb / gmax
    out["m_eps"] = float(b.m_eps)
    return out


# -- sweeps ------------------------------------------------------------------------------


def fit_slope(eps, values) -> tuple[float, float, float]:
    """(slope, intercept, r^2) of log(values) against log(eps)."""
    le = np.log(np.asarray(eps, dtype=float))
    lv = np.log(np.abs(np.asarray(values, dtype=float)))
    if le.size < 2:
        return float("nan"), float("nan"), 0.0
    coef = np.polyfit(le, lv, 1)
    pred = np.polyval(coef, le)
    ss = float(np.sum((lv - lv.mean()) ** 2))
    r2 = 1.0 - float(np.sum((lv - pred) ** 2)) / ss if ss > 0 else 1.0
    return float(coef[0]), float(coef[1]), r2


@dataclass
class SweepResult:
    eps: list
    metrics: dict
    slopes: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps values must be strictly decreasing")
        self.refit()

    def refit(self):
        self.slopes = {}
        for name, vals in self.metrics.items():
            pts = [(e, v) for e, v in zip(self.eps, vals) if v is not None and np.isfinite(v) and v != 0]
            if len(pts) >= 3:
                self.slopes[name] = fit_slope(*zip(*pts))


def eps_sweep(eps_list, run, metrics=None) -> SweepResult:
    """Call ``run(eps) -> dict of metrics`` for every eps (largest first); a
    failing eps is recorded and the sweep continues."""
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if len(eps_list) < 3:
        raise ValueError("a sweep needs at least three eps values")
    rows, failures = {}, {}
    for e in eps_list:
        try:
            rows[e] = run(e)
        except Exception as exc:  # recorded, the sweep goes on
            failures[e] = f"{type(exc).__name__}: {exc}"
            rows[e] = {}
    names = metrics or sorted({k for r in rows.values() for k in r})
    table = {k: [rows[e].get(k) for e in eps_list] for k in names}
    return SweepResult(eps_list, table, failures=failures)


def kinetic_metrics(result, spec: WeightSpec | None = None) -> dict:
    """Sweep metrics of one solve_full result."""
    b = result.bundle
    out = {"distance": result.distance, "iterations": result.report.iterations,
           "mass_factor_defect": abs(result.mass_factor - 1.0)}
    out.update({f"remainder_{k}": v for k, v in result.report.norms.as_dict().items()})
    out.update(expansion_bounds(b, spec))
    return out


def write_sweep_csv(result: SweepResult, path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "metric", "value"])
        for name in sorted(result.metrics):
            for e, v in zip(result.eps, result.metrics[name]):
                w.writerow([repr(e), name, "" if v is None else repr(float(v))])
    spath = path.with_name(path.stem + "_slopes.csv")
    with spath.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "slope", "intercept", "r2"])
        for name in sorted(result.slopes):
            w.writerow([name] + [repr(float(c)) for c in result.slopes[name]])
    return path, spath


PLOT_TEMPLATE = '''import csv
import collections
import matplotlib.pyplot as plt

rows = collections.defaultdict(list)
with open({csv!r}) as fh:
    for r in csv.DictReader(fh):
        if r["value"]:
            rows[r["metric"]].append((float(r["eps"]), abs(float(r["value"]))))
for name in {names!r}:
    pts = sorted(rows.get(name, []))
    if pts:
        plt.loglog(*zip(*pts), "o-", label=name)
plt.xlabel("eps")
plt.legend()
plt.savefig({png!r})
'''


def write_plot_script(csv_path: str | Path, names, path: str | Path | None = None) -> Path:
    csv_path = Path(csv_path)
    path = Path(path) if path else csv_path.with_suffix(".plot.py")
    path.write_text(PLOT_TEMPLATE.format(csv=csv_path.name, names=list(names),
                                         png=csv_path.with_suffix(".png").name), newline="\n")
    return path


# -- temperature jump ---------------------------------------------------------------------


def gas_moments(F, sector: Sector):
    """(rho, theta) of each row of F, with theta = int |v|^2 F / (3 rho)."""
    s2 = np.sum(sector.nodes ** 2, axis=1)
    rho = sector.integrate(F)
    return rho, sector.integrate(F * s2) / (3.0 * rho)


@dataclass
class JumpReport:
    jump: tuple
    gradient: tuple
    ratio: tuple
    predicted: tuple
    rel_error: tuple
    theta_gas: np.ndarray
    fit: np.ndarray


def temperature_jump_report(F, x: SpatialGrid, sector: Sector, eps: float, theta_w: tuple, P0: float,
                            c_beta2, degree: int = 2, zone: float = LAYER_ZONE) -> JumpReport:
    """Gas temperature from the moments of F, a polynomial fit over the bulk
    [zone eps, 1 - zone eps], extrapolated to both walls.  The jump at a wall
    is theta_fit - theta_w; the ratio jump / (eps dtheta/dn) with the
    inward-pointing derivative is compared with c_beta2 theta_w / P0."""
    rho, th = gas_moments(F, sector)
    xs = x.nodes
    sel = (xs >= zone * eps) & (xs <= 1 - zone * eps)
    if sel.sum() < degree + 2:
        raise ValueError(f"bulk window [{zone * eps:g}, {1 - zone * eps:g}] holds too few nodes for the fit")
    cb = np.broadcast_to(np.asarray(c_beta2, dtype=float), (2,))
    coef = np.polyfit(xs[sel], th[sel], degree)
    d = np.polyder(coef)
    jumps, grads, ratios, preds, errs = [], [], [], [], []
    for k, (xw, sgn) in enumerate(((0.0, 1.0), (1.0, -1.0))):
        jmp = float(np.polyval(coef, xw)) - theta_w[k]
        gn = sgn * float(np.polyval(d, xw))
        pred = float(cb[k]) * theta_w[k] / P0
        ratio = jmp / (eps * gn) if gn != 0 else 0.0
        jumps.append(jmp)
        grads.append(gn)
        ratios.append(ratio)
        preds.append(pred)
        errs.append(abs(ratio - pred) / abs(pred) if gn != 0 and pred != 0 else 0.0)
    return JumpReport(tuple(jumps), tuple(grads), tuple(ratios), tuple(preds), tuple(errs), th, coef)


def write_jump_csv(report: JumpReport, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wall", "jump", "normal_gradient", "ratio", "predicted", "rel_error"])
        for k in range(2):
            w.writerow([k, repr(report.jump[k]), repr(report.gradient[k]), repr(report.ratio[k]),
                        repr(report.predicted[k]), repr(report.rel_error[k])])
    return path
