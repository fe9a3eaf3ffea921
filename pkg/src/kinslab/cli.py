"""Command line: ``kinslab SUBCOMMAND --config FILE [--out DIR] [--threads N] [--seed K]``.

Configs are flat ``key = value`` lines; ``#`` starts a comment.  Every run
writes its CSV artifacts and a ``manifest.json`` with the config hash, the
package versions and a checksum per artifact.  Nothing time-dependent goes
into the artifacts, so identical configs give byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import platform
import sys
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


@dataclass
class RunConfig:
    theta0: float = 1.0
    theta1: float = 1.2
    eps: float = 0.05
    eps_list: tuple = (0.1, 0.05, 0.025)
    N: int = 16
    V_max: float = 6.5
    sphere_polar: int = 4
    sphere_azimuth: int = 8
    response_points: int = 12
    Y: float = 20.0
    y_first: float = 0.02
    y_growth: float = 1.1
    y_max_cell: float = 0.25
    x_first: float = 0.05
    x_growth: float = 1.2
    x_bulk: float = 0.025
    Y_cut: float = 60.0
    beta: float = 4.0
    varpi: float = 0.125
    alpha_exponent: float = 0.25
    p: float = 4.0
    tol: float = 1e-9
    max_iter: int = 200
    c_beta2: float | None = None
    verify_N: int = 8
    seed: int = 42
    out_dir: str = "out"
    cache_dir: str = ""

    def validate(self, where=lambda key: key):
        def bad(key, msg):
            raise ConfigError(f"{where(key)}: {msg}")
        if not self.theta0 > 0:
            bad("theta0", "wall temperature must be positive")
        if not self.theta1 > 0:
            bad("theta1", "wall temperature must be positive")
        if not 0 <= self.eps <= 0.2:
            bad("eps", "must lie in [0, 0.2]")
        if not self.eps_list or any(not 0 < e <= 0.2 for e in self.eps_list):
            bad("eps_list", "values must lie in (0, 0.2]")
        if not self.beta > 3:
            bad("beta", "must exceed 3")
        if not 0 < self.varpi <= 0.125:
            bad("varpi", "must lie in (0, 1/8]")
        if not 0 < self.alpha_exponent < 0.5:
            bad("alpha_exponent", "must lie in the open interval (0, 1/2)")
        if not 2 < self.p < np.inf:
            bad("p", "must lie in (2, inf)")
        if self.N < 4 or self.verify_N < 4:
            bad("N" if self.N < 4 else "verify_N", "need at least 4 points per axis")
        for key in ("V_max", "Y", "y_first", "x_first", "x_bulk", "Y_cut", "tol"):
            if not getattr(self, key) > 0:
                bad(key, "must be positive")
        for key in ("y_growth", "x_growth"):
            if not getattr(self, key) >= 1:
                bad(key, "must be at least 1")
        if self.max_iter < 1 or self.response_points < 4:
            bad("max_iter" if self.max_iter < 1 else "response_points", "too small")
        if abs(self.theta1 - self.theta0) > 0.2:
            warnings.warn("|theta1 - theta0| > 0.2: outside the small-temperature-difference regime", stacklevel=2)
        return self

    def canonical(self) -> str:
        return "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self)) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def velocity_grid(self, N=None):
        from .grid import build_velocity_grid
        return build_velocity_grid(N or self.N, self.V_max)

    def weight(self):
        from .maxwell import WeightSpec
        return WeightSpec(self.beta, self.varpi)


def _coerce(f, text: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if f.name == "eps_list":
        return tuple(sorted(_floats(text), reverse=True))
    if f.name == "c_beta2":
        return None if text.lower() in ("", "none") else float(text)
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    known = {f.name: f for f in fields(RunConfig)}
    values, lines = {}, {}
    for no, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{no}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        try:
            values[key] = _coerce(known[key], val)
        except ValueError:
            raise ConfigError(f"{path}:{no}: cannot parse {val!r} for {key}") from None
        lines[key] = no
    cfg = RunConfig(**values)
    return cfg.validate(lambda key: f"{path}:{lines[key]}" if key in lines else f"{path}: {key}")


# -- output helpers -----------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _versions() -> dict:
    import numba
    import scipy
    from . import __version__
    return {"kinslab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": platform.python_version()}


def write_manifest(out: Path, command: str, cfg: RunConfig, artifacts) -> Path:
    files = {}
    for a in sorted(Path(p) for p in artifacts):
        files[a.name] = hashlib.sha256(a.read_bytes()).hexdigest()
    data = {"command": command, "config_hash": cfg.digest(), "seed": cfg.seed, "versions": _versions(),
            "artifacts": files}
    path = out / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", newline="\n")
    return path


# -- subcommands ------------------------------------------------------------------------------


def _slip(cfg: RunConfig, grid):
    from .milne import extract_slip_coefficients, half_space_grid
    y = half_space_grid(cfg.Y, cfg.y_first, cfg.y_growth, cfg.y_max_cell)
    return extract_slip_coefficients(grid, cfg.Y, y)


def cmd_ns(cfg: RunConfig, out: Path):
    from .ns_profile import check_jump_conditions, export_csv, solve_algebraic
    cb = cfg.c_beta2
    if cfg.eps > 0 and cb is None:
        cb = _slip(cfg, cfg.velocity_grid()).coefficients.c_beta2
    prof = solve_algebraic(cfg.theta0, cfg.theta1, cfg.eps, cb or 0.0)
    a = export_csv(prof, out / "ns_profile.csv")
    r = check_jump_conditions(prof)
    b = write_csv(out / "ns_constants.csv", ["D1", "D2", "P0", "c_beta2", "iterations", "jump_residual0",
                                             "jump_residual1", "total_mass"],
                  [[prof.D1, prof.D2, prof.P0, float(cb or 0.0), prof.iterations, r[0], r[1], prof.total_mass()]])
    return [a, b]


def cmd_milne(cfg: RunConfig, out: Path):
    from .milne import export_slip_csv
    res = _slip(cfg, cfg.velocity_grid())
    a = export_slip_csv(res, cfg.velocity_grid(), out / "milne_coefficients.csv", cfg.Y)
    rows = [[k, s.decay.C, s.decay.sigma0, s.decay.r2, bool(s.decay.ok), res.cross[k]] for k, s in res.solutions.items()]
    b = write_csv(out / "milne_decay.csv", ["problem", "C", "sigma0", "r2", "ok", "cross"], rows)
    return [a, b]


def _tools(cfg: RunConfig):
    from .collision import CollisionIntegral
    from .expansion import HeatResponse
    grid = cfg.velocity_grid()
    lo, hi = sorted((cfg.theta0, cfg.theta1))
    if lo == hi:
        hi = lo * 1.01
    Q = CollisionIntegral(grid, cfg.sphere_polar, cfg.sphere_azimuth)
    resp = HeatResponse(grid, lo, hi, points=cfg.response_points, collision=Q)
    return grid, Q, resp


def _bundle(cfg: RunConfig, eps, grid, Q, resp):
    from .expansion import build_expansion
    return build_expansion(grid, cfg.theta0, cfg.theta1, eps, cfg.alpha_exponent, response=resp, collision=Q,
                           Y_cut=cfg.Y_cut, grid_options={"first": cfg.x_first, "growth": cfg.x_growth,
                                                          "bulk": cfg.x_bulk})


def cmd_layers(cfg: RunConfig, out: Path):
    from .diagnostics import expansion_bounds
    grid, Q, resp = _tools(cfg)
    b = _bundle(cfg, cfg.eps, grid, Q, resp)
    bd = expansion_bounds(b, cfg.weight())
    rows = []
    for k, wl in enumerate((b.layers.wall0, b.layers.wall1)):
        if wl is None:
            rows.append([k, (cfg.theta0, cfg.theta1)[k], 0.0, 0.0, 0.0, 0.0, 0.0])
            continue
        rows.append([k, wl.theta_w, wl.jump_coefficient, wl.flux, bd.get(f"B{k}_C", 0.0), bd.get(f"B{k}_sigma", 0.0),
                     bd.get(f"B{k}_r2", 0.0)])
    a = write_csv(out / "layers.csv", ["wall", "theta_w", "jump_coefficient", "flux", "C", "sigma", "r2"], rows)
    return [a, *_slices(b, out, ("B0", "B1"))]


def _slices(b, out: Path, names):
    s = b.sector
    speed = np.sqrt(np.sum(s.nodes ** 2, axis=1))
    order = np.lexsort((s.nodes[:, 0], speed))
    paths = []
    for name in names:
        F = getattr(b, name)
        xs = b.x.nodes if F.shape[0] == b.x.count else b.cell_x  # A_s lives on cells
        rows = ([x, speed[k], s.nodes[k, 0], F[j, k]] for j, x in enumerate(xs) for k in order)
        p = write_csv(out / f"bundle_{name}.csv", ["x", "speed", "v1", "value"], rows)
        paths.append(p)
    script = out / "plot_bundle.py"
    script.write_text(
        "import csv\nimport matplotlib.pyplot as plt\n\n"
        f"for name in {list(names)!r}:\n"
        "    data = [tuple(map(float, r.values())) for r in csv.DictReader(open(f'bundle_{name}.csv'))]\n"
        "    xs = sorted({d[0] for d in data})\n"
        "    sup = [max(abs(d[3]) for d in data if d[0] == x) for x in xs]\n"
        "    plt.semilogy(xs, sup, label=name)\n"
        "plt.xlabel('x')\nplt.legend()\nplt.savefig('bundle.png')\n", newline="\n")
    return paths + [script]


def cmd_expand(cfg: RunConfig, out: Path):
    from .diagnostics import expansion_bounds
    grid, Q, resp = _tools(cfg)
    b = _bundle(cfg, cfg.eps, grid, Q, resp)
    bd = expansion_bounds(b, cfg.weight())
    checks = {k: v for k, v in b.checks.items() if np.isscalar(v)}
    a = write_csv(out / "expand_bounds.csv", ["quantity", "value"], sorted({**bd, **checks}.items()))
    return [a, *_slices(b, out, ("G", "B0", "B1", "F2", "A_s"))]


def _solve(cfg: RunConfig, eps, grid, Q, resp, log=None):
    from .kinetic import solve_full
    b = _bundle(cfg, eps, grid, Q, resp)
    return solve_full(eps, cfg.theta0, cfg.theta1, grid, cfg.alpha_exponent, collision=Q, tol=cfg.tol,
                      max_iter=cfg.max_iter, spec=cfg.weight(), p=cfg.p, bundle=b, log=log)


def cmd_solve(cfg: RunConfig, out: Path):
    from .diagnostics import LAYER_ZONE, gas_moments, temperature_jump_report, write_jump_csv
    from .kinetic import write_history
    grid, Q, resp = _tools(cfg)
    r = _solve(cfg, cfg.eps, grid, Q, resp)
    b = r.bundle
    rho, th = gas_moments(r.F, b.sector)
    a = write_csv(out / "solve_moments.csv", ["x", "rho", "theta", "theta_ns"],
                  zip(b.x.nodes, rho, th, b.theta))
    n = r.report.norms
    summary = {"iterations": r.report.iterations, "sweep_residual": r.report.sweep_residual,
               "transport_residual": r.report.transport_residual, "flux_drift": r.report.flux_drift,
               "distance": r.distance, "mass_factor": r.mass_factor, **{f"remainder_{k}": v for k, v in n.as_dict().items()},
               "original_residual_relative": r.original_residual["relative"]}
    c = write_csv(out / "solve_summary.csv", ["quantity", "value"], summary.items())
    h = write_history(r.report, out / "solve_history.csv")
    paths = [a, c, h]
    if not b.profile.uniform and LAYER_ZONE * cfg.eps < 0.4:
        jr = temperature_jump_report(r.F, b.x, b.sector, cfg.eps, (cfg.theta0, cfg.theta1), b.profile.P0,
                                     list(b.layers.coefficients))
        paths.append(write_jump_csv(jr, out / "solve_jump.csv"))
    return paths


def cmd_sweep(cfg: RunConfig, out: Path):
    from .diagnostics import eps_sweep, kinetic_metrics, write_plot_script, write_sweep_csv
    grid, Q, resp = _tools(cfg)
    res = eps_sweep(cfg.eps_list, lambda e: kinetic_metrics(_solve(cfg, e, grid, Q, resp), cfg.weight()))
    a, b = write_sweep_csv(res, out / "sweep.csv")
    paths = [a, b, write_plot_script(a, ["distance", "A_s_L2", "m_eps", "remainder_weighted_Linf"])]
    if res.failures:
        paths.append(write_csv(out / "sweep_failures.csv", ["eps", "error"], sorted(res.failures.items())))
    return paths


def cmd_verify(cfg: RunConfig, out: Path):
    from .verify import run_battery
    rows = run_battery(cfg)
    a = write_csv(out / "verify.csv", ["check", "value", "tolerance", "passed"], rows)
    return [a], all(r[3] for r in rows)


COMMANDS = {"ns": cmd_ns, "milne": cmd_milne, "layers": cmd_layers, "expand": cmd_expand, "solve": cmd_solve,
            "sweep": cmd_sweep, "verify": cmd_verify}


def run(command: str, cfg: RunConfig, out: Path | None = None) -> int:
    out = Path(out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.cache_dir and "KINSLAB_CACHE_DIR" not in os.environ:
        os.environ["KINSLAB_CACHE_DIR"] = cfg.cache_dir
    result = COMMANDS[command](cfg, out)
    ok = True
    if isinstance(result, tuple):
        result, ok = result
    write_manifest(out, command, cfg, result)
    return EXIT_OK if ok else EXIT_VERIFY


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="kinslab", description="Kinetic heat conduction in a slab.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="key = value configuration file")
    ap.add_argument("--out", help="output directory (overrides out_dir)")
    ap.add_argument("--threads", type=int, default=None, help="numba worker threads")
    ap.add_argument("--seed", type=int, default=None, help="seed for randomized checks (overrides seed)")
    args = ap.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if args.threads:
        import numba
        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    from .collision import InversionError
    from .expansion import ExpansionError
    from .kinetic import KineticError
    from .milne import MilneError
    from .ns_profile import ProfileError
    try:
        return run(args.command, cfg, args.out)
    except (ProfileError, MilneError, ExpansionError, KineticError, InversionError, np.linalg.LinAlgError) as exc:
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # parameters the command cannot use (eps = 0 for solve, ...)
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
