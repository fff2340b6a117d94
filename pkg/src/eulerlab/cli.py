"""Command-line driver: `eulerlab verify | run | report`.

Runs are configured by one TOML file (sections run, domain, quadrature,
psystem, tolerances, verify); command-line flags override single keys.
Exit codes: 0 success, 1 invariant failure, 2 config error, 3 runtime error.
"""
import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import construct, diagnostics
from .grid import BoxUnion, build_grid, omega_tau_sets

SCENARIOS = ("a", "b", "c", "initial-data", "psystem")
EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    dimension: int = 2
    scenario: str = "a"
    seed: int = 0
    budget: int = 2
    level: float = 1.0
    horizon: float = 0.5
    threads: int = 1
    out: str = "eulerlab-out"
    boxes: list = None                  # [[lo, hi], ...]; unit cube when omitted
    order: int = 6
    probes: int = 16
    scales: int = 3
    energy_times: int = 13
    exponent: float = 2.0               # p(rho) = rho ** exponent
    invariant: float = 1e-12
    energy_rtol: float = 1e-3
    residual_factor: float = 3.0
    grid_factor: float = 3.0
    samples: int = 20000

    def omega(self):
        return BoxUnion.from_boxes([(np.asarray(a, float), np.asarray(b, float)) for a, b in self.boxes])

    def resolved(self):
        return dataclasses.asdict(self)


# section -> {key: (type, doc)}
SCHEMA = {
    "run": {
        "dimension": (int, "spatial dimension n; 2 or 3 (n >= 4 only for verify's states suite)"),
        "scenario": (str, "one of " + ", ".join(SCENARIOS)),
        "seed": (int, "master seed for every random choice"),
        "budget": (int, "iteration budget of the initial-data construction"),
        "level": (float, "constant energy level of the construction"),
        "horizon": (float, "half-width T of the initial-data time interval"),
        "threads": (int, "worker-pool size for per-probe diagnostics"),
        "out": (str, "output directory"),
    },
    "domain": {"boxes": (list, "box union as a list of [lo, hi] corner pairs")},
    "quadrature": {
        "order": (int, "Gauss-Legendre order of the generalized-energy quadrature"),
        "probes": (int, "probes per family in the test-function battery"),
        "scales": (int, "dyadic probe scales"),
        "energy_times": (int, "time samples of energy profiles"),
    },
    "psystem": {"exponent": (float, "pressure law p(rho) = rho ** exponent")},
    "tolerances": {
        "invariant": (float, "relative tolerance of the algebraic invariants"),
        "energy_rtol": (float, "relative tolerance of energy classification"),
        "residual_factor": (float, "residuals must stay below this multiple of their error bars"),
        "grid_factor": (float, "grid measure error allowance in units of h * perimeter"),
    },
    "verify": {"samples": (int, "random samples per invariant check")},
}


def config_reference():
    """Markdown page listing every key with its default."""
    d = RunConfig()
    lines = ["# eulerlab configuration reference", ""]
    for sec, keys in SCHEMA.items():
        lines.append(f"## [{sec}]")
        lines.append("")
        for k, (_, doc) in keys.items():
            default = getattr(d, k)
            if k == "boxes":
                default = "unit cube [0, 1]^n"
            lines.append(f"- `{k}` (default `{default}`): {doc}")
        lines.append("")
    return "\n".join(lines)


def _line_of(text, section, key):
    sec = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            sec = s.strip("[]").strip()
        elif sec == section and s.split("=", 1)[0].strip() == key:
            return i
    return None


def _fail(text, section, key, msg):
    line = _line_of(text, section, key) if text else None
    where = f" (line {line})" if line else ""
    raise ConfigError(f"[{section}] {key}{where}: {msg}")


def load_config(path=None, overrides=None, text=None):
    """Parse, type-check and validate a config; flags in `overrides` win."""
    if text is None and path is not None:
        try:
            with open(path, "rb") as fh:
                raw = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        text = raw.decode("utf-8", errors="replace")
    data = {}
    if text:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"parse error: {e}") from None
    values = {}
    for sec, body in data.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        for key, val in body.items():
            if key not in SCHEMA[sec]:
                _fail(text, sec, key, "unknown key")
            typ = SCHEMA[sec][key][0]
            if typ is float and isinstance(val, int) and not isinstance(val, bool):
                val = float(val)
            if not isinstance(val, typ) or isinstance(val, bool):
                _fail(text, sec, key, f"expected {typ.__name__}, got {type(val).__name__}")
            values[key] = (sec, val)
    cfg = RunConfig(**{k: v for k, (_, v) in values.items()})
    for k, v in (overrides or {}).items():
        if v is not None:
            setattr(cfg, k, v)
            values[k] = ("flag", v)
    _validate(cfg, text, {k: s for k, (s, _) in values.items()})
    return cfg


def _validate(cfg, text, sections):
    def bad(key, msg):
        sec = sections.get(key)
        if sec == "flag":
            raise ConfigError(f"--{key}: {msg}")
        sec = sec or next(s for s, keys in SCHEMA.items() if key in keys)
        _fail(text, sec, key, msg)

    if cfg.dimension < 2:
        bad("dimension", f"must be >= 2, got {cfg.dimension}")
    if cfg.scenario not in SCENARIOS:
        bad("scenario", f"unknown scenario {cfg.scenario!r}")
    for key in ("budget", "threads", "order", "probes", "scales", "samples"):
        if getattr(cfg, key) < 1:
            bad(key, "must be positive")
    if cfg.energy_times < 2:
        bad("energy_times", "must be at least 2")
    for key in ("level", "horizon", "invariant", "energy_rtol", "residual_factor", "grid_factor",
                "exponent"):
        if not getattr(cfg, key) > 0:
            bad(key, "must be positive")
    if cfg.boxes is None:
        cfg.boxes = [[[0.0] * cfg.dimension, [1.0] * cfg.dimension]]
    try:
        lo = np.asarray([b[0] for b in cfg.boxes], float)
        hi = np.asarray([b[1] for b in cfg.boxes], float)
    except (TypeError, ValueError, IndexError):
        bad("boxes", "expected [[lo, hi], ...] with numeric corners")
    if lo.ndim != 2 or lo.shape != hi.shape or lo.shape[1] != cfg.dimension:
        bad("boxes", f"corners must have {cfg.dimension} coordinates")
    if np.any(hi <= lo):
        bad("boxes", "every box needs lo < hi")


# ---------------------------------------------------------------- artifacts

def _fmt(x):
    return diagnostics._fmt(x)


def write_rows(path, rows):
    """CSV of a list of dicts with a shared key order."""
    if not rows:
        diagnostics.write_csv(path, ["empty"], [])
        return
    keys = list(rows[0].keys())
    diagnostics.write_csv(path, keys, [[r[k] for k in keys] for r in rows])


def svg_plot(path, series, title, xlabel, ylabel, logy=False, width=640, height=420):
    """Minimal line plot as a standalone SVG document."""
    pad_l, pad_r, pad_t, pad_b = 70, 20, 40, 50
    xs = np.concatenate([np.asarray(s[1], float) for s in series])
    ys = np.concatenate([np.asarray(s[2], float) for s in series])
    tf = (lambda y: np.log10(np.maximum(y, 1e-300))) if logy else (lambda y: y)
    good = np.isfinite(xs) & np.isfinite(tf(ys))
    if not good.any():
        xs, ys, good = np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([True, True])
    x0, x1 = float(xs[good].min()), float(xs[good].max())
    y0, y1 = float(tf(ys[good]).min()), float(tf(ys[good]).max())
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    W, H = width - pad_l - pad_r, height - pad_t - pad_b
    px = lambda x: pad_l + (x - x0) / (x1 - x0) * W
    py = lambda y: pad_t + H - (tf(y) - y0) / (y1 - y0) * H
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-size="15">{title}</text>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{W}" height="{H}" fill="none" stroke="black"/>',
           f'<text x="{pad_l + W / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="16" y="{pad_t + H / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 16 {pad_t + H / 2:.1f})">{ylabel}{" (log10)" if logy else ""}</text>']
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{px(xv):.1f}" y="{pad_t + H + 16}" text-anchor="middle" font-size="10">{xv:.3g}</text>')
        ypix = pad_t + H - k / 4 * H
        out.append(f'<text x="{pad_l - 6}" y="{ypix + 3:.1f}" text-anchor="end" font-size="10">{yv:.3g}</text>')
    for i, (label, x, y) in enumerate(series):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(tf(y))
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], y[ok]))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{pad_l + 8}" y="{pad_t + 16 + 14 * i}" font-size="11" fill="{c}">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def write_manifest(out, cfg, command, artifacts, status, summary):
    man = {"command": command, "status": status, "config": cfg.resolved(), "summary": summary,
           "artifacts": {a: _sha256(os.path.join(out, a)) for a in sorted(artifacts)}}
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


# ---------------------------------------------------------------- verify

def _random_states(rng, count, n):
    from .states import traceless_product_batch
    v = rng.normal(size=(count, n))
    a = rng.normal(size=(count, n))
    u = traceless_product_batch(a, a) * rng.random((count, 1, 1)) - \
        traceless_product_batch(v, v) * rng.random((count, 1, 1))
    return v, u


def verify_checks(cfg):
    """(suite, check, value, tolerance) rows; value <= tolerance passes."""
    from .hull import classify_batch
    from .states import energy_density_batch, lambda_max_batch, traceless_product_batch
    from .waves import atom_residual, symbol_eval, WaveAtom

    n = cfg.dimension
    rng = np.random.default_rng(cfg.seed)
    m = cfg.samples
    tol = cfg.invariant
    rows = []
    v, u = _random_states(rng, m, n)
    e = energy_density_batch(v, u)
    scale = np.maximum(1.0, np.abs(e))
    kin = 0.5 * np.sum(v * v, axis=1)
    rows.append(("states", "kinetic_dominance", float(np.max((kin - e) / scale)), tol))
    linf = np.max(np.abs(u), axis=(1, 2))
    rows.append(("states", "linf_bound", float(np.max((linf - 2 * (n - 1) / n * e) / scale)), tol))
    w = rng.normal(size=(m, n))
    ew = energy_density_batch(w, traceless_product_batch(w, w))
    kw = 0.5 * np.sum(w * w, axis=1)
    rows.append(("states", "euler_state_equality",
                 float(np.max(np.abs(ew - kw) / np.maximum(1.0, kw))), tol))
    sym = v[:, :, None] * v[:, None, :] - u
    lm = lambda_max_batch(sym)
    ev = np.linalg.eigvalsh(sym)[:, -1]
    rows.append(("states", "lambda_max_vs_lapack",
                 float(np.max(np.abs(lm - ev) / np.maximum(1.0, np.abs(ev)))), max(tol, 1e-12)))
    # hull: convex combinations of Euler states of speed r lie in the closed hull
    r = 1.0
    k = n * (n + 3) // 2
    dirs = rng.normal(size=(m, k, n))
    dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
    lam = rng.dirichlet(np.ones(k), size=m)
    hv = np.einsum("mk,mkn->mn", lam, r * dirs)
    hu = np.einsum("mk,mkij->mij", lam, traceless_product_batch(r * dirs.reshape(-1, n),
                                                                r * dirs.reshape(-1, n)).reshape(m, k, n, n))
    eh = energy_density_batch(hv, hu)
    rows.append(("hull", "combination_inside", float(np.max(eh - 0.5 * r * r)), tol))
    cls = classify_batch(hv, hu, np.full(m, r))
    rows.append(("hull", "classified_outside", float(np.sum(cls == 2)), 0.0))
    if n in (2, 3):
        cnt = min(m, 2000)
        worst = 0.0
        for _ in range(cnt):
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            b *= np.linalg.norm(a) / np.linalg.norm(b)
            xi = rng.normal(size=n + 1)
            A = symbol_eval(a, b, xi)
            s = max(1.0, float(np.abs(A).max()))
            worst = max(worst, float(np.abs(A @ xi).max()) / s, float(np.abs(A - A.T).max()) / s,
                        abs(float(A[n, n])) / s, abs(float(np.trace(A))) / s)
        rows.append(("waves", "potential_constraints", worst, tol))
        a = np.zeros(n)
        a[0] = 1.0
        b = np.zeros(n)
        b[1] = 1.0
        atom = WaveAtom.make(a, b, 1.0, 8, np.zeros(n + 1), 1.0)
        res = atom_residual(atom, 0.1)
        rows.append(("waves", "atom_structure", max(res.symmetry, res.corner, res.trace), tol))
        lo, hi = cfg.omega().bounds()
        box = BoxUnion.box(lo, hi)
        target = 0.5 * 0.75 ** n * box.measure()
        span = float(np.min(hi - lo))
        for h in (span / 10, span / 20, span / 40):
            g = build_grid(box, 0.5 * span, 2.0 * span, h)
            for nu in (1, 2):
                err = abs(omega_tau_sets(g, nu).measure() - target)
                rows.append(("grid", f"omega_tau_measure_h{h:.4g}_nu{nu}",
                             err / (h * box.perimeter()), cfg.grid_factor))
    return rows


def cmd_verify(cfg, out=None):
    out = cfg.out if out is None else out
    os.makedirs(out, exist_ok=True)
    rows = verify_checks(cfg)
    table = [{"suite": s, "check": c, "value": float(v), "tolerance": float(t), "passed": bool(v <= t)}
             for s, c, v, t in rows]
    write_rows(os.path.join(out, "verify.csv"), table)
    failed = [r for r in table if not r["passed"]]
    status = "ok" if not failed else "invariant-failure"
    write_manifest(out, cfg, "verify", ["verify.csv"], status,
                   {"checks": len(table), "failed": [f"{r['suite']}.{r['check']}" for r in failed]})
    return (EXIT_OK if not failed else EXIT_INVARIANT), table


# ---------------------------------------------------------------- run

def _battery(cfg, omega, t_lo, t_hi, seed, initial=False):
    lo, hi = omega.bounds()
    margin = 0.1 * (hi - lo)
    return diagnostics.TestFunctionBattery(np.append(lo - margin, t_lo), np.append(hi + margin, t_hi),
                                           count=cfg.probes, scales=cfg.scales, seed=seed,
                                           initial=initial)


def _energy_artifacts(out, prof, name, title, arts):
    prof.to_csv(os.path.join(out, f"{name}.csv"))
    arts.append(f"{name}.csv")
    series = [("kinetic", prof.times, prof.kinetic)] if prof.kinetic is not None else []
    if prof.generalized is not None:
        series.append(("generalized", prof.times, prof.generalized))
    if prof.target is not None:
        series.append(("target", prof.times, prof.target))
    svg_plot(os.path.join(out, f"{name}.svg"), series, title, "t", "energy")
    arts.append(f"{name}.svg")


def _residual_vs_resolution(f, out, arts):
    """FD residual of the lifted system near one atom of the finest layer."""
    layers = diagnostics._field_layers(f)
    if not layers:
        return None
    L = layers[-1]
    c = L.centers[len(L) // 2]
    lo, hi = c - 0.25 * L.h, c + 0.25 * L.h
    # stay on one side of t = 0, where scenario fields switch on
    lo[-1], hi[-1] = c[-1] + 0.1 * L.h, c[-1] + 0.4 * L.h
    win = (lo, hi)
    rows = []
    for res in (50, 100, 200, 400):
        rep = diagnostics.linear_residual(f, win, res, points=5)
        rows.append({"resolution": res, "max_residual": rep.max, "richardson_error": float(np.max(rep.errors))})
    write_rows(os.path.join(out, "residual_resolution.csv"), rows)
    svg_plot(os.path.join(out, "residual_resolution.svg"),
             [("max FD residual", [r["resolution"] for r in rows], [r["max_residual"] for r in rows])],
             "linear residual vs resolution", "points per window side", "residual", logy=True)
    arts += ["residual_resolution.csv", "residual_resolution.svg"]
    return rows


def _dump(out, f, omega, arts, t=0.0, k=65):
    lo, hi = omega.bounds()
    diagnostics.write_field_dump(os.path.join(out, "field_t0.txt"), f, lo, hi, (k,) * omega.n, t)
    arts.append("field_t0.txt")


def _initial_data(cfg, omega, level=None):
    return construct.build_initial_data(omega, cfg.horizon, cfg.budget, cfg.seed,
                                        cfg.level if level is None else level)


def _report_rows(run):
    rows = []
    rec = run.recursion()
    for k, rep in enumerate(run.reports):
        row = {"k": k + 1}
        row.update(rep.row())
        row.update({"alpha_k": rec[k]["alpha"], "alpha_next": rec[k]["alpha_next"],
                    "recursion_bound": rec[k]["bound"], "recursion_holds": rec[k]["holds"],
                    "gap": run.gaps[k], "gap_next": run.gaps[k + 1], "eta": run.etas[k],
                    "mollifier_l1_bound": run.mollifier_l1[k], "weak2": run.weak2[k]})
        rows.append(row)
    return rows


def _run_initial_artifacts(out, run, arts):
    rows = _report_rows(run)
    write_rows(os.path.join(out, "improvement_reports.csv"), rows)
    arts.append("improvement_reports.csv")
    ks = np.arange(1, len(run.alphas) + 1)
    svg_plot(os.path.join(out, "deficit_vs_k.svg"),
             [("alpha_k", ks, run.alphas), ("t=0 gap", np.arange(1, len(run.gaps) + 1), run.gaps)],
             "deficit vs iteration", "k", "deficit")
    arts.append("deficit_vs_k.svg")
    return rows


def cmd_run(cfg, out=None, log=print):
    """Execute the configured scenario; returns (exit status, summary dict)."""
    out = cfg.out if out is None else out
    n = cfg.dimension
    if n not in (2, 3):
        raise ConfigError(f"[run] dimension: run needs n in {{2, 3}}, got {n}")
    os.makedirs(out, exist_ok=True)
    omega = cfg.omega()
    arts = []
    summary = {"scenario": cfg.scenario}
    failures = []
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        sc = cfg.scenario
        level = cfg.level
        if sc == "psystem":
            law = lambda r, e=cfg.exponent: np.asarray(r, float) ** e
            gamma = float(law(2.0) - law(1.0))
            level = 0.5 * n * gamma
        log(f"building initial data: budget {cfg.budget}, level {level:g}")
        run = _initial_data(cfg, omega, level)
        rows = _run_initial_artifacts(out, run, arts)
        summary["recursion_holds"] = all(r["recursion_holds"] for r in rows)
        summary["gap_decreasing"] = run.gap_decreasing()
        if not summary["recursion_holds"]:
            failures.append("recursion")
        vbar = run.final
        if sc == "initial-data":
            f = vbar
            times = np.linspace(-cfg.horizon, cfg.horizon, cfg.energy_times)
            prof = diagnostics.energy_profile(f, times, omega, generalized=True, rtol=cfg.energy_rtol)
            _energy_artifacts(out, prof, "energy_profile", "initial-data subsolution energy", arts)
            gap = prof.dominance_gap()
            summary["dominance_gap"] = gap
            if gap is not None and gap < -1e-10:
                failures.append("energy dominance")
        else:
            maker = {"a": construct.scenario_a, "b": construct.scenario_b, "c": construct.scenario_c,
                     "psystem": construct.scenario_a}[sc]
            f = maker(omega, seed=cfg.seed, vbar=vbar)
            times = np.linspace(0.0, 3.0, 6 * (cfg.energy_times - 1) + 1)
            prof = diagnostics.target_profile(f.target_energy, times, cfg.energy_rtol)
            _energy_artifacts(out, prof, "target_energy", f"scenario {sc} target energy", arts)
            summary["classification"] = prof.flags
            expect = {"a": {"equality": True}, "b": {"equality": False, "strong": True},
                      "c": {"strong": False, "weak": True}, "psystem": {"equality": True}}[sc]
            if any(prof.flags[k] != v for k, v in expect.items()):
                failures.append("classification")
            bat = _battery(cfg, omega, 0.0, 0.2, cfg.seed)
            if sc == "psystem":
                ps = construct.psystem_lift(f, lambda r, e=cfg.exponent: np.asarray(r, float) ** e, omega)
                bat = _battery(cfg, omega, 0.0, 0.2, cfg.seed, initial=True)
                reps = diagnostics.psystem_residuals(ps, bat, pool=pool)
                for name, rep in reps.items():
                    rep.to_csv(os.path.join(out, f"psystem_{name}.csv"))
                    arts.append(f"psystem_{name}.csv")
                    summary[f"psystem_{name}_worst_ratio"] = rep.worst_ratio()
                    if not rep.within(cfg.residual_factor):
                        failures.append(f"psystem {name}")
            else:
                rep = diagnostics.weak_euler_residual(f, bat, pool=pool)
                rep.to_csv(os.path.join(out, "weak_euler_relaxed.csv"))
                arts.append("weak_euler_relaxed.csv")
                summary["weak_euler_worst_ratio"] = rep.worst_ratio()
                if sc == "a":
                    lvl = f.meta["level"]
                    le = diagnostics.local_energy_residual(f, (-2.0 / n * lvl, 0.0), bat,
                                                           kinetic=(lvl, 0.0), omega=omega, pool=pool)
                    le.to_csv(os.path.join(out, "local_energy.csv"))
                    arts.append("local_energy.csv")
                    summary["local_energy_worst_ratio"] = le.worst_ratio()
                    if not le.within(cfg.residual_factor):
                        failures.append("local energy")
        _residual_vs_resolution(f, out, arts)
        _dump(out, f, omega, arts)
    finally:
        if pool is not None:
            pool.shutdown()
    summary["failures"] = failures
    status = "ok" if not failures else "invariant-failure"
    write_manifest(out, cfg, "run", arts, status, summary)
    return (EXIT_OK if not failures else EXIT_INVARIANT), summary


# ---------------------------------------------------------------- report

def cmd_report(out):
    """Summarise an output directory; returns the markdown text."""
    path = os.path.join(out, "manifest.json")
    with open(path) as fh:
        man = json.load(fh)
    lines = [f"# eulerlab {man['command']} report", "", f"status: {man['status']}", ""]
    for k, v in sorted(man["summary"].items()):
        lines.append(f"- {k}: {v}")
    lines += ["", "## artifacts", ""]
    for a, h in sorted(man["artifacts"].items()):
        lines.append(f"- `{a}` sha256 {h[:16]}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out, "report.md"), "w") as fh:
        fh.write(text)
    return text


# ---------------------------------------------------------------- entry point

def build_parser():
    p = argparse.ArgumentParser(prog="eulerlab", description="convex-integration lab for Euler")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("verify", "run", "report"):
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", metavar="DIR")
        s.add_argument("--threads", type=int)
        s.add_argument("--scenario", choices=SCENARIOS)
        if name == "report":
            s.add_argument("--reference", action="store_true", help="print the config reference")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report" and args.reference:
            print(config_reference())
            return EXIT_OK
        cfg = load_config(args.config, {"seed": args.seed, "out": args.out, "threads": args.threads,
                                        "scenario": args.scenario})
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "verify":
            status, table = cmd_verify(cfg)
            for r in table:
                mark = "ok  " if r["passed"] else "FAIL"
                print(f"{mark} {r['suite']}.{r['check']}: {r['value']:.3e} (tol {r['tolerance']:.1e})")
            return status
        if args.command == "run":
            status, summary = cmd_run(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
            return status
        print(cmd_report(cfg.out), end="")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        ctx = f" in scenario {cfg.scenario}" if args.command == "run" else ""
        print(f"runtime error{ctx}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
