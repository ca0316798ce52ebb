"""Command-line experiment runner.

Every command reads one JSON config (``--config``), lets a few flags
override its top-level keys, echoes the resolved settings to
``<out>/resolved_config.json`` and writes CSV/JSON data files there.
Timestamps go only to ``<out>/run.log`` so data files are byte-stable.

Exit codes: 0 success, 1 check failed, 2 config error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import deconv, denoise, numerics, reconstruct
from . import mixture as mx
from .errors import DenoiseLabError, NumericalError

log = logging.getLogger("denoiselab")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3

COMMANDS = ("theorem-check", "limit-sweep", "reconstruct", "deconvolve", "mse-probe", "path-check")


class ConfigError(DenoiseLabError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"config error at '{key}': {message}")


def fmt(v):
    return f"{float(v):.17g}"


def write_csv(path, header, rows):
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def _get(cfg, key, default=None, required=False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(key, "missing required key")
    return default


def _number(value, key, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if not math.isfinite(value) or (positive and value <= 0):
        raise ConfigError(key, f"expected a positive finite number, got {value!r}")
    return int(value) if integer else float(value)


def _sigmas(value, key="sigma"):
    values = value if isinstance(value, list) else [value]
    if not values:
        raise ConfigError(key, "sweep list must not be empty")
    out = [_number(v, f"{key}[{i}]", positive=True) for i, v in enumerate(values)]
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(key, "sweep list must be sorted strictly ascending")
    return out


def _mixture(value, base_dir):
    try:
        if isinstance(value, str):
            path = Path(value)
            if not path.is_absolute():
                path = base_dir / path
            return mx.GaussianMixture.from_json(path)
        if isinstance(value, dict):
            return mx.GaussianMixture.from_dict(value)
    except (KeyError, TypeError, ValueError, OSError) as exc:
        raise ConfigError("mixture", str(exc)) from exc
    raise ConfigError("mixture", "expected an inline mixture object or a file path")


def _grid(cfg, dim):
    grid = _get(cfg, "grid", required=True)
    if not isinstance(grid, dict):
        raise ConfigError("grid", "expected an object with 'box' and 'shape'")
    box, shape = grid.get("box"), grid.get("shape")
    if not isinstance(box, list) or len(box) != dim:
        raise ConfigError("grid.box", f"expected {dim} [lo, hi] pairs")
    if not isinstance(shape, list) or len(shape) != dim:
        raise ConfigError("grid.shape", f"expected {dim} node counts")
    out_box = []
    for i, b in enumerate(box):
        if not isinstance(b, list) or len(b) != 2:
            raise ConfigError(f"grid.box[{i}]", "expected [lo, hi]")
        lo, hi = (_number(v, f"grid.box[{i}]") for v in b)
        if not hi > lo:
            raise ConfigError(f"grid.box[{i}]", "hi must exceed lo")
        out_box.append((lo, hi))
    out_shape = [_number(n, f"grid.shape[{i}]", positive=True, integer=True) for i, n in enumerate(shape)]
    return out_box, out_shape


def _points(cfg, dim):
    spec = _get(cfg, "points", {"lo": -3.0, "hi": 3.0, "count": 25})
    if not isinstance(spec, dict):
        raise ConfigError("points", "expected an object with lo, hi, count")
    lo = _number(spec.get("lo", -3.0), "points.lo")
    hi = _number(spec.get("hi", 3.0), "points.hi")
    count = _number(spec.get("count", 25), "points.count", positive=True, integer=True)
    if not hi > lo:
        raise ConfigError("points.hi", "hi must exceed lo")
    axis = np.linspace(lo, hi, count)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def load_config(args):
    path = Path(args.config)
    try:
        cfg = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("--config", "top level must be a JSON object")
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["output_dir"] = args.out
    if args.sigma is not None:
        try:
            cfg["sigma"] = [float(s) for s in args.sigma.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError("--sigma", f"cannot parse {args.sigma!r}") from exc
    if args.debug_sigma_mismatch:
        cfg["debug_sigma_mismatch"] = True
    cfg.setdefault("seed", 0)
    _number(cfg["seed"], "seed", integer=True)
    out = Path(_get(cfg, "output_dir", required=True))
    if not out.is_absolute():
        out = path.parent / out
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError("output_dir", f"not writable: {exc}") from exc
    gmm = _mixture(_get(cfg, "mixture", required=True), path.parent)
    sigmas = _sigmas(_get(cfg, "sigma", required=True))
    resolved = dict(cfg)
    resolved["mixture"] = gmm.to_dict()
    resolved["sigma"] = sigmas
    resolved["output_dir"] = str(out)
    return resolved, gmm, sigmas, out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_theorem_check(cfg, gmm, sigmas, out):
    """Score-form versus quadrature denoiser on a grid of points."""
    if gmm.dim > 2:
        raise ConfigError("mixture.dim", "theorem-check uses the quadrature oracle (d <= 2)")
    pts = _points(cfg, gmm.dim)
    nodes = _get(cfg, "nodes")
    if nodes is not None:
        nodes = _number(nodes, "nodes", positive=True, integer=True)
    mismatch = bool(_get(cfg, "debug_sigma_mismatch", False))
    d = gmm.dim
    rows, worst = [], 0.0
    for s in sigmas:
        noise = mx.CorruptionModel(s)
        oracle_noise = mx.CorruptionModel(1.1 * s) if mismatch else noise
        g = denoise.score_form_denoiser(gmm, noise)(pts)
        for x, gs in zip(pts, g):
            gq = denoise.oracle_denoiser_quadrature(gmm, oracle_noise, x, nodes)
            diff = float(np.max(np.abs(gs - gq)))
            worst = max(worst, diff)
            rows.append([s, *x, *gs, *gq, diff])
    header = (["sigma"] + [f"xt{i}" for i in range(d)] + [f"g_score_form{i}" for i in range(d)]
              + [f"g_quadrature{i}" for i in range(d)] + ["abs_diff"])
    write_csv(out / "theorem_check.csv", header, rows)
    ok = worst < 1e-7
    write_json(out / "theorem_check.json", {"max_abs_diff": worst, "tolerance": 1e-7, "passed": ok})
    log.info("theorem-check max abs diff %.3e", worst)
    return EXIT_OK if ok else EXIT_FAIL


def loglog_slope(sigmas, gaps):
    return float(np.polyfit(np.log(sigmas), np.log(gaps), 1)[0])


def cmd_limit_sweep(cfg, gmm, sigmas, out):
    """Gap between the exact and small-noise denoisers as sigma shrinks."""
    if len(sigmas) < 3:
        raise ConfigError("sigma", "limit-sweep needs a sweep of at least 3 values")
    pts = _points(cfg, gmm.dim)
    rows = []
    for s in sigmas:
        noise = mx.CorruptionModel(s)
        exact = denoise.score_form_denoiser(gmm, noise)(pts)
        approx = denoise.small_noise_denoiser(gmm, noise)(pts)
        rows.append([s, float(np.max(np.abs(exact - approx)))])
    slope = loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    write_csv(out / "limit_sweep.csv", ["sigma", "max_gap_over_grid"], rows)
    ok = slope >= 3.5
    write_json(out / "limit_sweep.json", {
        "sigmas": [r[0] for r in rows], "gaps": [r[1] for r in rows],
        "slope": slope, "threshold": 3.5, "passed": ok,
    })
    log.info("limit-sweep slope %.4f", slope)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_reconstruct(cfg, gmm, sigmas, out):
    """Density recovered from the optimal denoiser versus the analytic corrupted density."""
    if gmm.dim > 2:
        raise ConfigError("mixture.dim", "reconstruct supports d <= 2")
    box, shape = _grid(cfg, gmm.dim)
    steps = _number(_get(cfg, "steps", 8), "steps", positive=True, integer=True)
    tol = _number(_get(cfg, "tolerance", 1e-4), "tolerance", positive=True)
    reports = []
    for i, s in enumerate(sigmas):
        noise = mx.CorruptionModel(s)
        grid = reconstruct.reconstruct_density_on_grid(
            denoise.score_form_denoiser(gmm, noise), noise, box, shape, steps)
        truth = mx.density(mx.corrupt(gmm, noise), grid.points()).reshape(grid.shape)
        grid.save(out / f"density_{i}.csv")
        reports.append({
            "sigma": s, "linf": float(np.max(np.abs(grid.values - truth))),
            "integral": grid.integral(), "log_normalizer": grid.log_normalizer,
            "file": f"density_{i}.csv",
        })
    ok = all(r["linf"] < tol for r in reports)
    write_json(out / "reconstruct_report.json", {"runs": reports, "tolerance": tol, "passed": ok})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_deconvolve(cfg, gmm, sigmas, out):
    """Full clean -> corrupted -> clean chain."""
    if gmm.dim != 1:
        raise ConfigError("mixture.dim", "deconvolve runs the 1D full chain")
    box, shape = _grid(cfg, 1)
    reg = _number(_get(cfg, "reg", 1e-12), "reg")
    if reg < 0:
        raise ConfigError("reg", "must be nonnegative")
    steps = _number(_get(cfg, "steps", 8), "steps", positive=True, integer=True)
    tol = _number(_get(cfg, "tolerance", 5e-3), "tolerance", positive=True)
    reports = []
    for i, s in enumerate(sigmas):
        _, clean, report = deconv.run_chain(gmm, mx.CorruptionModel(s), box, shape, reg, steps)
        clean.save(out / f"clean_{i}.csv")
        reports.append(report.to_dict())
    ok = all(r["linf_pX"] < tol and r["clipped_mass"] < 1e-4 for r in reports)
    write_json(out / "deconvolve_report.json", {"runs": reports, "tolerance": tol, "passed": ok})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_mse_probe(cfg, gmm, sigmas, out):
    """Perturbation probe of MSE optimality of the score-form denoiser."""
    seed = int(cfg["seed"])
    trials = _number(_get(cfg, "trials", 50), "trials", positive=True, integer=True)
    n = _number(_get(cfg, "n_samples", 200_000), "n_samples", positive=True, integer=True)
    eps_list = _get(cfg, "epsilon", [0.05, 0.1])
    eps_list = eps_list if isinstance(eps_list, list) else [eps_list]
    if not eps_list:
        raise ConfigError("epsilon", "must not be empty")
    runs = []
    for s in sigmas:
        noise = mx.CorruptionModel(s)
        base = denoise.empirical_mse(denoise.score_form_denoiser(gmm, noise), gmm, noise, n, seed)
        for j, eps in enumerate(eps_list):
            eps = _number(eps, f"epsilon[{j}]")
            try:
                rep = denoise.perturbation_probe(gmm, noise, eps, trials, seed, n)
            except ValueError as exc:
                raise ConfigError("trials", str(exc)) from exc
            runs.append({"sigma": s, "mse": base.value, "mse_std_error": base.std_error, **rep.to_dict()})
    ok = all(r["n_violations"] == 0 for r in runs)
    write_json(out / "mse_probe.json", {"runs": runs, "seed": seed, "passed": ok})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_path_check(cfg, gmm, sigmas, out):
    """Path independence and curl of the recovered score field (2D)."""
    if gmm.dim != 2:
        raise ConfigError("mixture.dim", "path-check needs a 2D mixture")
    seed = int(cfg["seed"])
    endpoint = _get(cfg, "endpoint", [1.5, -0.5])
    if not isinstance(endpoint, list) or len(endpoint) != 2:
        raise ConfigError("endpoint", "expected [x, y]")
    endpoint = [_number(v, f"endpoint[{i}]") for i, v in enumerate(endpoint)]
    n_contours = _number(_get(cfg, "n_contours", 5), "n_contours", positive=True, integer=True)
    steps = _number(_get(cfg, "steps", 256), "steps", positive=True, integer=True)
    field = _get(cfg, "field", "score_form")
    if field not in ("score_form", "rotational"):
        raise ConfigError("field", "expected 'score_form' or 'rotational'")
    runs = []
    for s in sigmas:
        noise = mx.CorruptionModel(s)
        if field == "rotational":
            g = denoise.Denoiser.external(lambda X: X + np.stack([-X[:, 1], X[:, 0]], axis=1), 2)
        else:
            g = denoise.score_form_denoiser(gmm, noise)
        dev = reconstruct.path_independence_check(g, noise, endpoint, n_contours, seed, steps)
        probes = 4.0 * numerics.RandomSource(seed, 3).uniform(20).reshape(10, 2) - 2.0
        curls = [reconstruct.curl_residual(g, p, 1e-4) for p in probes]
        runs.append({"sigma": s, "max_deviation": dev, "max_abs_curl": float(np.max(np.abs(curls)))})
    if field == "rotational":
        ok = all(r["max_deviation"] > 1e-2 for r in runs)
    else:
        ok = all(r["max_deviation"] < 1e-6 and r["max_abs_curl"] < 1e-5 for r in runs)
    write_json(out / "path_check.json", {"field": field, "runs": runs, "passed": ok})
    return EXIT_OK if ok else EXIT_FAIL


HANDLERS = {
    "theorem-check": cmd_theorem_check,
    "limit-sweep": cmd_limit_sweep,
    "reconstruct": cmd_reconstruct,
    "deconvolve": cmd_deconvolve,
    "mse-probe": cmd_mse_probe,
    "path-check": cmd_path_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="denoiselab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="override output_dir")
    parser.add_argument("--sigma", help="comma-separated sigma list, overrides config")
    parser.add_argument("--debug-sigma-mismatch", action="store_true",
                        help="theorem-check: run the oracle at 1.1 x sigma (must fail)")
    return parser


def _setup_log(out):
    handler = logging.FileHandler(out / "run.log", mode="a")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    handler = None
    try:
        cfg, gmm, sigmas, out = load_config(args)
        handler = _setup_log(out)
        log.info("command %s config %s", args.command, args.config)
        write_json(out / "resolved_config.json", {"command": args.command, **cfg})
        start = time.perf_counter()
        code = HANDLERS[args.command](cfg, gmm, sigmas, out)
        log.info("finished with exit code %d in %.2fs", code, time.perf_counter() - start)
        return code
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DenoiseLabError, ValueError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
