"""Command-line drivers: simulate, check, couple, estimate, lil, replay.

Every command writes its reports under ``--out-dir`` together with a
``manifest.json`` sidecar. The reports embed the deterministic part of the
manifest, so replaying a manifest reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import io as rio
from .conditions import check_conditions
from .coupling import CouplingSetF, check_B_conditions, fit_drift, simulate_coupled
from .errors import ConfigError, PdmpError, PreconditionError
from .gallery import GALLERY_NAMES, gallery_config
from .lil import (center_observable, estimate_sigma_embedded, estimate_sigma_tilde,
                  estimate_sigma_time, lil_diagnostics)
from .model import HybridState, build_model
from .observables import OBSERVABLE_NAMES, make_observable
from .operators import EmpiricalMeasure, ergodicity_decay, estimate_invariants
from .sampler import SeedStream
from .simulate import simulate_embedded
from .stats import loglinear_fit

EXIT_OK, EXIT_USAGE, EXIT_CONDITION, EXIT_NUMERIC = 0, 2, 3, 4
REPLAY_SKIP = ("out_dir", "threads", "figures", "func", "manifest")


class UsageError(ConfigError):
    code = "UsageError"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_state(text, dim=None):
    """``"y1,y2@i"`` -> HybridState; the index defaults to 1."""
    try:
        ys, _, idx = text.partition("@")
        y = [float(v) for v in ys.split(",")]
        state = HybridState(y, int(idx) if idx else 1)
    except ValueError as exc:
        raise UsageError(f"cannot parse state {text!r}; expected y[,y...][@i]") from exc
    if dim is not None and len(state.y) != dim:
        raise UsageError(f"state {text!r} has dimension {len(state.y)}, model needs {dim}")
    return state


def _config(args):
    if getattr(args, "config_snapshot", None) is not None:
        return args.config_snapshot
    if args.gallery and args.model:
        raise UsageError("give either --gallery or --model, not both")
    if args.gallery:
        return gallery_config(args.gallery)
    if args.model:
        return rio.load_config(args.model)
    raise UsageError("a model is required: --gallery NAME or --model FILE")


def _setup(args):
    cfg = _config(args)
    model = build_model(cfg)
    if args.seed is None:
        args.seed = rio.env_override("PDMPLIL_SEED", 0)
    if args.threads is None:
        args.threads = rio.env_override("PDMPLIL_THREADS", 1)
    recorded = {k: v for k, v in sorted(vars(args).items())
                if k not in REPLAY_SKIP and k != "config_snapshot"}
    manifest = rio.run_manifest(args.command, recorded, cfg, args.seed, args.streams,
                                model.hash(), __version__)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return model, manifest, out


def _x0(args, model):
    return parse_state(args.x0, model.dim) if args.x0 else HybridState(model.y_bar, 1)


def _chunks(total, streams):
    sizes = [len(c) for c in np.array_split(np.arange(total), max(1, streams))]
    return [s for s in sizes if s > 0]


def _pool_map(fn, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------


def cmd_simulate(args):
    model, manifest, out = _setup(args)
    path = simulate_embedded(model, _x0(args, model), args.steps, SeedStream(args.seed, 0))
    files = [rio.write_text(out, "path.jsonl", rio.path_jsonl(path))]
    summary = {"records": len(path), "horizon": float(path.tau[-1]),
               "mean_y": path.y.mean(axis=0).tolist(),
               "index_counts": {str(k): int(v) for k, v in zip(*np.unique(path.i, return_counts=True))}}
    files.append(rio.write_text(out, "simulate.json",
                                rio.dumps_json({"manifest": manifest, "summary": summary})))
    if args.figures:
        from .plotting import plot_path
        plot_path(path, out / "path.png")
    return files, EXIT_OK


def cmd_check(args):
    model, manifest, out = _setup(args)
    rep = check_conditions(model, tol=args.tol, int_tol=args.int_tol, n_probes=args.probes,
                           seed=args.seed)
    body = {"manifest": manifest, "report": rep.to_dict()}
    files = [rio.write_text(out, "conditions.json", rio.dumps_json(body))]
    return files, EXIT_OK if rep.passed else EXIT_CONDITION


def cmd_couple(args):
    model, manifest, out = _setup(args)
    x1 = parse_state(args.x1, model.dim)
    x2 = parse_state(args.x2, model.dim)
    rng = SeedStream(args.seed, 5)
    span = model.state_high - model.state_low
    probes = model.state_low + span * rng.rng.random((32, model.dim))
    idx = 1 + rng.rng.integers(model.num_flows, size=32)
    a, b, _ = fit_drift(model, probes, idx, 200, rng)
    fset = CouplingSetF(min(max(a, 1e-6), 1 - 1e-9), b) if a < 1 else None
    sizes = _chunks(args.paths, args.streams)
    parts = _pool_map(lambda k: simulate_coupled(model, x1, x2, args.n, SeedStream(args.seed, 1000 + k),
                                                 sizes[k], N_values=(10, 100), fset=fset),
                      list(range(len(sizes))), args.threads)
    dist = np.concatenate([p.dist for p in parts], axis=1)
    zeta = np.concatenate([p.zeta for p in parts], axis=1)
    tau_hat = np.concatenate([p.tau_hat for p in parts])
    mean = dist.mean(axis=1)
    fit = loglinear_fit(np.arange(args.n + 1), mean, floor=1e-12 * max(mean[0], 1e-300))
    report = {"manifest": manifest, "paths": args.paths, "steps": args.n,
              "mean_distance": mean.tolist(), "fit": fit,
              "coupled_fraction": zeta[1:].mean(axis=1).tolist(),
              "tau_hat": {"mean": float(tau_hat.mean()), "max": int(tau_hat.max()),
                          "note": "proxy: one past the last uncoupled step"},
              "drift": {"a": a, "b": b}}
    if fset is not None:
        rho = np.concatenate([p.rho for p in parts])
        report["rho"] = {"unfinished_fraction": float(np.mean(rho < 0)),
                         "mean": float(rho[rho >= 0].mean()) if np.any(rho >= 0) else None}
    if args.b_check:
        pairs = (probes, idx, probes[::-1].copy(), idx[::-1].copy())
        report["B"] = check_B_conditions(model, pairs, 100, SeedStream(args.seed, 6)).to_dict()
    files = [rio.write_text(out, "coupled.jsonl", parts[0].to_jsonl(0)),
             rio.write_text(out, "couple.json", rio.dumps_json(report))]
    if args.figures:
        from .plotting import plot_coupling
        plot_coupling(mean, fit, out / "coupling.png")
    return files, EXIT_OK


def cmd_estimate(args):
    model, manifest, out = _setup(args)
    inv = estimate_invariants(model, args.burn_in, args.keep, SeedStream(args.seed, 1),
                              x0=_x0(args, model))
    start = parse_state(args.decay_from, model.dim) if args.decay_from else \
        HybridState(model.state_high, model.num_flows)
    decay = ergodicity_decay(model, EmpiricalMeasure.dirac(start), args.decay_steps, 500,
                             SeedStream(args.seed, 2), inv.mu)
    report = {"manifest": manifest, "discrepancy": inv.discrepancy, "decay": decay.to_dict(),
              "atoms": len(inv.mu)}
    if args.g:
        cg = center_observable(model, make_observable(args.g, model), SeedStream(args.seed, 3))
        report["centering"] = cg.to_dict()
    files = [rio.write_text(out, "mu.jsonl", inv.mu.to_jsonl()),
             rio.write_text(out, "nu.jsonl", inv.nu_time.to_jsonl()),
             rio.write_text(out, "estimate.json", rio.dumps_json(report))]
    if args.figures:
        from .plotting import plot_decay
        plot_decay(decay.to_dict(), out / "decay.png")
    return files, EXIT_OK


def cmd_lil(args):
    model, manifest, out = _setup(args)
    g = make_observable(args.g, model)
    seed = args.seed
    cg = center_observable(model, g, SeedStream(seed, 1))
    sigmas = {
        "embedded": estimate_sigma_embedded(model, cg, args.chain_len, 20, SeedStream(seed, 2)),
        "tilde": estimate_sigma_tilde(model, cg, args.n_mc, SeedStream(seed, 3)),
        "time": estimate_sigma_time(model, cg, args.chain_len, 20, SeedStream(seed, 4)),
    }
    streams = [SeedStream(seed, 1000 + k) for k in range(len(_chunks(args.replicas, args.streams)))]
    rep = lil_diagnostics(model, cg, args.horizon, args.replicas, streams, sigmas=sigmas,
                          n_threads=args.threads, full_traces=args.full_traces)
    body = dict(rep.to_dict())
    body["manifest"] = manifest
    body["centering"] = cg.to_dict()
    files = [rio.write_text(out, "lil.json", rio.dumps_json(body)),
             rio.write_text(out, "lil_traces.csv", rep.traces_csv())]
    if args.figures:
        from .plotting import plot_lil
        plot_lil(body, out / "lil.png")
    return files, EXIT_OK


def cmd_export_gallery(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = rio.write_text(out, f"{args.name}.toml", rio.dump_config(gallery_config(args.name)))
    print(str(p))
    return [], EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "check": cmd_check, "couple": cmd_couple,
            "estimate": cmd_estimate, "lil": cmd_lil}


def cmd_replay(args):
    src = Path(args.manifest)
    try:
        man = json.loads(src.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read manifest {src}: {exc}") from exc
    if man.get("command") not in COMMANDS:
        raise ConfigError(f"manifest names unknown command {man.get('command')!r}")
    ns = argparse.Namespace(**man["args"])
    ns.out_dir = args.out_dir
    ns.threads = args.threads or 1
    ns.figures = False
    ns.config_snapshot = man["config"]
    files, code = COMMANDS[man["command"]](ns)
    recorded = man.get("outputs", {})
    mismatched = [p.name for p in files if recorded.get(p.name) != rio.digest(p)]
    print(json.dumps({"replayed": man["command"], "identical": not mismatched,
                      "mismatched": mismatched}))
    return [], code if not mismatched else EXIT_NUMERIC


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="pdmp-lil", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--gallery", help=f"built-in model: {', '.join(GALLERY_NAMES)}")
        sp.add_argument("--model", help="model config file (TOML)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--streams", type=int, default=4, help="independent RNG streams for replicas")
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--out-dir", default="out")
        sp.add_argument("--figures", action="store_true", help="also render PNG figures")

    sp = sub.add_parser("simulate", help="simulate the post-jump chain")
    common(sp)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--x0", help="initial state y[,y...][@i]")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("check", help="probe-based condition checks")
    common(sp)
    sp.add_argument("--probes", type=int, default=1024)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--int-tol", type=float, default=1e-6)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("couple", help="coupled chains and distance decay")
    common(sp)
    sp.add_argument("--x1", required=True)
    sp.add_argument("--x2", required=True)
    sp.add_argument("--n", type=int, default=200)
    sp.add_argument("--paths", type=int, default=1000)
    sp.add_argument("--b-check", action="store_true", help="also run the coupling condition checks")
    sp.set_defaults(func=cmd_couple)

    sp = sub.add_parser("estimate", help="invariant measures and ergodicity decay")
    common(sp)
    sp.add_argument("--burn-in", type=int, default=10_000)
    sp.add_argument("--keep", type=int, default=20_000)
    sp.add_argument("--x0")
    sp.add_argument("--decay-from", help="start of the decay run, y[,y...][@i]")
    sp.add_argument("--decay-steps", type=int, default=30)
    sp.add_argument("--g", choices=OBSERVABLE_NAMES, help="also check the centering identity")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("lil", help="iterated-logarithm diagnostics")
    common(sp)
    sp.add_argument("--g", choices=OBSERVABLE_NAMES, default="y")
    sp.add_argument("--horizon", type=float, default=1e4)
    sp.add_argument("--replicas", type=int, default=64)
    sp.add_argument("--chain-len", type=int, default=4000)
    sp.add_argument("--n-mc", type=int, default=50_000)
    sp.add_argument("--full-traces", action="store_true")
    sp.set_defaults(func=cmd_lil)

    sp = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    sp.add_argument("manifest")
    sp.add_argument("--out-dir", default="replay")
    sp.add_argument("--threads", type=int, default=None)
    sp.set_defaults(func=cmd_replay)

    sp = sub.add_parser("export-gallery", help="write a gallery model as a TOML config")
    sp.add_argument("name", choices=GALLERY_NAMES)
    sp.add_argument("--out-dir", default=".")
    sp.set_defaults(func=cmd_export_gallery)
    return p


def _fail(exc, code):
    sys.stderr.write(json.dumps({"error": getattr(exc, "code", type(exc).__name__),
                                 "message": str(exc)}) + "\n")
    return code


def main(argv=None):
    started = time.time()
    try:
        args = build_parser().parse_args(argv)
        if args.command in COMMANDS:
            if args.streams < 1:
                raise PreconditionError("--streams must be >= 1")
        files, code = args.func(args)
        if files:
            rio.write_manifest(args.out_dir, _manifest_of(files), files, started)
        return code
    except PdmpError as exc:
        return _fail(exc, exc.exit_code)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail(exc, EXIT_NUMERIC)


def _manifest_of(files):
    """Read back the embedded manifest of the first JSON report written."""
    for p in files:
        if p.suffix == ".json":
            return json.loads(p.read_text())["manifest"]
    raise PdmpError("no report with an embedded manifest was written")


if __name__ == "__main__":
    sys.exit(main())
