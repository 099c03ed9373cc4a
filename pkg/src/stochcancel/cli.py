"""Command-line entry point.

Subcommands::

    run            run the experiment described by a config file
    sweep          ensemble sweep over N, delta, R or t with power-law fits
    sampler-check  property battery for the configured noise deformation
    lr-decay       light-cone truncation error ||O(t) - O_R(t)|| against R
    fg-trace       oscillation/growth split of the error derivative

Site indices are zero based: "Y1" is the Pauli Y on the second qubit.
Exit codes: 0 ok, 2 config error, 3 resource ceiling, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_to_dict, load_config, resolve_observable
from .ensemble import SweepResult, realization_noise, run_ensemble, sweep, write_records
from .errors import ConfigError, StochCancelError
from .estimators import derivative_check, fg_decomposition, fit_lieb_robinson, lr_truncation_error, zero_crossings
from .hamiltonian import PerturbedHamiltonian
from .noise import sampler_diagnostics
from .pauli import spectral_norm, support, to_matrix
from .propagator import basis_state

log = logging.getLogger("stochcancel")

CANNED = ("figure1", "figure1_n10", "figure2", "figure2_h05pi")


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def _dump(obj) -> str:
    # float repr is the shortest string that round-trips, so no precision is lost
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Outputs:
    def __init__(self, out_dir: Path, cfg: ExperimentConfig, command: str):
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        self.cfg = cfg
        self.command = command
        self.files: list[Path] = []
        self.start = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.dir / name
        self.files.append(p)
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(_dump(obj))
        return p

    def write_table(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])
        return p

    def summary(self, obj) -> Path:
        doc = {"config": config_to_dict(self.cfg), "warnings": list(self.cfg.warnings), "results": obj}
        return self.write_json("summary.json", doc)

    def manifest(self) -> Path:
        summary = self.dir / "summary.json"
        doc = {
            "command": self.command,
            "tool_version": __version__,
            "config": config_to_dict(self.cfg),
            "wall_clock_seconds": time.perf_counter() - self.start,
            "outputs": {p.name: _sha256(p) for p in self.files if p.exists()},
            "summary_digest": _sha256(summary) if summary.exists() else None,
        }
        p = self.dir / "manifest.json"
        p.write_text(_dump(doc))
        return p


def _svg(path: Path, x, series: dict, xlabel: str, ylabel: str, logxy: bool = False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, marker="o" if logxy else None, label=label)
    if logxy:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    # fixed metadata keeps the file byte-identical across reruns
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _report_sweep(out: _Outputs, res: SweepResult, svg: bool) -> dict:
    tag = res.mode
    write_records(out.path(f"records_{tag}.csv"), res.records)
    rows = []
    for s in res.summaries:
        row = [s.sweep_value, float(s.times[-1]), s.n, float(s.mean[-1]), float(s.std[-1]),
               float(s.mean_stderr[-1]), float(s.infidelity_std[-1])]
        row.append(float(s.extras.get("lr_norm", math.nan)))
        rows.append(row)
    out.write_table(f"sweep_{tag}.csv",
                    ["sweep_value", "t", "n", "mean", "std", "mean_stderr", "infidelity_std", "lr_norm"], rows)
    for name, fit in res.fits.items():
        print(f"[{tag}] {name} vs {res.axis}: slope = {fit.slope:.4f} +/- {fit.stderr:.4f} (R^2 = {fit.r2:.4f})")
    if res.lr_fit is not None:
        print(f"[{tag}] light-cone decay: mu = {res.lr_fit.mu:.4f} +/- {res.lr_fit.mu_stderr:.4f}")
    if svg:
        series = {}
        if res.axis == "R":
            series["||O(t) - O_R(t)||"] = [max(v, 1e-300) for v in res.lr_norms]
        else:
            for name in ("std", "abs_mean"):
                ys = res.statistic(name)
                if np.all(ys > 0):
                    series[name] = ys
        if series:
            _svg(out.path(f"sweep_{tag}.svg"), res.values, series, res.axis, "final-time statistic", logxy=True)
    return res.to_dict()


def cmd_run(cfg: ExperimentConfig, out: _Outputs, workers: int, svg: bool) -> int:
    kind = cfg.kind
    if kind == "fg":
        return cmd_fg_trace(cfg, out, workers, svg)
    if kind.startswith("sweep") or kind == "fidelity_scaling":
        return cmd_sweep(cfg, out, workers, svg)
    results = {}
    curves = {}
    for mode in cfg.noise.modes:
        records, summary = run_ensemble(cfg, mode=mode, workers=workers, checkpoint=out.path(f"records_{mode}.csv"))
        results[mode] = summary.to_dict()
        results[mode]["time_averaged_abs_mean"] = summary.time_averaged_abs_mean()
        curves[mode] = summary.mean
        print(f"[{mode}] n = {summary.n}, time-averaged |mean error| = {summary.time_averaged_abs_mean():.6g}")
        if summary.tail is not None:
            print(f"[{mode}] tail fit c_hat = {summary.tail.c_hat:.4g}")
    out.summary(results)
    if svg:
        _svg(out.path("trace.svg"), cfg.time_grid(), {f"{m} mean error": c for m, c in curves.items()},
             "t", "<O'(t)> - <O(t)>")
    return 0


def cmd_sweep(cfg: ExperimentConfig, out: _Outputs, workers: int, svg: bool, axis=None, values=None) -> int:
    if not (axis or cfg.sweep_axis):
        raise ConfigError("sweep needs experiment.sweep_axis or --axis")
    results = {}
    for mode in cfg.noise.modes:
        res = sweep(cfg, axis, values, mode=mode, workers=workers)
        results[mode] = _report_sweep(out, res, svg)
    out.summary(results)
    return 0


def cmd_sampler_check(cfg: ExperimentConfig, out: _Outputs, n: int) -> int:
    d = cfg.noise.deformation()
    checks = sampler_diagnostics(d, n, cfg.base_seed)
    ok = True
    for c in checks:
        ok &= c.passed
        print(f"{c.name:14s} {'pass' if c.passed else 'FAIL'}  {c.value:.6g}  {c.detail}")
    out.summary({"deformation": asdict(d), "n": n, "checks": [asdict(c) for c in checks], "all_passed": ok})
    return 0 if ok else 4


def cmd_lr_decay(cfg: ExperimentConfig, out: _Outputs, radii, svg: bool) -> int:
    spec, _ = cfg.system.build()
    obs = resolve_observable(cfg.experiment.observable, cfg.system.N)
    t = float(cfg.time_grid()[-1])
    radii = [float(r) for r in (radii or cfg.experiment.sweep_values or range(1, spec.lattice.diameter + 2))]
    norms = [lr_truncation_error(spec, obs, t, r, cfg.propagator) for r in radii]
    out.write_table("lr_decay.csv", ["R", "truncation_error"], zip(radii, norms))
    for r, e in zip(radii, norms):
        print(f"R = {r:g}: ||O(t) - O_R(t)|| = {e:.6e}")
    try:
        fit = fit_lieb_robinson(radii, norms, t, spec.strength_bound,
                                spectral_norm(to_matrix(obs, cfg.system.N)), len(support(obs)))
        print(f"mu = {fit.mu:.4f} +/- {fit.mu_stderr:.4f}, v = {fit.v:.4f}, R^2 = {fit.r2:.4f}")
        fit = asdict(fit)
    except ValueError as exc:
        print(f"decay fit skipped: {exc} (nonzero errors at fewer than three radii)")
        fit = None
    out.summary({"t": t, "radii": radii, "errors": norms, "fit": fit})
    if svg:
        _svg(out.path("lr_decay.svg"), radii, {"||O(t) - O_R(t)||": [max(e, 1e-300) for e in norms]},
             "R", "truncation error")
    return 0


def cmd_fg_trace(cfg: ExperimentConfig, out: _Outputs, workers: int, svg: bool) -> int:
    spec, pert = cfg.system.build()
    N = cfg.system.N
    O = to_matrix(resolve_observable(cfg.experiment.observable, N), N)
    init = cfg.experiment.initial_state
    psi0 = basis_state(N, None if init == "zeros" else init)
    times = cfg.time_grid()
    results = {}
    for mode in cfg.noise.modes:
        seed, gs = realization_noise(cfg, 0, pert.count, mode)
        Hp = PerturbedHamiltonian(spec, pert, gs).matrix()
        tr = fg_decomposition(spec.matrix(), Hp, O, psi0, times, cfg.propagator)
        out.write_table(f"fg_{mode}.csv", ["t", "F", "G", "error", "delta_norm"],
                        zip(times, tr.expF.real, tr.expG.real, tr.error, tr.delta_norm))
        dominance = float(np.mean(np.abs(tr.expF) > np.abs(tr.expG)))
        crossings = zero_crossings(tr.error)
        info = {"seed": seed, "F_dominates_fraction": dominance, "zero_crossings": crossings}
        if len(times) >= 5:
            chk = derivative_check(tr)
            info["derivative_check"] = asdict(chk)
        results[mode] = info
        print(f"[{mode}] |<F>| > |<G>| on {100 * dominance:.1f}% of the grid, {crossings} zero crossings")
        if svg:
            _svg(out.path(f"fg_{mode}.svg"), times, {"<F>": tr.expF.real, "<G>": tr.expG.real, "error": tr.error},
                 "t", "value")
    out.summary(results)
    return 0


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def _canned_path(name: str) -> Path:
    return Path(__file__).with_name("configs") / f"{name}.toml"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stochcancel", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True,
                        help=f"TOML or JSON config file, or a canned name: {', '.join(CANNED)}")
        sp.add_argument("--out-dir", default="results", help="output directory (default: results)")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for realizations")
        sp.add_argument("--seed-override", type=int, default=None, help="replace noise.seed")
        sp.add_argument("--svg", action="store_true", help="also write static SVG charts")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("run", help="run the configured experiment"))
    sp = sub.add_parser("sweep", help="ensemble sweep with scaling fits")
    common(sp)
    sp.add_argument("--axis", choices=("N", "delta", "R", "t"), default=None)
    sp.add_argument("--values", default=None, help="comma-separated sweep values, e.g. 4,6,8")
    sp = sub.add_parser("sampler-check", help="noise deformation property battery")
    common(sp)
    sp.add_argument("--n", type=int, default=100_000, help="number of draws (>= 10^4)")
    sp = sub.add_parser("lr-decay", help="light-cone truncation error against R")
    common(sp)
    sp.add_argument("--radii", default=None, help="comma-separated radii (default: 1 .. diameter + 1)")
    common(sub.add_parser("fg-trace", help="F/G decomposition of the error derivative"))
    return p


def _load(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.exists() and args.config in CANNED:
        path = _canned_path(args.config)
    cfg = load_config(path)
    if args.seed_override is not None:
        cfg = cfg.with_updates("noise", seed=args.seed_override)
    for w in cfg.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return cfg


def _floats(text):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse value list {text!r}") from None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = _load(args)
        out = _Outputs(Path(args.out_dir), cfg, args.command)
        if args.command == "run":
            code = cmd_run(cfg, out, args.workers, args.svg)
        elif args.command == "sweep":
            code = cmd_sweep(cfg, out, args.workers, args.svg, args.axis, _floats(args.values))
        elif args.command == "sampler-check":
            if args.n < 10_000:
                raise ConfigError("--n must be at least 10^4")
            code = cmd_sampler_check(cfg, out, args.n)
        elif args.command == "lr-decay":
            code = cmd_lr_decay(cfg, out, _floats(args.radii), args.svg)
        else:
            code = cmd_fg_trace(cfg, out, args.workers, args.svg)
        out.manifest()
        print(f"outputs written to {out.dir}")
        return code
    except StochCancelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
