"""Seeded Monte Carlo over noise realizations, summaries and sweeps.

Realization k of an experiment draws its thetas from the counter-based
stream keyed by ``derive_seed(base_seed, k)``; with antithetic sampling the
pair (2m, 2m + 1) shares the key of m and the odd member uses -theta. The
reference (noise-free) trajectory is computed once per sweep point and each
realization owns its perturbed trajectory end to end, so results do not
depend on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import MEMORY_LIMIT_BYTES, ExperimentConfig, config_to_dict, resolve_observable
from .errors import ConfigError, ResourceCeilingError
from .estimators import (
    ErrorRecord,
    LRFit,
    expectation_values,
    fit_lieb_robinson,
    lipschitz_constant,
    lr_truncation_error,
    overlap_fidelity,
)
from .hamiltonian import PerturbedHamiltonian, truncate_to_lightcone
from .noise import derive_seed, sample
from .pauli import spectral_norm, support, to_matrix
from .propagator import basis_state, make_evolver
from .stats import FitResult, TailProfile, scaling_fit, tail_profile

log = logging.getLogger(__name__)

__all__ = [
    "EnsembleSummary",
    "SweepResult",
    "run_ensemble",
    "summarize",
    "sweep",
    "realization_noise",
    "read_records",
    "write_records",
    "scaling_fit",
    "tail_profile",
    "SYMMETRIC_SEED",
]

#: Seed column value for the deterministic symmetric-error run.
SYMMETRIC_SEED = -1


def realization_noise(cfg: ExperimentConfig, k: int, M: int, mode: str = "random"):
    """(seed, g vector) for realization ``k``."""
    d = cfg.noise.deformation()
    if mode == "symmetric":
        return SYMMETRIC_SEED, np.full(M, d.slope_bound)
    if cfg.noise.antithetic:
        seed = derive_seed(cfg.base_seed, k // 2)
        s = sample(d, M, seed, sign=-1 if k % 2 else 1)
    else:
        seed = derive_seed(cfg.base_seed, k)
        s = sample(d, M, seed)
    return seed, s.gs


class _Point:
    """Everything shared by the realizations of one sweep point."""

    def __init__(self, cfg: ExperimentConfig, mode: str, radius: float | None = None):
        self.cfg = cfg
        self.mode = mode
        self.radius = radius
        N = cfg.system.N
        self.spec, self.pert = cfg.system.build()
        self.obs = resolve_observable(cfg.experiment.observable, N)
        self.O = to_matrix(self.obs, N)
        init = cfg.experiment.initial_state
        self.psi0 = basis_state(N, None if init == "zeros" else init)
        self.times = cfg.time_grid()
        self.dense = cfg.propagator.resolve(2**N) == "dense"
        ref = make_evolver(self.spec.matrix(), cfg.propagator).trajectory(self.psi0, self.times)
        self.ref = ref
        self.ref_exp = expectation_values(ref, self.O)

    def _trajectory(self, H):
        return make_evolver(H.matrix(), self.cfg.propagator).trajectory(self.psi0, self.times)

    def _streamed(self, H):
        """Expectations and fidelities without holding the perturbed trajectory."""
        ev = make_evolver(H.matrix(), self.cfg.propagator)
        exp = np.empty(len(self.times))
        fid = np.empty(len(self.times))
        for idx, st in ev.iter_states(self.psi0, self.times):
            exp[idx] = expectation_values(st, self.O)[0]
            fid[idx] = abs(np.vdot(self.ref[idx], st)) ** 2
        fid = np.minimum(fid, 1.0)
        fid[self.times == 0] = 1.0
        return exp, fid

    def realize(self, k: int):
        seed, gs = realization_noise(self.cfg, k, self.pert.count, self.mode)
        Hp = PerturbedHamiltonian(self.spec, self.pert, gs)
        if self.dense:
            states = self._trajectory(Hp)
            exp = expectation_values(states, self.O)
            fid = overlap_fidelity(self.ref, states, self.times)
        else:
            exp, fid = self._streamed(Hp)
        if self.radius is None:
            err = exp - self.ref_exp
        else:
            trunc = truncate_to_lightcone(Hp, support(self.obs), self.radius)
            err = expectation_values(self._trajectory(trunc), self.O) - exp
        return seed, err, fid


# worker-process state, set by the pool initializer
_WORKER: dict = {}


def _init_worker(cfg, mode, radius):
    _WORKER["point"] = _Point(cfg, mode, radius)


def _work(k):
    return _WORKER["point"].realize(k)


# ---------------------------------------------------------------------------
# records I/O
# ---------------------------------------------------------------------------


def write_records(path, records, *, append: bool = False):
    path = Path(path)
    new = not append or not path.exists() or path.stat().st_size == 0
    with path.open("a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(ErrorRecord.CSV_HEADER)
        for r in records:
            w.writerow(r.csv_row())


def read_records(path) -> list[ErrorRecord]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ErrorRecord.CSV_HEADER:
        raise ConfigError(f"{path} is not a records file (bad header)")
    out = []
    for row in rows[1:]:
        if len(row) != 5:
            break  # partially written tail of an interrupted run
        out.append(ErrorRecord(int(row[0]), float(row[1]), float(row[2]), float(row[3]), float(row[4])))
    return out


def _fingerprint(cfg: ExperimentConfig, mode: str, radius, sweep_value) -> str:
    doc = {"config": config_to_dict(cfg), "mode": mode, "radius": radius, "sweep_value": sweep_value}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def _resume(path, n_t, expected_seed, fingerprint: str) -> list[ErrorRecord]:
    """Complete realizations already flushed to ``path``; the file is trimmed to them.

    A checkpoint written under a different configuration is discarded.
    """
    if path is None:
        return []
    path = Path(path)
    stamp = path.with_name(path.name + ".fingerprint")
    if not path.exists() or not stamp.exists() or stamp.read_text().strip() != fingerprint:
        write_records(path, [])
        stamp.write_text(fingerprint + "\n")
        return []
    recs = read_records(path)
    done = len(recs) // n_t
    keep = []
    for k in range(done):
        chunk = recs[k * n_t:(k + 1) * n_t]
        if any(r.seed != expected_seed(k) for r in chunk):
            raise ConfigError(f"checkpoint {path} does not match this configuration (realization {k})")
        keep.extend(chunk)
    write_records(path, keep)
    return keep


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    """Per-time statistics over realizations at one sweep point."""

    mode: str
    sweep_value: float
    times: np.ndarray
    n: int
    mean: np.ndarray
    std: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    mean_stderr: np.ndarray
    infidelity_mean: np.ndarray
    infidelity_std: np.ndarray
    fidelity_min: np.ndarray
    fidelity_max: np.ndarray
    tail: TailProfile | None = None
    extras: dict = field(default_factory=dict)

    def ci95(self, j: int = -1) -> tuple[float, float]:
        half = 1.959963984540054 * self.mean_stderr[j]
        return float(self.mean[j] - half), float(self.mean[j] + half)

    def time_averaged_abs_mean(self) -> float:
        return float(np.mean(np.abs(self.mean)))

    def slice(self, j: int) -> "EnsembleSummary":
        """Summary restricted to time index ``j``."""
        arrays = {
            name: getattr(self, name)[j:j + 1]
            for name in ("times", "mean", "std", "q05", "q50", "q95", "mean_stderr",
                         "infidelity_mean", "infidelity_std", "fidelity_min", "fidelity_max")
        }
        return replace(self, sweep_value=float(self.times[j]), tail=None, **arrays)

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "sweep_value": self.sweep_value, "n": self.n}
        for name in ("times", "mean", "std", "q05", "q50", "q95", "mean_stderr",
                     "infidelity_mean", "infidelity_std", "fidelity_min", "fidelity_max"):
            out[name] = np.asarray(getattr(self, name)).tolist()
        out["tail"] = None if self.tail is None else self.tail.to_dict()
        out["extras"] = dict(self.extras)
        return out


def summarize(records, times, *, mode: str = "random", sweep_value: float = 0.0, antithetic: bool = False,
              extras: dict | None = None) -> EnsembleSummary:
    """Fold index-sorted records into per-time statistics.

    ``std`` is the unbiased (n - 1) estimator and is 0 for a single
    realization. With antithetic pairs the standard error of the mean is
    computed from the pair means, which are independent.
    """
    times = np.asarray(times, dtype=float)
    n_t = len(times)
    if len(records) % n_t:
        raise ValueError("record count is not a multiple of the time-grid length")
    n = len(records) // n_t
    if n < 1:
        raise ValueError("no records to summarize")
    err = np.array([r.observable_error for r in records]).reshape(n, n_t)
    fid = np.array([r.fidelity for r in records]).reshape(n, n_t)
    infid = 1.0 - fid
    mean = err.mean(axis=0)
    if n > 1:
        std = err.std(axis=0, ddof=1)
        infid_std = infid.std(axis=0, ddof=1)
    else:
        std = np.zeros(n_t)
        infid_std = np.zeros(n_t)
    if antithetic and n >= 4 and n % 2 == 0:
        pairs = 0.5 * (err[0::2] + err[1::2])
        stderr = pairs.std(axis=0, ddof=1) / math.sqrt(len(pairs))
    else:
        stderr = std / math.sqrt(n)
    q05, q50, q95 = np.quantile(err, [0.05, 0.5, 0.95], axis=0)
    return EnsembleSummary(
        mode, float(sweep_value), times, n, mean, std, q05, q50, q95, stderr,
        infid.mean(axis=0), infid_std, fid.min(axis=0), fid.max(axis=0), None, dict(extras or {}),
    )


def _tail_for(point: _Point, err_final: np.ndarray, cfg: ExperimentConfig) -> TailProfile | None:
    """Tail profile of the final-time errors on a grid spanning 0.5 to 4.5 sample deviations."""
    t = float(point.times[-1])
    if len(err_final) < 1000 or t <= 0:
        return None
    norm_O = spectral_norm(point.O)
    c_lip = lipschitz_constant(norm_O, point.pert.count, t, cfg.noise.deformation().slope_bound)
    sigma = float(np.std(err_final, ddof=1))
    if not sigma > 0:
        return None
    a_grid = np.linspace(0.5, 4.5, cfg.experiment.tail_points) * sigma / c_lip
    return tail_profile(err_final, c_lip, a_grid)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def run_ensemble(cfg: ExperimentConfig, *, mode: str | None = None, workers: int = 1, checkpoint=None,
                 sweep_value: float | None = None, radius: float | None = None):
    """Run all realizations of ``cfg`` and return ``(records, summary)``.

    ``mode`` defaults to ``random`` (or ``symmetric`` when that is the only
    configured mode); the symmetric mode is a single deterministic run with
    g_i = delta. ``checkpoint`` names a records CSV that is appended after
    every realization and resumed from on restart. ``radius`` switches the
    recorded error to <O'_R(t)> - <O'(t)> with a light-cone truncated H'.
    """
    mode = mode or ("random" if "random" in cfg.noise.modes else "symmetric")
    if mode not in ("random", "symmetric"):
        raise ConfigError(f"unknown noise mode {mode!r}")
    n_real = 1 if mode == "symmetric" else cfg.n_realizations
    if mode == "random" and cfg.noise.antithetic and n_real % 2:
        raise ConfigError("antithetic sampling needs an even n_realizations")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if len(cfg.time_grid()) * 2**cfg.system.N * 16 > MEMORY_LIMIT_BYTES:
        raise ResourceCeilingError("reference trajectory storage exceeds the memory limit")
    value = float(cfg.system.N if sweep_value is None else sweep_value)
    times = cfg.time_grid()
    n_t = len(times)
    M = cfg.system.build()[1].count
    expected_seed = lambda k: realization_noise(cfg, k, M, mode)[0]
    records = _resume(checkpoint, n_t, expected_seed, _fingerprint(cfg, mode, radius, value))
    start = len(records) // n_t
    if start:
        log.info("resuming from realization %d of %d", start, n_real)

    point = _Point(cfg, mode, radius)
    finals = [r.observable_error for r in records[n_t - 1::n_t]]

    def consume(k, result):
        seed, err, fid = result
        chunk = [ErrorRecord(seed, value, float(t), float(e), float(f)) for t, e, f in zip(times, err, fid)]
        records.extend(chunk)
        finals.append(float(err[-1]))
        if checkpoint is not None:
            write_records(checkpoint, chunk, append=True)

    todo = range(start, n_real)
    if workers == 1 or len(todo) < 2:
        for k in todo:
            consume(k, point.realize(k))
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg, mode, radius)) as pool:
            chunk = max(1, len(todo) // (4 * workers))
            for k, res in zip(todo, pool.map(_work, todo, chunksize=chunk)):
                consume(k, res)

    summary = summarize(records, times, mode=mode, sweep_value=value,
                        antithetic=cfg.noise.antithetic and mode == "random")
    if mode == "random" and cfg.kind == "tail":
        summary = replace(summary, tail=_tail_for(point, np.asarray(finals), cfg))
    return records, summary


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SweepResult:
    axis: str
    values: tuple[float, ...]
    mode: str
    summaries: list[EnsembleSummary]
    records: list[ErrorRecord]
    fits: dict[str, FitResult]
    lr_norms: tuple[float, ...] = ()
    lr_fit: LRFit | None = None

    def statistic(self, name: str, j: int = -1) -> np.ndarray:
        """Per-point statistic at time index ``j``: std, abs_mean or infidelity_std."""
        if name == "abs_mean":
            return np.array([abs(s.mean[j]) for s in self.summaries])
        return np.array([getattr(s, name)[j] for s in self.summaries])

    def to_dict(self) -> dict:
        return {
            "axis": self.axis,
            "values": list(self.values),
            "mode": self.mode,
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "lr_norms": list(self.lr_norms),
            "lr_fit": None if self.lr_fit is None else self.lr_fit.__dict__.copy(),
            "summaries": [s.to_dict() for s in self.summaries],
        }


_FIT_STATS = ("std", "abs_mean", "infidelity_std")


def _point_config(cfg: ExperimentConfig, axis: str, value: float) -> ExperimentConfig:
    if axis == "N":
        return cfg.with_updates("system", N=int(value))
    if axis == "delta":
        return cfg.with_updates("noise", delta_prime=float(value))
    return cfg


def sweep(cfg: ExperimentConfig, axis: str | None = None, values=None, *, mode: str | None = None,
          workers: int = 1, checkpoint_dir=None) -> SweepResult:
    """One ensemble per sweep value, all sharing the base seed.

    Power-law fits of the final-time std, |mean| and infidelity std against
    the sweep value are reported whenever all points are positive. For the
    R axis the deterministic ||O(t) - O_R(t)|| is also recorded per radius
    and fitted to an exponential decay.
    """
    axis = axis or cfg.sweep_axis
    values = tuple(float(v) for v in (values if values is not None else cfg.experiment.sweep_values))
    if axis not in ("N", "delta", "R", "t"):
        raise ConfigError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("sweep values must be strictly increasing")
    mode = mode or ("random" if "random" in cfg.noise.modes else "symmetric")

    summaries, records = [], []
    lr_norms: list[float] = []
    if axis == "t":
        sub = cfg.with_updates("experiment", times=values)
        recs, summ = run_ensemble(sub, mode=mode, workers=workers, checkpoint=_ckpt(checkpoint_dir, mode, 0))
        records = recs
        summaries = [summ.slice(j) for j in range(len(values))]
    else:
        for i, v in enumerate(values):
            sub = _point_config(cfg, axis, v)
            radius = v if axis == "R" else None
            recs, summ = run_ensemble(sub, mode=mode, workers=workers, sweep_value=v, radius=radius,
                                      checkpoint=_ckpt(checkpoint_dir, mode, i))
            if axis == "R":
                spec, _ = sub.system.build()
                obs = resolve_observable(sub.experiment.observable, sub.system.N)
                lr = lr_truncation_error(spec, obs, float(sub.time_grid()[-1]), v, sub.propagator)
                lr_norms.append(lr)
                summ = replace(summ, extras={"lr_norm": lr})
            records.extend(recs)
            summaries.append(summ)

    fits = {}
    if axis != "R":
        for name in _FIT_STATS:
            ys = [abs(s.mean[-1]) if name == "abs_mean" else getattr(s, name)[-1] for s in summaries]
            if len(values) >= 3 and min(values) > 0 and min(ys) > 0:
                fits[name] = scaling_fit(list(zip(values, ys)))
    lr_fit = None
    if axis == "R":
        spec, _ = cfg.system.build()
        obs = resolve_observable(cfg.experiment.observable, cfg.system.N)
        t = float(cfg.time_grid()[-1])
        try:
            lr_fit = fit_lieb_robinson(values, lr_norms, t, spec.strength_bound,
                                       spectral_norm(to_matrix(obs, cfg.system.N)), len(support(obs)))
        except ValueError as exc:
            log.warning("light-cone fit skipped: %s", exc)
    return SweepResult(axis, values, mode, summaries, records, fits, tuple(lr_norms), lr_fit)


def _ckpt(directory, mode, index):
    if directory is None:
        return None
    return Path(directory) / f"checkpoint_{mode}_{index:03d}.csv"
