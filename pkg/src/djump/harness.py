"""Experiment runner and the ``djump`` command line.

Each mode writes its data files into ``--out``; every file opens with an
echo of the resolved configuration.  Progress goes to stderr through
``logging``.  On failure a one-line JSON object describing the error is
printed to stdout and the exit code follows the error family (2 config,
3 numerical, 4 validation FAIL).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import jumpstats
from .config import KEYS, MODES, RunConfig, parse_config
from .coupling import Transition, coupling_scan, write_scan_csv
from .dynamics import (
    TrajectoryResult,
    build_model,
    run_trajectory,
    trajectory_rng,
    write_events_jsonl,
    write_populations_csv,
)
from .errors import ConfigError, DjumpError, ValidationFailed
from .oracle import integrate, pure_density

log = logging.getLogger("djump")

BINS_HEADER = ("t", "counts1", "counts2", "class")


def _open(cfg: RunConfig, name: str):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    log.info("writing %s", path)
    return path.open("w", encoding="utf-8", newline="")


def _write_header(cfg: RunConfig, fh) -> None:
    fh.write("\n".join(cfg.header_lines()) + "\n")


# --- coupling-scan ---------------------------------------------------------


def run_coupling_scan(cfg: RunConfig) -> Path:
    tr = Transition[cfg.transition.upper()]
    theta = {Transition.T12: cfg.theta, Transition.T13: cfg.theta13, Transition.T23: cfg.theta23}[tr]
    rows = coupling_scan(tr, cfg.rates, theta, cfg.r_min, cfg.r_max, cfg.r_points, cfg.geometry)
    with _open(cfg, "coupling_scan.csv") as fh:
        _write_header(cfg, fh)
        write_scan_csv(rows, fh)
    return Path(cfg.out) / "coupling_scan.csv"


# --- trajectory ------------------------------------------------------------


def write_bins_csv(result: TrajectoryResult, bin_width: float, t_total: float, threshold: int, fh) -> None:
    """Clicks per bin; detector 2 counts are negated for direct plotting."""
    fh.write(",".join(BINS_HEADER) + "\n")
    for b in jumpstats.bin_events(result, bin_width, t_total):
        cls = jumpstats.classify_bin(b, threshold)
        fh.write(f"{b.t_start:.12g},{b.counts1},{-b.counts2},{cls.name}\n")


def run_trajectories(cfg: RunConfig) -> list[TrajectoryResult]:
    params = cfg.params
    model = build_model(params)
    n = cfg.trajectories

    def one(i: int) -> TrajectoryResult:
        return run_trajectory(
            params, model.channels, model.generator, trajectory_rng(params.seed, i),
            sample_every=cfg.sample_every, reprepare=cfg.reprepare,
        )

    results = jumpstats.run_batch(one, n, cfg.workers)
    header = {"mode": cfg.mode, "config": cfg.echo(), "channels": [ch.label for ch in model.channels]}
    for i, res in enumerate(results):
        tag = "" if n == 1 else f"_{i:04d}"
        with _open(cfg, f"events{tag}.jsonl") as fh:
            write_events_jsonl(res, dict(header, trajectory=i), fh)
        with _open(cfg, f"bins{tag}.csv") as fh:
            _write_header(cfg, fh)
            write_bins_csv(res, cfg.bin_width, params.t_max, cfg.threshold, fh)
        if res.sample_times is not None:
            with _open(cfg, f"populations{tag}.csv") as fh:
                _write_header(cfg, fh)
                write_populations_csv(res.sample_times, res.sample_populations, fh)
        log.info("trajectory %d: %d events", i, len(res.event_steps))
    return results


# --- validate --------------------------------------------------------------


@dataclass
class ValidationReport:
    times: np.ndarray
    oracle: np.ndarray  # (checkpoints, 9)
    mean: np.ndarray
    stderr: np.ndarray
    trajectories: int

    @property
    def bound(self) -> np.ndarray:
        return np.maximum(4.0 * self.stderr, 0.02)

    @property
    def deviation(self) -> np.ndarray:
        return np.abs(self.mean - self.oracle)

    @property
    def max_deviation(self) -> float:
        return float(self.deviation.max())

    @property
    def worst_ratio(self) -> float:
        return float((self.deviation / self.bound).max())

    @property
    def passed(self) -> bool:
        return bool(np.all(self.deviation < self.bound))

    def to_dict(self) -> dict:
        worst = np.unravel_index(np.argmax(self.deviation / self.bound), self.deviation.shape)
        return {
            "result": "PASS" if self.passed else "FAIL",
            "trajectories": self.trajectories,
            "checkpoints": len(self.times),
            "max_abs_delta": self.max_deviation,
            "max_delta_over_bound": self.worst_ratio,
            "worst_t": float(self.times[worst[0]]),
            "worst_population": int(worst[1]),
            "bound": "max(4*stderr, 0.02) per population and checkpoint",
            "max_4sigma": float(4.0 * self.stderr.max()),
        }


def validate_ensemble(cfg: RunConfig) -> ValidationReport:
    """Trajectory-averaged populations against the master-equation oracle.

    Trajectories run without re-preparation: this checks the unraveling
    itself, so the ensemble must reproduce the density matrix exactly.
    """
    params = cfg.params
    per_cp = max(1, int(round(cfg.checkpoint / params.dt)))
    model = build_model(params)

    def one(i: int) -> np.ndarray:
        res = run_trajectory(
            params, model.channels, model.generator, trajectory_rng(params.seed, i),
            sample_every=per_cp,
        )
        return res.sample_populations

    log.info("running %d trajectories to t=%g", cfg.trajectories, params.t_max)
    pops = np.stack(jumpstats.run_batch(one, cfg.trajectories, cfg.workers))
    times = np.arange(pops.shape[1]) * per_cp * params.dt
    log.info("integrating the master equation")
    cps = integrate(
        pure_density(params.initial_state), params, params.t_max, cfg.dt_ode,
        checkpoint_every=per_cp * params.dt, channels=model.channels, gen=model.generator,
    )
    oracle = {round(cp.t / params.dt): cp.populations for cp in cps}
    keep = [j for j, t in enumerate(times) if round(t / params.dt) in oracle]
    ref = np.stack([oracle[round(times[j] / params.dt)] for j in keep])
    sample = pops[:, keep, :]
    n = sample.shape[0]
    se = sample.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(ref)
    return ValidationReport(times[keep], ref, sample.mean(axis=0), se, n)


def run_validate(cfg: RunConfig) -> ValidationReport:
    rep = validate_ensemble(cfg)
    with _open(cfg, "validate_report.json") as fh:
        json.dump(dict(rep.to_dict(), config=cfg.echo()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with _open(cfg, "validate_populations.csv") as fh:
        _write_header(cfg, fh)
        cols = ["t"]
        for src in ("oracle", "mean", "stderr"):
            cols += [f"{src}_{h}" for h in ("p11", "p12", "p13", "p21", "p22", "p23", "p31", "p32", "p33")]
        fh.write(",".join(cols) + "\n")
        for j, t in enumerate(rep.times):
            vals = [t, *rep.oracle[j], *rep.mean[j], *rep.stderr[j]]
            fh.write(",".join(f"{v:.12g}" for v in vals) + "\n")
    print(
        f"validate: {'PASS' if rep.passed else 'FAIL'} max|dp|={rep.max_deviation:.4g} "
        f"max(dp/bound)={rep.worst_ratio:.3f}"
    )
    if not rep.passed:
        raise ValidationFailed(
            f"population deviation exceeds max(4*stderr, 0.02) (ratio {rep.worst_ratio:.3f})"
        )
    return rep


# --- sweep / fit -----------------------------------------------------------


def sweep_points(cfg: RunConfig) -> list[jumpstats.SweepPoint]:
    grid = jumpstats.log_grid(cfg.r_min, cfg.r_max, cfg.r_points)
    return jumpstats.flip_sweep(
        cfg.params, grid, cfg.trajectories, cfg.t_max,
        bin_width=cfg.bin_width, threshold=cfg.threshold, workers=cfg.workers,
    )


def run_sweep(cfg: RunConfig) -> list[jumpstats.SweepPoint]:
    points = sweep_points(cfg)
    with _open(cfg, "sweep.csv") as fh:
        _write_header(cfg, fh)
        jumpstats.write_sweep_csv(points, fh)
    return points


def run_fit(cfg: RunConfig) -> jumpstats.FitResult:
    if cfg.sweep_csv:
        try:
            with open(cfg.sweep_csv, encoding="utf-8") as fh:
                points = jumpstats.read_sweep_csv(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read sweep_csv: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{cfg.sweep_csv}: {exc}") from None
    else:
        points = run_sweep(cfg)
    fit = jumpstats.fit_scaling(points)
    with _open(cfg, "fit.json") as fh:
        jumpstats.write_fit_json(fit, fh, config=cfg.echo())
    log.info("c_s = %.4g (|c_s - 2| = %.3g) from %d points", fit.c_s, abs(fit.c_s - 2), fit.points_used)
    return fit


RUNNERS = {
    "coupling-scan": run_coupling_scan,
    "trajectory": run_trajectories,
    "validate": run_validate,
    "sweep": run_sweep,
    "fit": run_fit,
}


def run(cfg: RunConfig):
    return RUNNERS[cfg.mode](cfg)


# --- command line ----------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="djump", description="Quantum-jump simulation of two coupled three-level atoms.")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", metavar="FILE", help="key = value configuration file")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    for key, entry in KEYS.items():
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, dest=key, default=None, metavar=key.upper(), help=entry.help)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING if args.quiet else logging.INFO,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
            stream=sys.stderr,
        )
        text = ""
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"--config: {exc}") from None
        overrides = {k: getattr(args, k) for k in KEYS if getattr(args, k) is not None}
        cfg = parse_config(args.mode, text, overrides)
        run(cfg)
    except DjumpError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}))
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
