"""Detector records to flip statistics.

Clicks are summed in fixed bins, each bin is classified by which detector
is above a click threshold, and a *flip* is a hand-over of fluorescence
from one atom to the other.  Flip rates are collected over a sweep of
interatomic distances and compared with ``|gamma_12|^2`` through a
one-parameter least-squares scale factor.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, NamedTuple, Sequence, TextIO

import numpy as np

from .coupling import Transition, cross_coupling
from .dynamics import (
    DETECTOR_LABELS,
    SimulationParams,
    TrajectoryEvent,
    TrajectoryResult,
    build_model,
    run_trajectory,
    trajectory_rng,
)
from .errors import DegenerateSweepError, NumericalError
from .hilbert import Atom, product_state

log = logging.getLogger(__name__)

SWEEP_HEADER = (
    "r_over_lambda12",
    "flips",
    "live_time",
    "flip_rate",
    "stderr",
    "abs_gamma12_sq",
    "flip_rate_total_time",
)
DET1 = DETECTOR_LABELS[Atom.ONE]
DET2 = DETECTOR_LABELS[Atom.TWO]


@dataclass(frozen=True)
class BinRecord:
    index: int
    t_start: float
    counts1: int
    counts2: int


class BinClass(Enum):
    BRIGHT1_DARK2 = "B1D2"
    DARK1_BRIGHT2 = "D1B2"
    BOTH_BRIGHT = "BB"
    BOTH_DARK = "DD"

    @property
    def single(self) -> bool:
        return self in (BinClass.BRIGHT1_DARK2, BinClass.DARK1_BRIGHT2)

    def swapped(self) -> "BinClass":
        return _SWAP.get(self, self)


_SWAP = {
    BinClass.BRIGHT1_DARK2: BinClass.DARK1_BRIGHT2,
    BinClass.DARK1_BRIGHT2: BinClass.BRIGHT1_DARK2,
}


class Direction(Enum):
    ONE_TO_TWO = "1->2"
    TWO_TO_ONE = "2->1"


@dataclass(frozen=True)
class FlipEvent:
    t: float
    direction: Direction


class FlipCount(NamedTuple):
    flips: list[FlipEvent]
    live_time_bins: int
    resets: int


@dataclass(frozen=True)
class SweepPoint:
    r: float
    flips: int
    live_time: float
    flip_rate: float
    stderr: float
    abs_gamma12_sq: float
    flip_rate_total_time: float
    total_time: float = 0.0
    event_flips: int = 0
    resets: int = 0
    bins: int = 0
    both_bright_bins: int = 0

    def row(self) -> list[str]:
        return [
            f"{self.r:.12g}",
            str(self.flips),
            f"{self.live_time:.12g}",
            f"{self.flip_rate:.12g}",
            f"{self.stderr:.12g}",
            f"{self.abs_gamma12_sq:.12g}",
            f"{self.flip_rate_total_time:.12g}",
        ]


@dataclass(frozen=True)
class FitResult:
    c_s: float
    residual: float
    points_used: int

    def to_dict(self) -> dict:
        return {"c_s": self.c_s, "residual": self.residual, "points_used": self.points_used}


def _detector_arrays(events) -> tuple[np.ndarray, np.ndarray]:
    """Click times of detector 1 and detector 2."""
    if isinstance(events, TrajectoryResult):
        t = events.event_times
        return t[events.channel_mask(DET1)], t[events.channel_mask(DET2)]
    t1 = [e.t for e in events if e.channel == DET1]
    t2 = [e.t for e in events if e.channel == DET2]
    return np.asarray(t1, dtype=float), np.asarray(t2, dtype=float)


def bin_counts(t1: np.ndarray, t2: np.ndarray, bin_width: float, t_total: float) -> tuple[np.ndarray, np.ndarray]:
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    n_bins = max(0, math.ceil(t_total / bin_width - 1e-9))
    if n_bins == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)

    def count(t):
        idx = np.minimum(np.floor(np.asarray(t) / bin_width).astype(np.int64), n_bins - 1)
        return np.bincount(idx, minlength=n_bins)

    return count(t1), count(t2)


def bin_events(
    events: Iterable[TrajectoryEvent] | TrajectoryResult, bin_width: float, t_total: float
) -> list[BinRecord]:
    """Detector clicks per left-closed bin; undetected channels are ignored."""
    c1, c2 = bin_counts(*_detector_arrays(events), bin_width, t_total)
    return [BinRecord(i, i * bin_width, int(a), int(b)) for i, (a, b) in enumerate(zip(c1, c2))]


def classify_bin(bin: BinRecord, threshold: int) -> BinClass:
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    b1 = bin.counts1 >= threshold
    b2 = bin.counts2 >= threshold
    if b1 and not b2:
        return BinClass.BRIGHT1_DARK2
    if b2 and not b1:
        return BinClass.DARK1_BRIGHT2
    return BinClass.BOTH_BRIGHT if b1 else BinClass.BOTH_DARK


def classify_counts(c1: np.ndarray, c2: np.ndarray, threshold: int) -> list[BinClass]:
    return [classify_bin(BinRecord(i, 0.0, int(a), int(b)), threshold) for i, (a, b) in enumerate(zip(c1, c2))]


def count_flips(classes: Sequence[BinClass], bin_width: float = 1.0) -> FlipCount:
    """Flips between single-bright bins, with the bins spent in resets excluded.

    Two single-bright bins of opposite class form a flip when they are
    adjacent or separated by exactly one BOTH_BRIGHT bin, the bin in which
    the hand-over happened.  Any other run of ambiguous bins is a reset: it
    severs the segment and is excluded from live time.  A flip is stamped
    at the start of the first bin of the new class.
    """
    flips: list[FlipEvent] = []
    live = 0
    resets = 0
    prev: BinClass | None = None
    gap: list[BinClass] = []

    for k, c in enumerate(classes):
        if not c.single:
            gap.append(c)
            continue
        handover = prev is not None and c is not prev and (
            not gap or (len(gap) == 1 and gap[0] is BinClass.BOTH_BRIGHT)
        )
        if handover:
            d = Direction.ONE_TO_TWO if c is BinClass.DARK1_BRIGHT2 else Direction.TWO_TO_ONE
            flips.append(FlipEvent(k * bin_width, d))
            live += len(gap)
        elif gap:
            resets += 1
        gap = []
        prev = c
        live += 1
    if gap:
        resets += 1
    return FlipCount(flips, live, resets)


def event_flips(result: TrajectoryResult, min_run: int = 3) -> int:
    """Flips read directly off the click stream.

    A flip is the first click of one detector after at least ``min_run``
    consecutive clicks of the other, with no undetected jump (2->3 decay or
    1->2 emission) inside that run.
    """
    det1 = result.labels.index(DET1)
    det2 = result.labels.index(DET2)
    flips = 0
    run_atom = -1
    run_len = 0
    for c in result.event_channels:
        if c != det1 and c != det2:
            run_atom, run_len = -1, 0
        elif c == run_atom:
            run_len += 1
        else:
            if run_atom >= 0 and run_len >= min_run:
                flips += 1
            run_atom, run_len = c, 1
    return flips


@dataclass
class _TrajectoryTally:
    flips: int = 0
    live_bins: int = 0
    resets: int = 0
    bins: int = 0
    both_bright: int = 0
    event_flips: int = 0


def tally_trajectory(result: TrajectoryResult, bin_width: float, t_total: float, threshold: int) -> _TrajectoryTally:
    c1, c2 = bin_counts(*_detector_arrays(result), bin_width, t_total)
    classes = classify_counts(c1, c2, threshold)
    fc = count_flips(classes, bin_width)
    return _TrajectoryTally(
        flips=len(fc.flips),
        live_bins=fc.live_time_bins,
        resets=fc.resets,
        bins=len(classes),
        both_bright=sum(c is BinClass.BOTH_BRIGHT for c in classes),
        event_flips=event_flips(result),
    )


def run_batch(fn: Callable[[int], object], n: int, workers: int = 1) -> list:
    """``[fn(0), ..., fn(n-1)]``, evaluated on ``workers`` threads.

    The trajectory kernels release the GIL; results come back in index
    order so the worker count never changes what is returned.
    """
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def flip_sweep(
    base_params: SimulationParams,
    r_values: Sequence[float],
    trajectories_per_point: int,
    t_max: float,
    bin_width: float = 50.0,
    threshold: int = 3,
    workers: int = 1,
    thresholds: Sequence[int] | None = None,
) -> list[SweepPoint] | dict[int, list[SweepPoint]]:
    """Flip statistics at each separation in ``r_values``.

    Every trajectory starts in |1,2> and runs with re-preparation: an
    undetected jump immediately restores one atom bright and one shelved,
    and the clock keeps running.  Trajectory ``i`` at point ``k`` uses
    stream ``k * trajectories_per_point + i`` of ``base_params.seed``.

    Passing ``thresholds`` classifies the same simulated records at several
    thresholds and returns ``{threshold: points}``.
    """
    for r in r_values:
        if not 0.05 <= r <= 10.0 + 1e-12:
            raise ValueError(f"r={r!r} outside the supported sweep range [0.05, 10]")
    thr_list = list(thresholds) if thresholds is not None else [threshold]
    params = base_params.with_(t_max=t_max, initial_state=product_state(1, 2))
    n = int(trajectories_per_point)
    out: dict[int, list[SweepPoint]] = {thr: [] for thr in thr_list}

    for k, r in enumerate(r_values):
        p = params.with_(geom=params.geom.with_r(float(r)))
        try:
            model = build_model(p)
        except NumericalError as exc:
            raise type(exc)(f"r={r:g}: {exc}") from exc

        def one(i, p=p, model=model, k=k):
            try:
                res = run_trajectory(
                    p, model.channels, model.generator,
                    trajectory_rng(p.seed, k * n + i), reprepare=True,
                )
            except NumericalError as exc:
                raise type(exc)(f"r={r:g}, trajectory {i}: {exc}") from exc
            return [tally_trajectory(res, bin_width, t_max, thr) for thr in thr_list]

        tallies = run_batch(one, n, workers)
        g2 = cross_coupling(Transition.T12, p.rates, p.geom).abs_sq
        for j, thr in enumerate(thr_list):
            out[thr].append(_summarize(float(r), [t[j] for t in tallies], bin_width, n * t_max, g2))
        pt = out[thr_list[0]][-1]
        log.info("r=%.4g  flips=%d  rate=%.4g  |g12|^2=%.4g", r, pt.flips, pt.flip_rate, g2)
    return out if thresholds is not None else out[threshold]


def _summarize(r: float, tallies: Sequence[_TrajectoryTally], bin_width: float, total_time: float, g2: float) -> SweepPoint:
    flips = sum(t.flips for t in tallies)
    live = sum(t.live_bins for t in tallies) * bin_width
    rate = flips / live if live > 0 else 0.0
    err = math.sqrt(flips) / live if live > 0 else 0.0
    return SweepPoint(
        r=r,
        flips=flips,
        live_time=live,
        flip_rate=rate,
        stderr=err,
        abs_gamma12_sq=g2,
        flip_rate_total_time=flips / total_time if total_time > 0 else 0.0,
        total_time=total_time,
        event_flips=sum(t.event_flips for t in tallies),
        resets=sum(t.resets for t in tallies),
        bins=sum(t.bins for t in tallies),
        both_bright_bins=sum(t.both_bright for t in tallies),
    )


def fit_scaling(points: Sequence[SweepPoint]) -> FitResult:
    """Least-squares c_s in ``flip_rate ~ c_s |gamma_12|^2``."""
    used = [p for p in points if p.abs_gamma12_sq > 0]
    g = np.array([p.abs_gamma12_sq for p in used])
    f = np.array([p.flip_rate for p in used])
    if len(used) == 0 or not np.any(g):
        raise DegenerateSweepError("all |gamma_12|^2 values are zero")
    if len(used) < 3:
        raise DegenerateSweepError(f"need >= 3 usable points, got {len(used)}")
    c = float(f @ g / (g @ g))
    resid = float(np.sum((f - c * g) ** 2))
    return FitResult(c, resid, len(used))


def log_grid(r_min: float, r_max: float, points: int) -> list[float]:
    return [float(x) for x in np.geomspace(r_min, r_max, points)]


def write_sweep_csv(points: Sequence[SweepPoint], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for p in points:
        w.writerow(p.row())


def read_sweep_csv(fh: TextIO) -> list[SweepPoint]:
    """Parse a sweep CSV; ``#`` comment lines before the header are skipped."""
    lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    if tuple(reader.fieldnames or ()) != SWEEP_HEADER:
        raise ValueError(f"unexpected sweep CSV header {reader.fieldnames}")
    out = []
    for row in reader:
        out.append(
            SweepPoint(
                r=float(row["r_over_lambda12"]),
                flips=int(row["flips"]),
                live_time=float(row["live_time"]),
                flip_rate=float(row["flip_rate"]),
                stderr=float(row["stderr"]),
                abs_gamma12_sq=float(row["abs_gamma12_sq"]),
                flip_rate_total_time=float(row["flip_rate_total_time"]),
            )
        )
    return out


def write_fit_json(fit: FitResult, fh: TextIO, config: dict | None = None) -> None:
    payload = fit.to_dict()
    if config is not None:
        payload["config"] = config
    json.dump(payload, fh, indent=2, sort_keys=True)
    fh.write("\n")
