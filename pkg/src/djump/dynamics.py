"""Conditional generator, jump channels and single quantum trajectories.

Between detections the state obeys ``d psi/dt = -K psi`` with the
non-Hermitian generator

    K = sum_{n<m} sum_{i,j} gamma_ij^{nm} sigma_i^{nm} sigma_j^{mn}
        - i Omega_R sum_i (sigma_i^{13} + sigma_i^{31})

(hbar = 1).  The default stepper takes first-order steps ``(1 - K dt)``
and samples one jump per step from a single uniform; the ``exact`` stepper
uses the matrix exponential and a waiting-time draw.  Both unravel the
same master equation, which the oracle module checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence, TextIO

import numpy as np
import scipy.linalg

from . import _kernels
from .coupling import (
    NO_COUPLING,
    CrossCoupling,
    Geometry,
    Transition,
    TransitionRates,
    cross_coupling,
)
from .errors import (
    ConfigError,
    DegenerateCollapseError,
    NumericalError,
    TimestepTooLargeError,
)
from .hilbert import (
    ATOMS,
    BASIS_LABELS,
    DIM,
    Atom,
    identity,
    norm_sq,
    normalize,
    product_state,
    sigma,
    swap_atoms,
)

STEPPERS = ("euler", "exact")
STEP_BOUND = 0.05

DETECTOR_LABELS = {Atom.ONE: "det1_13", Atom.TWO: "det2_13"}
POPULATION_HEADER = ("t",) + tuple(f"p{lab}" for lab in BASIS_LABELS)


def trajectory_rng(seed: int, *index: int) -> np.random.Generator:
    """Counter-based stream for one trajectory.

    The stream is Philox keyed by ``SeedSequence(seed, spawn_key=index)``,
    so trajectory ``index`` sees the same numbers no matter which worker
    runs it or in which order.
    """
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SimulationParams:
    rates: TransitionRates = field(default_factory=TransitionRates)
    geom: Geometry = field(default_factory=Geometry)
    rabi: float = 8.0
    dt: float = 1e-3
    t_max: float = 100.0
    seed: int = 1
    initial_state: np.ndarray = field(default_factory=lambda: product_state(1, 2), compare=False)
    optical_cross_terms: bool = False
    stepper: str = "euler"

    def __post_init__(self):
        psi = np.asarray(self.initial_state, dtype=complex)
        if psi.shape != (DIM,):
            raise ConfigError(f"initial state must have {DIM} amplitudes")
        if not norm_sq(psi) > 0.0:
            raise ConfigError("initial state is the zero vector")
        psi = normalize(psi)
        psi.setflags(write=False)
        object.__setattr__(self, "initial_state", psi)
        if self.stepper not in STEPPERS:
            raise ConfigError(f"stepper must be one of {STEPPERS}, got {self.stepper!r}")
        if not (self.rabi >= 0.0 and math.isfinite(self.rabi)):
            raise ConfigError(f"rabi must be finite and >= 0, got {self.rabi!r}")
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be > 0, got {self.dt!r}")
        if not self.t_max >= 0.0:
            raise ConfigError(f"t_max must be >= 0, got {self.t_max!r}")
        if self.dt * 2.0 * self.rabi > STEP_BOUND * (1 + 1e-12):
            raise ConfigError(
                f"dt*2*rabi = {self.dt * 2 * self.rabi:.4g} exceeds {STEP_BOUND}; reduce dt"
            )
        if self.dt * 2.0 * self.max_decay_rate > STEP_BOUND * (1 + 1e-12):
            raise ConfigError(
                f"dt*2*max decay = {self.dt * 2 * self.max_decay_rate:.4g} exceeds {STEP_BOUND}"
            )

    @property
    def max_decay_rate(self) -> float:
        """Largest amplitude damping rate of any two-atom basis state."""
        r = self.rates
        return 2.0 * max(r.gamma13 + r.gamma12, r.gamma23)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    def with_(self, **changes) -> "SimulationParams":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class ConditionalGenerator:
    """``K`` with one no-jump step ``psi <- (1 - K dt) psi``."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def damping(self) -> np.ndarray:
        """Hermitian part of K (total decay plus collective damping)."""
        return 0.5 * (self.matrix + self.matrix.conj().T)

    @property
    def hamiltonian(self) -> np.ndarray:
        """Hermitian H with K = i H + damping."""
        return -0.5j * (self.matrix - self.matrix.conj().T)


@dataclass(frozen=True, eq=False)
class JumpChannel:
    label: str
    operator: np.ndarray
    rate: float
    detector: Atom | None = None

    def weight(self, psi: np.ndarray) -> float:
        """rate * <psi|L^dag L|psi> for an unnormalized psi."""
        return self.rate * norm_sq(self.operator @ psi)


@dataclass(frozen=True)
class TrajectoryEvent:
    t: float
    channel: str


@dataclass(frozen=True, eq=False)
class Model:
    params: SimulationParams
    c12: CrossCoupling
    generator: ConditionalGenerator
    channels: tuple[JumpChannel, ...]


def _cross_terms(params: SimulationParams, c12: CrossCoupling) -> dict[Transition, CrossCoupling]:
    terms = {Transition.T12: c12, Transition.T13: NO_COUPLING, Transition.T23: NO_COUPLING}
    if params.optical_cross_terms:
        for tr in (Transition.T13, Transition.T23):
            terms[tr] = cross_coupling(tr, params.rates, params.geom)
    return terms


def build_conditional_generator(params: SimulationParams, c12: CrossCoupling) -> ConditionalGenerator:
    k = np.zeros((DIM, DIM), dtype=complex)
    for tr, cc in _cross_terms(params, c12).items():
        n, m = tr.value
        g = params.rates.of(tr)
        for i in ATOMS:
            k += g * (sigma(i, n, m) @ sigma(i, m, n))
        x = cc.complex
        if x != 0:
            k += x * (sigma(Atom.ONE, n, m) @ sigma(Atom.TWO, m, n))
            k += x * (sigma(Atom.TWO, n, m) @ sigma(Atom.ONE, m, n))
    for i in ATOMS:
        k += -1j * params.rabi * (sigma(i, 1, 3) + sigma(i, 3, 1))
    return ConditionalGenerator(k)


def _collective_pair(tr: Transition, gamma: float, cc: CrossCoupling, tag: str) -> list[JumpChannel]:
    n, m = tr.value
    low1, low2 = sigma(Atom.ONE, m, n), sigma(Atom.TWO, m, n)
    sym = 2.0 * (gamma + cc.gamma_dd)
    asym = 2.0 * (gamma - cc.gamma_dd)
    if min(sym, asym) < -1e-12 * max(gamma, 1.0):
        raise NumericalError(
            f"collective {tag} rate negative: |gamma_dd|={abs(cc.gamma_dd):.6g} > gamma={gamma:.6g}"
        )
    return [
        JumpChannel(f"coll{tag}_sym", (low1 + low2) / math.sqrt(2.0), max(sym, 0.0)),
        JumpChannel(f"coll{tag}_asym", (low1 - low2) / math.sqrt(2.0), max(asym, 0.0)),
    ]


def jump_channels(
    params: SimulationParams, c12: CrossCoupling, collective: bool = True
) -> tuple[JumpChannel, ...]:
    """Collapse operators whose dissipator matches the generator's damping.

    Order is fixed: detectors, 2->3 decays, then the two 1->2 channels.
    With ``collective=False`` the 1->2 decay is split per atom (labels
    ``a1_12``, ``a2_12``), which is only valid when ``gamma_dd == 0``.
    """
    r = params.rates
    terms = _cross_terms(params, c12)
    out: list[JumpChannel] = []
    if params.optical_cross_terms:
        out += _collective_pair(Transition.T13, r.gamma13, terms[Transition.T13], "13")
        out += _collective_pair(Transition.T23, r.gamma23, terms[Transition.T23], "23")
    else:
        for i in ATOMS:
            out.append(JumpChannel(DETECTOR_LABELS[i], sigma(i, 3, 1), 2.0 * r.gamma13, i))
        for i in ATOMS:
            out.append(JumpChannel(f"a{i.value}_23", sigma(i, 3, 2), 2.0 * r.gamma23))
    if collective:
        out += _collective_pair(Transition.T12, r.gamma12, c12, "12")
    else:
        if c12.gamma_dd != 0.0:
            raise NumericalError("per-atom 1->2 channels require gamma_dd == 0")
        for i in ATOMS:
            out.append(JumpChannel(f"a{i.value}_12", sigma(i, 2, 1), 2.0 * r.gamma12))
    return tuple(out)


def build_model(params: SimulationParams, collective: bool = True) -> Model:
    c12 = cross_coupling(Transition.T12, params.rates, params.geom)
    gen = build_conditional_generator(params, c12)
    return Model(params, c12, gen, jump_channels(params, c12, collective=collective))


def step_no_jump(psi: np.ndarray, gen: ConditionalGenerator, dt: float) -> np.ndarray:
    """One first-order no-jump step; the result is not normalized."""
    return psi - dt * (gen.matrix @ psi)


def exact_propagator(gen: ConditionalGenerator, t: float) -> np.ndarray:
    return scipy.linalg.expm(-t * gen.matrix)


def channel_probabilities(psi: np.ndarray, channels: Sequence[JumpChannel], dt: float) -> np.ndarray:
    n2 = norm_sq(psi)
    return np.array([dt * ch.weight(psi) / n2 for ch in channels])


def sample_jump(
    psi: np.ndarray, channels: Sequence[JumpChannel], dt: float, u: float
) -> JumpChannel | None:
    """Pick the channel whose slice of [0, 1) contains ``u``, or None."""
    p = channel_probabilities(psi, channels, dt)
    if p.sum() >= 1.0:
        raise TimestepTooLargeError(f"total jump probability {p.sum():.4g} >= 1; reduce dt")
    cum = 0.0
    for ch, pc in zip(channels, p):
        cum += pc
        if u < cum:
            return ch
    return None


def collapse(psi: np.ndarray, channel: JumpChannel) -> np.ndarray:
    out = channel.operator @ psi
    if not norm_sq(out) > 0.0:
        raise DegenerateCollapseError(f"channel {channel.label} has zero amplitude in this state")
    return normalize(out)


def _coo(m: np.ndarray):
    rows, cols = np.nonzero(m)
    return rows.astype(np.int64), cols.astype(np.int64), np.ascontiguousarray(m[rows, cols])


@dataclass(eq=False)
class TrajectoryResult:
    event_steps: np.ndarray
    event_channels: np.ndarray
    labels: tuple[str, ...]
    dt: float
    final_state: np.ndarray
    steps: int
    sample_times: np.ndarray | None = None
    sample_populations: np.ndarray | None = None

    @property
    def event_times(self) -> np.ndarray:
        return self.event_steps * self.dt

    @cached_property
    def events(self) -> list[TrajectoryEvent]:
        times = self.event_times
        return [TrajectoryEvent(float(t), self.labels[c]) for t, c in zip(times, self.event_channels)]

    def channel_mask(self, *labels: str) -> np.ndarray:
        idx = [self.labels.index(lab) for lab in labels if lab in self.labels]
        return np.isin(self.event_channels, idx)


def run_trajectory(
    params: SimulationParams,
    channels: Sequence[JumpChannel],
    gen: ConditionalGenerator,
    rng: np.random.Generator,
    *,
    sample_every: int = 0,
    reprepare: bool = False,
    jumps: bool = True,
    max_events: int | None = None,
) -> TrajectoryResult:
    """Run one trajectory from ``params.initial_state`` to ``params.t_max``.

    ``sample_every`` records normalized populations every that many steps
    (plus t = 0).  With ``reprepare`` every undetected jump (anything but a
    detector click) immediately restores the initial state, oriented so
    that the atom that was fluorescing keeps fluorescing.
    """
    n_steps = params.n_steps
    dt = params.dt
    psi = np.array(params.initial_state, dtype=np.complex128)
    reset_a = psi.copy()
    reset_b = swap_atoms(psi)
    ops = np.ascontiguousarray(np.stack([ch.operator for ch in channels]).astype(np.complex128))
    rates = np.array([ch.rate for ch in channels], dtype=float)
    is_det = np.array([ch.detector is not None for ch in channels])
    labels = tuple(ch.label for ch in channels)
    cap_events = -1 if max_events is None else int(max_events)

    n_samp_total = n_steps // sample_every + 1 if sample_every > 0 else 0
    samples = np.zeros((max(n_samp_total, 1), DIM))
    n_samp = 0
    if sample_every > 0:
        samples[0] = np.abs(psi) ** 2 / norm_sq(psi)
        n_samp = 1

    guess = 64 + int(2.2 * rates.sum() * params.t_max) if jumps else 1
    if max_events is not None:
        guess = min(guess, max(int(max_events), 1))
    ev_step = np.empty(guess, dtype=np.int64)
    ev_chan = np.empty(guess, dtype=np.int64)
    n_ev = 0
    k = 0

    if params.stepper == "euler":
        s_rows, s_cols, s_vals = _coo(identity() - dt * gen.matrix)
        damping = sum(ch.rate * (ch.operator.conj().T @ ch.operator) for ch in channels)
        g_rows, g_cols, g_vals = _coo(np.asarray(damping, dtype=complex))

        def call(k, n_ev, n_samp):
            return _kernels.euler_run(
                psi, s_rows, s_cols, s_vals, g_rows, g_cols, g_vals,
                ops, rates, is_det, reset_a, reset_b,
                dt, k, n_steps, rng, jumps, reprepare, cap_events, sample_every,
                ev_step, ev_chan, n_ev, samples, n_samp,
            )
    else:
        powers = _power_table(gen, dt)
        threshold = np.array([-1.0])

        def call(k, n_ev, n_samp):
            return _kernels.exact_run(
                psi, powers, ops, rates, is_det, reset_a, reset_b,
                k, n_steps, rng, jumps, reprepare, cap_events, sample_every,
                threshold, ev_step, ev_chan, n_ev, samples, n_samp,
            )

    while True:
        status, k, n_ev, n_samp = call(k, n_ev, n_samp)
        if status == _kernels.EVENTS_FULL:
            ev_step = np.concatenate([ev_step, np.empty_like(ev_step)])
            ev_chan = np.concatenate([ev_chan, np.empty_like(ev_chan)])
            continue
        if status == _kernels.STEP_TOO_LARGE:
            raise TimestepTooLargeError(f"total jump probability >= 1 at step {k}; reduce dt")
        if status == _kernels.DEGENERATE:
            raise DegenerateCollapseError(f"zero-amplitude collapse at step {k}")
        break

    result = TrajectoryResult(
        event_steps=ev_step[:n_ev].copy(),
        event_channels=ev_chan[:n_ev].copy(),
        labels=labels,
        dt=dt,
        final_state=psi,
        steps=k,
    )
    if sample_every > 0:
        result.sample_times = np.arange(n_samp) * sample_every * dt
        result.sample_populations = samples[:n_samp].copy()
    return result


MACRO_POWERS = 9  # advance up to 2**8 steps per norm check


def _power_table(gen: ConditionalGenerator, dt: float) -> np.ndarray:
    return np.ascontiguousarray(
        np.stack([exact_propagator(gen, dt * 2**j) for j in range(MACRO_POWERS)])
    )


def write_events_jsonl(result: TrajectoryResult, header: dict, fh: TextIO) -> None:
    fh.write(json.dumps(header, sort_keys=True) + "\n")
    for t, c in zip(result.event_times, result.event_channels):
        fh.write(json.dumps({"t": float(t), "channel": result.labels[c]}) + "\n")


def write_populations_csv(times: np.ndarray, pops: np.ndarray, fh: TextIO) -> None:
    fh.write(",".join(POPULATION_HEADER) + "\n")
    for t, row in zip(times, pops):
        fh.write(",".join([f"{t:.12g}"] + [f"{p:.12g}" for p in row]) + "\n")
