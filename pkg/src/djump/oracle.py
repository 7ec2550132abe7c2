"""Master-equation reference integrator on the 9-dimensional space.

The right-hand side is assembled from the same generator and jump channels
the trajectories use,

    d rho/dt = -(K rho + rho K^dag) + sum_c rate_c L_c rho L_c^dag,

and integrated with fixed-step classical RK4.  Because the equation is
linear, one RK4 step is a fixed 81x81 matrix built once from the
right-hand side itself; stepping is then a single matrix-vector product.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .dynamics import (
    POPULATION_HEADER,
    ConditionalGenerator,
    JumpChannel,
    SimulationParams,
    build_model,
)
from .errors import InvariantViolation
from .hilbert import DIM

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Checkpoint:
    t: float
    rho: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.rho)).copy()


def pure_density(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    rho = np.outer(psi, psi.conj())
    return rho / np.trace(rho).real


def lindblad_rhs(
    rho: np.ndarray,
    params: SimulationParams | None,
    channels: Sequence[JumpChannel],
    gen: ConditionalGenerator,
) -> np.ndarray:
    k = gen.matrix
    out = -(k @ rho + rho @ k.conj().T)
    for ch in channels:
        if ch.rate:
            out += ch.rate * (ch.operator @ rho @ ch.operator.conj().T)
    return out


def liouvillian(channels: Sequence[JumpChannel], gen: ConditionalGenerator) -> np.ndarray:
    """81x81 matrix of ``lindblad_rhs`` acting on row-major flattened rho."""
    cols = []
    for j in range(DIM * DIM):
        e = np.zeros(DIM * DIM, dtype=complex)
        e[j] = 1.0
        cols.append(lindblad_rhs(e.reshape(DIM, DIM), None, channels, gen).ravel())
    return np.stack(cols, axis=1)


def rk4_step_matrix(lv: np.ndarray, h: float) -> np.ndarray:
    """Exact RK4 update for the linear system ``y' = lv y``."""
    a = h * lv
    eye = np.eye(lv.shape[0], dtype=complex)
    a2 = a @ a
    return eye + a + a2 / 2 + a2 @ a / 6 + a2 @ a2 / 24


def check_density(rho: np.ndarray, t: float) -> None:
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > HERMITIAN_TOL:
        raise InvariantViolation(f"density matrix not Hermitian at t={t:g} (dev {herm:.3g})")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvariantViolation(f"trace drifted to {tr:.12g} at t={t:g}")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
    if lo < -POSITIVITY_TOL:
        raise InvariantViolation(f"negative eigenvalue {lo:.3g} at t={t:g}")


def integrate(
    rho0: np.ndarray,
    params: SimulationParams,
    t_end: float,
    dt_ode: float = 2.5e-4,
    checkpoint_every: float = 1.0,
    channels: Sequence[JumpChannel] | None = None,
    gen: ConditionalGenerator | None = None,
) -> list[Checkpoint]:
    """RK4 from ``rho0`` to ``t_end``; checkpoints at multiples of ``checkpoint_every``.

    ``t_end`` is always a checkpoint.  Every checkpoint is checked for
    Hermiticity, unit trace and positivity.
    """
    if channels is None or gen is None:
        model = build_model(params)
        channels, gen = model.channels, model.generator
    rho = np.array(rho0, dtype=complex)
    check_density(rho, 0.0)
    out = [Checkpoint(0.0, rho.copy())]
    if t_end <= 0:
        return out
    n_total = max(1, int(round(t_end / dt_ode)))
    h = t_end / n_total
    per_cp = max(1, int(round(checkpoint_every / h)))
    step = rk4_step_matrix(liouvillian(channels, gen), h)
    y = rho.ravel()
    for n in range(1, n_total + 1):
        y = step @ y
        if n % per_cp == 0 or n == n_total:
            rho = y.reshape(DIM, DIM)
            t = n * h
            check_density(rho, t)
            out.append(Checkpoint(t, rho.copy()))
    return out


def write_checkpoints_csv(checkpoints: Sequence[Checkpoint], fh: TextIO) -> None:
    fh.write(",".join(POPULATION_HEADER) + "\n")
    for cp in checkpoints:
        fh.write(",".join([f"{cp.t:.12g}"] + [f"{p:.12g}" for p in cp.populations]) + "\n")
