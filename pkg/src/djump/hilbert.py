"""Two-atom, three-level product space.

States are plain complex vectors of length 9 and operators are dense 9x9
complex matrices, both in the atom-1-major basis

    (1,1), (1,2), (1,3), (2,1), (2,2), (2,3), (3,1), (3,2), (3,3)

where the pair is (level of atom 1, level of atom 2).  Level 1 is the upper
state, level 2 the metastable state and level 3 the ground state of the
driven 1 <-> 3 transition.
"""

from __future__ import annotations

from enum import IntEnum
from functools import lru_cache
from typing import Iterable

import numpy as np

from .errors import DegenerateCollapseError

DIM = 9
ATOL = 1e-12


class Level(IntEnum):
    UPPER = 1
    METASTABLE = 2
    GROUND = 3


class Atom(IntEnum):
    ONE = 1
    TWO = 2


LEVELS = (Level.UPPER, Level.METASTABLE, Level.GROUND)
ATOMS = (Atom.ONE, Atom.TWO)


def basis_index(n: int, m: int) -> int:
    """Position of the product state |n, m> in the fixed basis order."""
    n, m = Level(n), Level(m)
    return 3 * (n - 1) + (m - 1)


def basis_pair(index: int) -> tuple[Level, Level]:
    if not 0 <= index < DIM:
        raise IndexError(f"basis index {index} outside [0, {DIM - 1}]")
    return Level(index // 3 + 1), Level(index % 3 + 1)


BASIS_LABELS = tuple(f"{n.value}{m.value}" for n, m in map(basis_pair, range(DIM)))


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def product_state(n: int, m: int) -> np.ndarray:
    psi = np.zeros(DIM, dtype=complex)
    psi[basis_index(n, m)] = 1.0
    return psi


def identity() -> np.ndarray:
    return np.eye(DIM, dtype=complex)


@lru_cache(maxsize=None)
def sigma(atom: int, n: int, m: int) -> np.ndarray:
    """|n><m| acting on ``atom``, tensored with the identity on the other atom.

    The returned matrix is read-only and shared between callers.
    """
    single = np.zeros((3, 3), dtype=complex)
    single[Level(n) - 1, Level(m) - 1] = 1.0
    eye = np.eye(3, dtype=complex)
    if Atom(atom) is Atom.ONE:
        return _frozen(np.kron(single, eye))
    return _frozen(np.kron(eye, single))


def apply(op: np.ndarray, psi: np.ndarray) -> np.ndarray:
    return op @ psi


def norm_sq(psi: np.ndarray) -> float:
    return float(np.vdot(psi, psi).real)


def normalize(psi: np.ndarray) -> np.ndarray:
    n2 = norm_sq(psi)
    if not n2 > 0.0:
        raise DegenerateCollapseError("cannot normalize a zero state vector")
    return psi / np.sqrt(n2)


def expectation(op: np.ndarray, psi: np.ndarray) -> complex:
    """<psi|op|psi> / <psi|psi>."""
    return complex(np.vdot(psi, op @ psi) / norm_sq(psi))


def populations(psi: np.ndarray) -> np.ndarray:
    """Normalized level-pair populations |<n,m|psi>|^2 in basis order."""
    p = np.abs(psi) ** 2
    return p / p.sum()


def swap_atoms(psi: np.ndarray) -> np.ndarray:
    """Exchange the roles of the two atoms: <n,m|out> = <m,n|psi>."""
    return np.asarray(psi).reshape(3, 3).T.reshape(DIM).copy()


def format_state(psi: np.ndarray) -> str:
    """Debug serialization: one ``re,im`` line per amplitude, basis order."""
    return "".join(f"{z.real:.17g},{z.imag:.17g}\n" for z in np.asarray(psi, dtype=complex))


def parse_state(text: str | Iterable[str]) -> np.ndarray:
    lines = text.splitlines() if isinstance(text, str) else list(text)
    lines = [ln.strip() for ln in lines if ln.strip()]
    if len(lines) != DIM:
        raise ValueError(f"expected {DIM} amplitude lines, got {len(lines)}")
    out = np.empty(DIM, dtype=complex)
    for i, ln in enumerate(lines):
        re, im = ln.split(",")
        out[i] = complex(float(re), float(im))
    return out
