"""Scalar-to-feature expansions for atoms, bonds and angles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import ATOMIC_NUMBERS

# lookup-table row per supported element
ELEMENT_ROWS = {"H": 0, "O": 1, "Cu": 2}
Z_TO_ROW = {ATOMIC_NUMBERS[s]: r for s, r in ELEMENT_ROWS.items()}

_SMALL_X = 1e-10


@dataclass(frozen=True)
class EncoderConfig:
    D: int = 64
    c_d: float = 6.0
    c_alpha: float = 2.0
    # "cos": bond angle as cos(a)+1 over D/2 channels; "cos_sin": split cos/sin
    # quarters like the dihedral layout
    bond_angle_mode: str = "cos"

    def __post_init__(self):
        if self.D % 4 or self.D <= 0:
            raise ValueError(f"D must be a positive multiple of 4, got {self.D}")
        if self.c_d <= 0 or self.c_alpha <= 0:
            raise ValueError("cutoffs must be positive")
        if self.bond_angle_mode not in ("cos", "cos_sin"):
            raise ValueError(f"unknown bond_angle_mode {self.bond_angle_mode!r}")


def rbf_expand(x, c: float, m: int) -> np.ndarray:
    """Radial Bessel basis sqrt(2/c) sin(n pi x / c) / x for n = 1..m.

    Accepts a scalar (returns shape ``(m,)``) or an array (``x.shape + (m,)``).
    Inputs below 1e-10 use the x -> 0 limit sqrt(2/c) n pi / c.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("rbf_expand needs x >= 0")
    n = np.arange(1, m + 1, dtype=float)
    xs = x[..., None]
    small = xs < _SMALL_X
    safe = np.where(small, 1.0, xs)
    out = np.sqrt(2.0 / c) * np.sin(n * np.pi * safe / c) / safe
    limit = np.sqrt(2.0 / c) * n * np.pi / c
    return np.where(small, limit, out)


def atom_rows(atom_numbers) -> np.ndarray:
    try:
        return np.array([Z_TO_ROW[int(z)] for z in atom_numbers], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"unsupported atomic number {exc.args[0]}") from None


def embed_atom_type(z, table: np.ndarray) -> np.ndarray:
    """Row of the learnable (3, D) lookup table for element ``z`` (symbol or number)."""
    if isinstance(z, str):
        if z not in ELEMENT_ROWS:
            raise ValueError(f"unsupported element {z!r}")
        return table[ELEMENT_ROWS[z]]
    return table[atom_rows([z])[0]]


def encode_bond(d, cfg: EncoderConfig) -> np.ndarray:
    """Distances beyond ``c_d`` use the same formula (no clamp)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("bond distance must be positive")
    return rbf_expand(d, cfg.c_d, cfg.D)


def encode_bond_angles(alpha, cfg: EncoderConfig) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if np.any((a < 0) | (a > 180)):
        raise ValueError("bond angle must lie in [0, 180] degrees")
    r = np.radians(a)
    D = cfg.D
    out = np.zeros(a.shape + (D,))
    cos1 = np.maximum(np.cos(r) + 1.0, 0.0)
    if cfg.bond_angle_mode == "cos":
        out[..., : D // 2] = rbf_expand(cos1, cfg.c_alpha, D // 2)
    else:
        out[..., : D // 4] = rbf_expand(cos1, cfg.c_alpha, D // 4)
        out[..., D // 4 : D // 2] = rbf_expand(np.sin(r) + 1.0, cfg.c_alpha, D // 4)
    return out


def encode_dihedrals(alpha, cfg: EncoderConfig) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if np.any((a < 0) | (a >= 360)):
        raise ValueError("dihedral angle must lie in [0, 360) degrees")
    r = np.radians(a)
    D = cfg.D
    out = np.zeros(a.shape + (D,))
    # cos/sin + 1 can round to a hair below zero
    cos1 = np.maximum(np.cos(r) + 1.0, 0.0)
    sin1 = np.maximum(np.sin(r) + 1.0, 0.0)
    out[..., D // 2 : 3 * D // 4] = rbf_expand(cos1, cfg.c_alpha, D // 4)
    out[..., 3 * D // 4 :] = rbf_expand(sin1, cfg.c_alpha, D // 4)
    return out


def encode_angle(kind: str, angle: float, cfg: EncoderConfig) -> np.ndarray:
    if kind == "bond_angle":
        return encode_bond_angles(angle, cfg)[0]
    if kind == "dihedral":
        return encode_dihedrals(angle, cfg)[0]
    raise ValueError(f"unknown angle kind {kind!r}")
