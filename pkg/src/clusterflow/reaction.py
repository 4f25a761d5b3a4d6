"""Reproduction laws and the face-based forcing ``E'(u) grad u``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, VectorField

KINDS = ("bistable", "monostable")


@dataclass(frozen=True)
class ReactionModel:
    """Net reproduction rate ``E``.

    ``bistable``: ``E(u) = (1 - u)(u - a)`` with Allee threshold ``a`` in (0, 1).
    ``monostable``: ``E(u) = 1 - u``.  No clamping is applied anywhere.
    """

    kind: str
    a: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model.kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "bistable":
            if self.a is None or not (0.0 < self.a < 1.0):
                raise ValueError(f"model.a must lie in (0, 1) for the bistable law, got {self.a}")

    def E(self, u):
        if self.kind == "bistable":
            return (1.0 - u) * (u - self.a)
        return 1.0 - u

    def dE(self, u):
        if self.kind == "bistable":
            return -2.0 * u + (self.a + 1.0)
        return np.full_like(np.asarray(u, dtype=float), -1.0)

    def d_uE(self, u):
        """Derivative of the full reaction ``u * E(u)`` with respect to ``u``."""
        if self.kind == "bistable":
            a = self.a
            return -3.0 * u**2 + 2.0 * (1.0 + a) * u - a
        return 1.0 - 2.0 * u

    def max_abs_d_uE(self, lo: float, hi: float) -> float:
        """``max |d/du (u E(u))|`` over ``[lo, hi]``.

        The derivative is a polynomial of degree <= 2, so the max sits at an
        endpoint or at the interior critical point.
        """
        candidates = [lo, hi]
        if self.kind == "bistable":
            crit = (1.0 + self.a) / 3.0
            if lo < crit < hi:
                candidates.append(crit)
        return float(max(abs(self.d_uE(c)) for c in candidates))


def bistable(a: float) -> ReactionModel:
    return ReactionModel("bistable", a)


def monostable() -> ReactionModel:
    return ReactionModel("monostable")


def eval_E(model: ReactionModel, u: np.ndarray) -> np.ndarray:
    return model.E(np.asarray(u, dtype=float))


def eval_dE(model: ReactionModel, u: np.ndarray) -> np.ndarray:
    return model.dE(np.asarray(u, dtype=float))


def forcing_gradE(model: ReactionModel, u: np.ndarray, grid: Grid, face_u: VectorField | None = None) -> VectorField:
    """``E'(u~) * G u`` on faces, with ``u~`` the face average of ``u``.

    ``face_u`` may be passed to share the exact face array used by the
    energy-mode advective flux.
    """
    if face_u is None:
        face_u = grid.face_average(u)
    gu = grid.gradient(u)
    return VectorField(model.dE(face_u.x) * gu.x, model.dE(face_u.y) * gu.y)


def reaction_term(model: ReactionModel, u: np.ndarray, r: float) -> np.ndarray:
    if r < 0:
        raise ValueError(f"r must be nonnegative, got {r}")
    return r * u * model.E(u)
