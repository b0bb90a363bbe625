"""Classical fixed-step Runge-Kutta 4 integration."""
from __future__ import annotations

import numpy as np


def rk4_step(f, t: float, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(t, x)
    k2 = f(t + h / 2, x + h / 2 * k1)
    k3 = f(t + h / 2, x + h / 2 * k2)
    k4 = f(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_integrate(f, t0: float, x0: np.ndarray, h: float, n_steps: int) -> np.ndarray:
    """Return the ``(n_steps + 1, n)`` array of states on the uniform grid."""
    out = np.empty((n_steps + 1, len(x0)))
    out[0] = x = np.asarray(x0, dtype=float)
    for k in range(n_steps):
        x = rk4_step(f, t0 + k * h, x, h)
        out[k + 1] = x
    return out


class LinearRK4Propagator:
    """RK4 for ``x' = A x + b`` with ``b`` constant over a step.

    For a linear right-hand side one RK4 step is exactly ``x+ = Phi x + Psi b``
    with the degree-4 Taylor polynomials

        Phi = I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24
        Psi = h (I + hA/2 + (hA)^2/6 + (hA)^3/24)

    so runs of steps with unchanged input collapse into matrix powers.
    """

    def __init__(self, A: np.ndarray, h: float):
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        I = np.eye(n)
        hA = h * A
        hA2 = hA @ hA
        hA3 = hA2 @ hA
        self.A = A
        self.h = h
        self.Phi = I + hA + hA2 / 2 + hA3 / 6 + hA3 @ hA / 24
        self.Psi = h * (I + hA / 2 + hA2 / 6 + hA3 / 24)
        self._blocks: dict[int, tuple[np.ndarray, np.ndarray]] = {1: (self.Phi, self.Psi)}

    def step(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.Phi @ x + self.Psi @ b

    def block(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``(Phi^k, sum_{j<k} Phi^j Psi)``: k steps with a frozen input."""
        if k < 1:
            raise ValueError("k must be >= 1")
        if k not in self._blocks:
            Pk, Sk = self.Phi, self.Psi
            for _ in range(k - 1):
                Sk = self.Phi @ Sk + self.Psi
                Pk = self.Phi @ Pk
            self._blocks[k] = (Pk, Sk)
        return self._blocks[k]

    def advance(self, x: np.ndarray, b: np.ndarray, k: int) -> np.ndarray:
        if k == 0:
            return x
        Pk, Sk = self.block(k)
        return Pk @ x + Sk @ b
