"""Target densities for the sampler studies, with analytic gradients.

Each target exposes the potential V(q) = -log of the (unnormalised)
density and its gradient.  Gradients are exact; the test-suite checks them
against finite differences.  Scalar math is used in the low-dimensional
targets because the samplers call these once per integration segment.
"""

from __future__ import annotations

import math

import numpy as np

from .core import as_state

__all__ = [
    "Bimodal1D",
    "DiagGaussianND",
    "Flower2D",
    "GaussMixture2D",
    "Kepler",
    "TargetDensity",
    "make_target",
]

_LOG_2PI = math.log(2.0 * math.pi)


class TargetDensity:
    """Base interface: dimension, potential, gradient, optional extras."""

    dim: int = 0
    name: str = "target"
    #: (mean, diagonal of covariance) when known in closed form, else None.
    exact_moments: tuple[np.ndarray, np.ndarray] | None = None

    def potential(self, q) -> float:
        raise NotImplementedError

    def gradient(self, q) -> np.ndarray:
        raise NotImplementedError

    def sample_exact(self, rng: np.random.Generator, size: int | None = None):
        """Draw exact samples when available."""
        raise NotImplementedError(f"{self.name} has no exact sampler")

    def params(self) -> dict:
        """Constructor parameters, for run provenance."""
        return {}

    def _check(self, q) -> np.ndarray:
        q = as_state(q)
        if q.shape[0] != self.dim:
            raise ValueError(f"{self.name} expects dim {self.dim}, got {q.shape[0]}")
        return q


class Bimodal1D(TargetDensity):
    """Two-component 1-D Gaussian mixture with well separated modes.

    Unnormalised density
        pi(x) = 3/sqrt(2 pi 3^2) exp(-(x+2)^2 / (2 3^2))
              + 1/(4 sqrt(2 pi)) exp(-(x-4)^2 / 2)
    """

    dim = 1
    name = "bimodal1d"

    _LOG_W1 = math.log(3.0) - 0.5 * math.log(2.0 * math.pi * 9.0)
    _LOG_W2 = math.log(0.25) - 0.5 * _LOG_2PI

    def _exponents(self, x: float) -> tuple[float, float]:
        return (
            self._LOG_W1 - (x + 2.0) ** 2 / 18.0,
            self._LOG_W2 - (x - 4.0) ** 2 / 2.0,
        )

    def potential(self, q) -> float:
        x = float(q[0])
        a1, a2 = self._exponents(x)
        m = a1 if a1 > a2 else a2
        if m == -math.inf:
            return math.inf
        return -(m + math.log(math.exp(a1 - m) + math.exp(a2 - m)))

    def gradient(self, q) -> np.ndarray:
        x = float(q[0])
        a1, a2 = self._exponents(x)
        m = a1 if a1 > a2 else a2
        e1 = math.exp(a1 - m)
        e2 = math.exp(a2 - m)
        s1 = e1 / (e1 + e2)
        s2 = 1.0 - s1
        return np.array([s1 * (x + 2.0) / 9.0 + s2 * (x - 4.0)])

    def params(self) -> dict:
        return {}


class GaussMixture2D(TargetDensity):
    """Three-component 2-D Gaussian mixture.

    Unnormalised density sum_i |2 pi Sigma_i|^(-1/2)-style weights
    1/sqrt(2 pi |Sigma_i|) with means (4,2), (3,-2), (-4,0).
    """

    dim = 2
    name = "mixture2d"

    MEANS = np.array([[4.0, 2.0], [3.0, -2.0], [-4.0, 0.0]])
    COVS = np.array(
        [
            [[1.0, 1.0 / 3.0], [1.0 / 3.0, 3.0]],
            [[2.0, 0.5], [0.5, 1.0]],
            [[0.5, 0.1], [0.1, 1.0]],
        ]
    )

    def __init__(self):
        self._comps = []
        for mu, cov in zip(self.MEANS, self.COVS):
            inv = np.linalg.inv(cov)
            logw = -0.5 * math.log(2.0 * math.pi * float(np.linalg.det(cov)))
            self._comps.append(
                (float(mu[0]), float(mu[1]), float(inv[0, 0]), float(inv[0, 1]), float(inv[1, 1]), logw)
            )

    def _exponents(self, x: float, y: float):
        out = []
        for mx, my, a, b, c, logw in self._comps:
            dx = x - mx
            dy = y - my
            out.append(logw - 0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy))
        return out

    def potential(self, q) -> float:
        x = float(q[0])
        y = float(q[1])
        es = self._exponents(x, y)
        m = max(es)
        if m == -math.inf:
            return math.inf
        return -(m + math.log(sum(math.exp(e - m) for e in es)))

    def gradient(self, q) -> np.ndarray:
        x = float(q[0])
        y = float(q[1])
        es = self._exponents(x, y)
        m = max(es)
        ws = [math.exp(e - m) for e in es]
        tot = sum(ws)
        gx = 0.0
        gy = 0.0
        for w, (mx, my, a, b, c, _) in zip(ws, self._comps):
            s = w / tot
            dx = x - mx
            dy = y - my
            gx += s * (a * dx + b * dy)
            gy += s * (b * dx + c * dy)
        return np.array([gx, gy])


class DiagGaussianND(TargetDensity):
    """N independent Gaussians with component k (1-based) having variance 1/k^2.

    V(q) = (1/2) sum_k k^2 q_k^2, so the conditioning worsens quadratically
    with dimension.
    """

    name = "diag_gaussian"

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)
        self._k = np.arange(1, self.dim + 1, dtype=float)
        self._w = self._k**2
        self.exact_moments = (np.zeros(self.dim), 1.0 / self._w)

    def potential(self, q) -> float:
        q = np.asarray(q, dtype=float)
        return 0.5 * float(np.dot(self._w * q, q))

    def gradient(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return self._w * q

    def sample_exact(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            return rng.standard_normal(self.dim) / self._k
        return rng.standard_normal((size, self.dim)) / self._k

    def ray_quadratic(self, q, v) -> tuple[float, float, float]:
        """Coefficients (a, b, c) of V(q + s v) = a s^2 + b s + c.

        The potential is an exact quadratic form, so its restriction to any
        ray is a parabola; the integrator exploits this to locate terrace
        crossings in closed form.
        """
        wq = self._w * q
        return (
            0.5 * float(np.dot(self._w * v, v)),
            float(np.dot(wq, v)),
            0.5 * float(np.dot(wq, q)),
        )

    def params(self) -> dict:
        return {"dim": self.dim}


class Flower2D(TargetDensity):
    """Gaussian in a petal-modulated radius.

    With polar coordinates (r, theta), the modulated radius is
        rho(x) = r / (1 + sin(gamma) cos(m theta))
    and the unnormalised density is exp(-rho^2 / 2), giving m-fold
    rotational symmetry.
    """

    dim = 2
    name = "flower"

    def __init__(self, gamma: float = 1.0 / 3.0, m: int = 15):
        if m < 1:
            raise ValueError(f"petal count must be positive, got {m}")
        self.gamma = float(gamma)
        self.m = int(m)
        self._sg = math.sin(self.gamma)
        if not abs(self._sg) < 1.0:
            raise ValueError("sin(gamma) must have magnitude below 1")

    def modulated_radius(self, q) -> float:
        """rho(x); zero at the origin."""
        x = float(q[0])
        y = float(q[1])
        r = math.hypot(x, y)
        if r == 0.0:
            return 0.0
        theta = math.atan2(y, x)
        return r / (1.0 + self._sg * math.cos(self.m * theta))

    def potential(self, q) -> float:
        rho = self.modulated_radius(q)
        return 0.5 * rho * rho

    def gradient(self, q) -> np.ndarray:
        x = float(q[0])
        y = float(q[1])
        r = math.hypot(x, y)
        if r == 0.0:
            # rho ~ r/D near the origin, so grad V = rho grad rho -> 0.
            return np.zeros(2)
        theta = math.atan2(y, x)
        ct = x / r
        st = y / r
        d = 1.0 + self._sg * math.cos(self.m * theta)
        rho = r / d
        # grad rho = e_r / D + r sin(gamma) m sin(m theta) / D^2 * e_theta / r
        a = 1.0 / d
        b = self._sg * self.m * math.sin(self.m * theta) * rho / (d * r)
        gx = rho * (a * ct + b * (-st))
        gy = rho * (a * st + b * ct)
        return np.array([gx, gy])

    def params(self) -> dict:
        return {"gamma": self.gamma, "m": self.m}


class Kepler(TargetDensity):
    """Planar attractive inverse-distance potential V(q) = -1/|q|.

    Used as an integrator stress test (closed orbits, conserved angular
    momentum), not as a normalisable sampling target.
    """

    dim = 2
    name = "kepler"

    def potential(self, q) -> float:
        x = float(q[0])
        y = float(q[1])
        r = math.hypot(x, y)
        if r == 0.0:
            raise ValueError("kepler potential is singular at the origin")
        return -1.0 / r

    def gradient(self, q) -> np.ndarray:
        x = float(q[0])
        y = float(q[1])
        r = math.hypot(x, y)
        if r == 0.0:
            raise ValueError("kepler potential is singular at the origin")
        r3 = r * r * r
        return np.array([x / r3, y / r3])


_REGISTRY = {
    "bimodal1d": Bimodal1D,
    "mixture2d": GaussMixture2D,
    "diag_gaussian": DiagGaussianND,
    "flower": Flower2D,
    "kepler": Kepler,
}


def target_names() -> list[str]:
    return sorted(_REGISTRY)


def make_target(name: str, **params) -> TargetDensity:
    """Instantiate a registered target by name.

    ``diag_gaussian`` takes ``dim``; ``flower`` takes optional ``gamma``
    and ``m``; the others take no parameters.
    """
    try:
        cls = _REGISTRY[name]
    except KeyError:
        known = ", ".join(target_names())
        raise ValueError(f"unknown target {name!r}; known targets: {known}") from None
    return cls(**params)
