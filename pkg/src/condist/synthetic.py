"""Synthetic ground-truth kernels with samplers and analytic conditional CDFs.

Each kernel is a measure-valued map x -> P_x with a known sampler and a
closed-form conditional CDF, so estimator error can be evaluated exactly.

intro_uniform   d_X = d_Y = 1,  P_x = Uniform([x, x + 1/2]),  X ~ U([0,1]).
                Lipschitz constant 1 (shifted uniforms: W distance = |x-x'|).

model1          d_X = d_Y = 1,  X ~ U([0,1]),
                Y = xi * (mu(X) + sigma(X) Z),  Z ~ N(0,1), xi Rademacher,
                mu(x) = 0.1 (1 + cos 2 pi x) + 0.5,
                sigma(x) = 0.12 |1 - cos 2 pi x|.
                Mixture CDF  0.5 Phi((t-mu)/sigma) + 0.5 Phi((t+mu)/sigma);
                sigma(x) = 0 (x in {0,1}) degenerates to half-mass steps
                at +-mu(x).

model2          d_X = d_Y = 1,  X ~ U([0,1]),
                Y = 0.5 * 1_{[0,c)}(X) + 0.5 U,  U ~ U([0,1]).
                Uniform on [0.5*1_{[0,c)}(x), 0.5*1_{[0,c)}(x) + 0.5];
                piecewise constant in x with a jump at the threshold c.
                The literal formula has c = 1 (constant kernel on [0,1));
                jump experiments set c = 0.5 explicitly.

model3          d_X = d_Y = 3,  X ~ U([-1/2, 1/2]^3),
                Y = zeta (cos(A X) + 0.1 cos(S_X) W)
                    + (1-zeta) (cos(A' X) + 0.1 cos(S'_X) W'),
                zeta a fair coin, W, W' ~ N(0, I_3), cos entrywise,
                S_X[i,j] = v_ij . X.  A, A', v_ij, v'_ij are drawn from a
                standard normal once, from a stored seed, and frozen.
                Ground truth is evaluated through 1-d projections: for a
                unit-l1 vector a, a.Y | X=x is the two-component normal
                mixture with means a.cos(Ax), a.cos(A'x) and standard
                deviations 0.1 ||cos(S_x)^T a||_2, 0.1 ||cos(S'_x)^T a||_2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .core import Dataset, dataset_from_arrays
from .errors import InvalidArgument
from .rng import substream

DEFAULT_MODEL3_SEED = 7


def _phi(z: np.ndarray) -> np.ndarray:
    """Standard normal CDF via erf (absolute error well below 1e-12)."""
    return 0.5 * (1.0 + erf(np.asarray(z, dtype=np.float64) / np.sqrt(2.0)))


def _uniform_cdf(t, lo: float, hi: float):
    t = np.asarray(t, dtype=np.float64)
    return np.clip((t - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True)
class Kernel:
    """Base fields shared by all synthetic kernels."""

    name: str = field(init=False, default="")
    d_x: int = field(init=False, default=1)
    d_y: int = field(init=False, default=1)
    lipschitz_constant: float | None = field(init=False, default=None)

    @property
    def feature_low(self) -> np.ndarray:
        return np.zeros(self.d_x)

    @property
    def feature_high(self) -> np.ndarray:
        return np.ones(self.d_x)


@dataclass(frozen=True)
class IntroUniform(Kernel):
    def __post_init__(self):
        object.__setattr__(self, "name", "intro_uniform")
        object.__setattr__(self, "lipschitz_constant", 1.0)

    def target_bounds(self) -> tuple[float, float]:
        return (0.0, 1.5)

    def sample(self, m: int, rng: np.random.Generator):
        x = rng.uniform(0.0, 1.0, size=m)
        u = rng.uniform(0.0, 1.0, size=m)
        return x[:, None], (x + 0.5 * u)[:, None]

    def cdf(self, x: float, t):
        return _uniform_cdf(t, x, x + 0.5)


@dataclass(frozen=True)
class Model1(Kernel):
    def __post_init__(self):
        object.__setattr__(self, "name", "model1")

    @staticmethod
    def mu(x):
        return 0.1 * (1.0 + np.cos(2.0 * np.pi * x)) + 0.5

    @staticmethod
    def sigma(x):
        return 0.12 * np.abs(1.0 - np.cos(2.0 * np.pi * x))

    def target_bounds(self) -> tuple[float, float]:
        # |Y| <= mu_max + 3 sigma_max ~= 1.42; padded.
        return (-1.5, 1.5)

    def sample(self, m: int, rng: np.random.Generator):
        x = rng.uniform(0.0, 1.0, size=m)
        xi = 2.0 * rng.integers(0, 2, size=m) - 1.0
        z = rng.standard_normal(m)
        y = xi * (self.mu(x) + self.sigma(x) * z)
        return x[:, None], y[:, None]

    def cdf(self, x: float, t):
        t = np.asarray(t, dtype=np.float64)
        mu, sig = self.mu(x), self.sigma(x)
        if sig == 0.0:
            return 0.5 * (t >= -mu) + 0.5 * (t >= mu)
        return 0.5 * _phi((t - mu) / sig) + 0.5 * _phi((t + mu) / sig)


@dataclass(frozen=True)
class Model2(Kernel):
    threshold: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "name", "model2")

    def target_bounds(self) -> tuple[float, float]:
        return (0.0, 1.0)

    def _shift(self, x):
        return 0.5 * ((np.asarray(x) >= 0.0) & (np.asarray(x) < self.threshold))

    def sample(self, m: int, rng: np.random.Generator):
        x = rng.uniform(0.0, 1.0, size=m)
        u = rng.uniform(0.0, 1.0, size=m)
        y = self._shift(x) + 0.5 * u
        return x[:, None], y[:, None]

    def cdf(self, x: float, t):
        lo = float(self._shift(x))
        return _uniform_cdf(t, lo, lo + 0.5)


def frozen_model3_params(seed: int):
    """Frozen mixing matrices (A, A', v, v') for model3, drawn once.

    v and v' have shape (3, 3, 3): v[i, j] is the length-3 row defining
    entry (i, j) of the x-dependent matrix S_x.  Draw order is fixed
    (A, A', v, v') so the parameters are reproducible from the seed.
    """
    rng = substream(seed)
    a = rng.standard_normal((3, 3))
    a_prime = rng.standard_normal((3, 3))
    v = rng.standard_normal((3, 3, 3))
    v_prime = rng.standard_normal((3, 3, 3))
    return a, a_prime, v, v_prime


@dataclass(frozen=True)
class Model3(Kernel):
    param_seed: int = DEFAULT_MODEL3_SEED
    a: np.ndarray = field(init=False, repr=False, default=None)
    a_prime: np.ndarray = field(init=False, repr=False, default=None)
    v: np.ndarray = field(init=False, repr=False, default=None)
    v_prime: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "name", "model3")
        object.__setattr__(self, "d_x", 3)
        object.__setattr__(self, "d_y", 3)
        a, ap, v, vp = frozen_model3_params(self.param_seed)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "a_prime", ap)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "v_prime", vp)

    @property
    def feature_low(self) -> np.ndarray:
        return np.full(3, -0.5)

    @property
    def feature_high(self) -> np.ndarray:
        return np.full(3, 0.5)

    def sigma_matrix(self, x: np.ndarray, prime: bool = False) -> np.ndarray:
        v = self.v_prime if prime else self.v
        return v @ np.asarray(x, dtype=np.float64)

    def sample(self, m: int, rng: np.random.Generator):
        x = rng.uniform(-0.5, 0.5, size=(m, 3))
        zeta = rng.integers(0, 2, size=m).astype(np.float64)[:, None]
        w = rng.standard_normal((m, 3))
        w_prime = rng.standard_normal((m, 3))
        s = np.cos(np.einsum("ijk,nk->nij", self.v, x))
        s_prime = np.cos(np.einsum("ijk,nk->nij", self.v_prime, x))
        y1 = np.cos(x @ self.a.T) + 0.1 * np.einsum("nij,nj->ni", s, w)
        y2 = np.cos(x @ self.a_prime.T) + 0.1 * np.einsum("nij,nj->ni", s_prime, w_prime)
        return x, zeta * y1 + (1.0 - zeta) * y2

    def projected_cdf(self, x: np.ndarray, a_vec: np.ndarray, t):
        """CDF of a_vec . Y given X = x, for unit-l1 a_vec."""
        a_vec = np.asarray(a_vec, dtype=np.float64)
        if abs(np.abs(a_vec).sum() - 1.0) > 1e-9:
            raise InvalidArgument("projection vector must have unit l1 norm")
        x = np.asarray(x, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t, dtype=np.float64)
        for mat, v in ((self.a, self.v), (self.a_prime, self.v_prime)):
            mean = a_vec @ np.cos(mat @ x)
            scale = 0.1 * np.linalg.norm(np.cos(v @ x).T @ a_vec)
            if scale == 0.0:
                out = out + 0.5 * (t >= mean)
            else:
                out = out + 0.5 * _phi((t - mean) / scale)
        return out


_KERNELS = {
    "intro_uniform": IntroUniform,
    "model1": Model1,
    "model2": Model2,
    "model3": Model3,
}


def kernel_by_name(name: str, *, model2_threshold: float | None = None,
                   model3_seed: int | None = None) -> Kernel:
    key = name.lower().replace("-", "_")
    if key not in _KERNELS:
        raise InvalidArgument(f"unknown kernel {name!r}; choose from {sorted(_KERNELS)}")
    if key == "model2":
        return Model2(threshold=1.0 if model2_threshold is None else float(model2_threshold))
    if key == "model3":
        return Model3(param_seed=DEFAULT_MODEL3_SEED if model3_seed is None else int(model3_seed))
    return _KERNELS[key]()


def sample_dataset(kernel: Kernel, m: int, seed: int) -> Dataset:
    """Draw m i.i.d. pairs from the kernel; deterministic given the seed."""
    if m < 1:
        raise InvalidArgument("m must be >= 1")
    xs, ys = kernel.sample(int(m), substream(seed))
    return dataset_from_arrays(xs, ys, seed=seed)


def true_cdf_1d(kernel: Kernel, x: float, t):
    """Exact conditional CDF of Y given X=x for one-dimensional kernels."""
    if kernel.d_y != 1 or not hasattr(kernel, "cdf"):
        raise InvalidArgument(f"kernel {kernel.name!r} has no one-dimensional CDF")
    return kernel.cdf(float(np.asarray(x).reshape(())), t)


def projected_cdf_3d(kernel: Kernel, x: np.ndarray, a_vec: np.ndarray, t):
    """Exact CDF of the l1-normalized projection a_vec . Y given X=x (model3)."""
    if not isinstance(kernel, Model3):
        raise InvalidArgument("projected CDF is defined for model3 only")
    return kernel.projected_cdf(x, a_vec, t)
