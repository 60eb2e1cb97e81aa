"""Isotropic parametric kernels and kernel-evaluation accounting."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma, kv


class DomainError(ValueError):
    """Parameter outside the declared parameter box."""


KERNEL_NAMES = ("e", "tps", "se", "mc", "mn")


@dataclass(frozen=True)
class KernelSpec:
    name: str
    lo: tuple
    hi: tuple

    @property
    def d_theta(self) -> int:
        return len(self.lo)

    @property
    def box(self):
        return np.array(self.lo, float), np.array(self.hi, float)

    def check_theta(self, theta) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        if th.shape[-1] != self.d_theta:
            raise ValueError(f"expected {self.d_theta} parameter(s), got shape {th.shape}")
        if not np.all(np.isfinite(th)):
            raise ValueError("non-finite parameter")
        lo, hi = self.box
        tol = 1e-12 * np.maximum(1.0, np.abs(hi))
        if np.any(th < lo - tol) or np.any(th > hi + tol):
            raise DomainError(f"theta={th} outside box [{lo}, {hi}]")
        return th


def make_kernel(name: str, lam=(0.25, 1.0), nu=(0.5, 3.0)) -> KernelSpec:
    name = name.lower()
    if name not in KERNEL_NAMES:
        raise ValueError(f"unknown kernel {name!r}; choose from {KERNEL_NAMES}")
    if lam[0] <= 0 or lam[0] > lam[1]:
        raise ValueError("bad length-scale range")
    if name == "mn":
        if nu[0] <= 0 or nu[0] > nu[1]:
            raise ValueError("bad smoothness range")
        return KernelSpec(name, (float(lam[0]), float(nu[0])), (float(lam[1]), float(nu[1])))
    return KernelSpec(name, (float(lam[0]),), (float(lam[1]),))


def _matern(s, nu):
    # s = r / lambda, nu broadcast with s
    s, nu = np.broadcast_arrays(np.asarray(s, float), np.asarray(nu, float))
    out = np.ones(s.shape)
    nz = s > 0
    if np.any(nz):
        z = np.sqrt(2.0 * nu[nz]) * s[nz]
        v = nu[nz]
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            val = 2.0 ** (1.0 - v) / gamma(v) * z**v * kv(v, z)
        # kv underflows to 0 for huge z, z**v can overflow: value is 0 there
        val = np.where(np.isfinite(val), val, 0.0)
        out[nz] = val
    return out


def radial_values(name: str, r, theta) -> np.ndarray:
    """Kernel profile f_theta(r). theta has shape (..., d_theta) broadcast against r."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    lam = theta[..., 0]
    s = r / lam
    if name == "e":
        return np.exp(-s)
    if name == "se":
        return np.exp(-s * s)
    if name == "mc":
        return np.sqrt(1.0 + s * s)
    if name == "tps":
        s = np.broadcast_to(s, np.broadcast_shapes(s.shape, r.shape))
        out = np.zeros(s.shape)
        nz = s > 0
        out[nz] = s[nz] ** 2 * np.log(s[nz])
        return out
    if name == "mn":
        return _matern(s, theta[..., 1])
    raise ValueError(name)


class KernelEvalCounter:
    """Thread-safe tally of kernel evaluations, split by stage label."""

    def __init__(self):
        self._lock = threading.Lock()
        self.by_stage: dict = {}
        self.stage = "offline"

    @property
    def total(self) -> int:
        return sum(self.by_stage.values())

    def add(self, n: int, stage: str | None = None):
        with self._lock:
            key = stage or self.stage
            self.by_stage[key] = self.by_stage.get(key, 0) + int(n)

    def get(self, stage: str) -> int:
        return self.by_stage.get(stage, 0)

    def merge(self, other: "KernelEvalCounter"):
        for k, v in other.by_stage.items():
            self.add(v, k)


@dataclass
class CountedKernel:
    """Kernel bound to a counter. Every value it produces is tallied."""

    spec: KernelSpec
    counter: KernelEvalCounter = field(default_factory=KernelEvalCounter)

    def radial(self, r, theta, stage=None):
        vals = radial_values(self.spec.name, r, theta)
        self.counter.add(vals.size, stage)
        return vals

    def __call__(self, x, y, theta, stage=None):
        """kappa(x, y; theta) for rows of x and y (broadcast)."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite point coordinates")
        th = self.spec.check_theta(theta)
        r = np.sqrt(np.sum((x - y) ** 2, axis=-1))
        return self.radial(r, th, stage)

    def matrix(self, X, Y, theta, stage=None):
        """Dense kernel matrix K(X, Y; theta)."""
        X = np.asarray(X, float)
        Y = np.asarray(Y, float)
        th = self.spec.check_theta(theta)
        diff = X[:, None, :] - Y[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        return self.radial(r, th, stage)


def evaluate(spec: KernelSpec, x, y, theta, counter: KernelEvalCounter | None = None):
    """Single-call kernel value, counted if a counter is given."""
    k = CountedKernel(spec, counter if counter is not None else KernelEvalCounter())
    return k(x, y, theta)
