"""Parametric hierarchical matrices with Chebyshev interpolation and TT-cross."""
from .kernels import make_kernel, KernelSpec, KernelEvalCounter, CountedKernel, DomainError
from .phmatrix import PHConfig, offline, offline_h, offline_h2, online, mvm_h, mvm_h2, metrics, to_format

__version__ = "0.1.0"
