"""Trigonometric basis, quadrature, and smoothing kernels on ``[-1, 1]^d``.

The basis is the signed-index sine/cosine family: index ``n = 0`` is the
constant, ``n > 0`` is ``sin(n pi z)``, ``n < 0`` is ``cos(n pi z)``;
multivariate basis functions are per-coordinate products.  On top of it the
module provides uniform trapezoid quadrature (spectrally accurate for
periodic integrands), circular convolution with periodic wrapping, the
Dirichlet kernel, and the averaged (de la Vallee-Poussin style) kernel whose
L1 norm stays bounded as the degree grows.

Convolutions always use the unit-mass normalization ``kernel / 2^d`` so that
constants are reproduced exactly.  All objects are immutable after
construction and all operations are pure.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "NormKind",
    "Normalization",
    "MultiIndexSet",
    "FeatureMap",
    "Quadrature",
    "ResolutionError",
    "soc",
    "soc_multi",
    "enumerate_indices",
    "eval_features",
    "feature_matrix",
    "axis_features",
    "tensor_rows",
    "trapezoid_quadrature",
    "dirichlet_kernel",
    "vp_kernel",
    "vp_cosine_coefficients",
    "dirichlet_cosine_coefficients",
    "separable_kernel",
    "circular_convolve",
    "convolve_on_grid",
    "fourier_coefficient",
    "kernel_l1_norm",
    "dirichlet_l1_norm",
    "cosine_poly_eval",
    "cosine_poly_primitive",
    "cosine_poly_zeros",
]

DOMAIN_TOL = 1e-12
INDEX_SIZE_CAP = 10**7

# Below this value of |sin(pi x / 2)| the Dirichlet closed form switches to
# the cosine-sum form (removable singularity).
_SINGULAR_EPS = 1e-8


class ResolutionError(ValueError):
    """A grid or quadrature is too coarse for the requested computation."""


class NormKind(str, Enum):
    L1 = "l1"
    LINF = "linf"


class Normalization(str, Enum):
    RAW = "raw"
    ORTHONORMAL = "orthonormal"


def _wrap(x):
    """Map coordinates into [-1, 1) by the periodic seam rule."""
    return (np.asarray(x, dtype=float) + 1.0) % 2.0 - 1.0


def _check_cube(z, tol=DOMAIN_TOL):
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) > 1.0 + tol):
        raise ValueError(f"point outside [-1, 1]^d by more than {tol:g}: max |z| = {np.max(np.abs(z))}")
    return z


def soc(n: int, z: float) -> float:
    """Signed-index basis function: 1 for n=0, sin(n pi z) for n>0, cos(n pi z) for n<0."""
    if abs(z) > 1.0 + DOMAIN_TOL:
        raise ValueError(f"|z| = {abs(z)} exceeds 1 beyond tolerance {DOMAIN_TOL:g}")
    n = int(n)
    if n == 0:
        return 1.0
    if n > 0:
        return float(np.sin(n * np.pi * z))
    return float(np.cos(n * np.pi * z))


def soc_multi(n, z) -> float:
    """Product of per-coordinate ``soc`` values for an index vector and a point."""
    n = np.asarray(n, dtype=int)
    z = np.asarray(z, dtype=float)
    if n.shape != z.shape:
        raise ValueError(f"index vector and point have different lengths: {n.shape} vs {z.shape}")
    out = 1.0
    for ni, zi in zip(n.ravel(), z.ravel()):
        out *= soc(int(ni), float(zi))
    return out


@dataclass(frozen=True)
class MultiIndexSet:
    """Enumerated integer index vectors of bounded norm, in lexicographic order.

    ``size`` is always the length of the actual enumeration.  No closed-form
    count is assumed; for the L1 ball the enumeration itself is authoritative
    (e.g. d=2, N=1 yields 5 indices).
    """

    d: int
    degree: int
    norm_kind: NormKind
    indices: tuple

    @property
    def size(self) -> int:
        return len(self.indices)

    @cached_property
    def index_array(self) -> np.ndarray:
        arr = np.asarray(self.indices, dtype=int).reshape(self.size, self.d)
        arr.flags.writeable = False
        return arr


def enumerate_indices(d: int, N: int, norm_kind: NormKind = NormKind.LINF) -> MultiIndexSet:
    """Enumerate all integer vectors with ||n||_1 <= N or max|n_i| <= N.

    The order is lexicographic on (n_1, ..., n_d) with each coordinate running
    from -N to N; it is stable across runs so coefficient vectors are portable.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if N < 0:
        raise ValueError(f"degree must be >= 0, got {N}")
    norm_kind = NormKind(norm_kind)
    projected = (2 * N + 1) ** d
    if projected > INDEX_SIZE_CAP:
        raise ValueError(f"projected index count {projected} exceeds cap {INDEX_SIZE_CAP}")
    rng = range(-N, N + 1)
    if norm_kind is NormKind.LINF:
        indices = tuple(itertools.product(rng, repeat=d))
    else:
        indices = tuple(
            idx for idx in itertools.product(rng, repeat=d) if sum(abs(c) for c in idx) <= N
        )
    return MultiIndexSet(d=d, degree=N, norm_kind=norm_kind, indices=indices)


@dataclass(frozen=True)
class FeatureMap:
    """Feature vector of basis functions over an index set.

    In ORTHONORMAL mode every basis function has unit L2 norm with respect to
    the (unnormalized) Lebesgue measure on [-1,1]^d: sine/cosine factors are
    already unit-norm there, so only coordinates with n_i = 0 pick up a
    2^(-1/2) factor.
    """

    index_set: MultiIndexSet
    normalization: Normalization = Normalization.ORTHONORMAL

    @property
    def n_features(self) -> int:
        return self.index_set.size

    @property
    def d(self) -> int:
        return self.index_set.d

    @cached_property
    def scales(self) -> np.ndarray:
        if Normalization(self.normalization) is Normalization.RAW:
            s = np.ones(self.n_features)
        else:
            n_zero = np.sum(self.index_set.index_array == 0, axis=1)
            s = 2.0 ** (-0.5 * n_zero)
        s.flags.writeable = False
        return s


def axis_features(values, N: int, orthonormal: bool = True) -> np.ndarray:
    """Univariate basis matrix (n, 2N+1) in index order -N..N."""
    v = np.asarray(values, dtype=float).ravel()
    n_axis = np.arange(-N, N + 1)
    u = np.pi * v[:, None] * n_axis[None, :]
    out = np.ones((v.shape[0], 2 * N + 1))
    out[:, N + 1 :] = np.sin(u[:, N + 1 :])
    out[:, :N] = np.cos(u[:, :N])
    if orthonormal:
        out[:, N] = 2.0**-0.5
    return out


def tensor_rows(mats) -> np.ndarray:
    """Row-wise Kronecker product of (n, k_i) matrices; axis 0 varies slowest."""
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, :, None] * m[:, None, :]).reshape(out.shape[0], -1)
    return out


def feature_matrix(fm: FeatureMap, Z) -> np.ndarray:
    """Evaluate the feature map at points ``Z`` of shape (n, d); returns (n, size)."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z.reshape(1, -1)
    if Z.shape[1] != fm.d:
        raise ValueError(f"points have dimension {Z.shape[1]}, feature map expects {fm.d}")
    _check_cube(Z)
    ortho = Normalization(fm.normalization) is Normalization.ORTHONORMAL
    if NormKind(fm.index_set.norm_kind) is NormKind.LINF:
        # the max-norm set is a tensor product, so the joint features factor
        N = fm.index_set.degree
        return tensor_rows([axis_features(Z[:, a], N, ortho) for a in range(fm.d)])
    idx = fm.index_set.index_array
    out = np.ones((Z.shape[0], fm.n_features))
    for axis in range(fm.d):
        n_axis = idx[:, axis]
        u = np.pi * Z[:, axis, None] * n_axis[None, :]
        pos = n_axis > 0
        neg = n_axis < 0
        if np.any(pos):
            out[:, pos] *= np.sin(u[:, pos])
        if np.any(neg):
            out[:, neg] *= np.cos(u[:, neg])
    return out * fm.scales[None, :]


def eval_features(fm: FeatureMap, z) -> np.ndarray:
    """Feature vector at a single point ``z`` in [-1,1]^d."""
    return feature_matrix(fm, np.asarray(z, dtype=float).reshape(1, -1))[0]


@dataclass(frozen=True)
class Quadrature:
    """Composite trapezoid rule on a uniform tensor grid over [-1,1]^d.

    With M intervals per axis the rule integrates any trigonometric
    polynomial of per-coordinate degree <= M-1 exactly (for periodic
    integrands the endpoint halving collapses to the M-point rectangle rule).
    Weights sum to 2^d.
    """

    d: int
    points_per_axis: int
    axis_nodes: np.ndarray
    axis_weights: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray


def trapezoid_quadrature(d: int, points_per_axis: int | None = None) -> Quadrature:
    """Build the default quadrature: 512 intervals per axis for d=1, 128 otherwise."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if points_per_axis is None:
        points_per_axis = 512 if d == 1 else 128
    M = int(points_per_axis)
    if M < 2:
        raise ValueError(f"points_per_axis must be >= 2, got {M}")
    axis_nodes = np.linspace(-1.0, 1.0, M + 1)
    h = 2.0 / M
    axis_weights = np.full(M + 1, h)
    axis_weights[0] = axis_weights[-1] = h / 2.0
    grids = np.meshgrid(*([axis_nodes] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([axis_weights] * d), indexing="ij")
    weights = np.ones(nodes.shape[0])
    for wg in wgrids:
        weights *= wg.ravel()
    for arr in (axis_nodes, axis_weights, nodes, weights):
        arr.flags.writeable = False
    return Quadrature(
        d=d,
        points_per_axis=M,
        axis_nodes=axis_nodes,
        axis_weights=axis_weights,
        nodes=nodes,
        weights=weights,
    )


def dirichlet_kernel(N: int, x):
    """Order-N Dirichlet kernel sin((N+1/2) pi x) / sin(pi x / 2).

    Near the removable singularities of the closed form (|sin(pi x/2)| below
    1e-8) the equivalent cosine-sum form 1 + 2 sum_{k<=N} cos(k pi x) is used.
    """
    if N < 0:
        raise ValueError(f"kernel order must be >= 0, got {N}")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    s = np.sin(np.pi * x / 2.0)
    singular = np.abs(s) < _SINGULAR_EPS
    out = np.empty_like(x)
    regular = ~singular
    if np.any(regular):
        out[regular] = np.sin((N + 0.5) * np.pi * x[regular]) / s[regular]
    if np.any(singular):
        if N == 0:
            out[singular] = 1.0
        else:
            k = np.arange(1, N + 1)
            out[singular] = 1.0 + 2.0 * np.cos(np.pi * np.outer(x[singular], k)).sum(axis=1)
    return float(out[0]) if scalar else out


def _check_even_order(N: int) -> int:
    N = int(N)
    if N < 2 or N % 2 != 0:
        raise ValueError(f"averaged kernel order must be an even integer >= 2, got {N}")
    return N


def vp_kernel(N: int, x):
    """Average of Dirichlet kernels of orders N/2 .. N (N even, >= 2)."""
    N = _check_even_order(N)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    acc = np.zeros_like(x)
    for n in range(N // 2, N + 1):
        acc += dirichlet_kernel(n, x)
    acc /= N // 2 + 1
    return float(acc[0]) if scalar else acc


def vp_cosine_coefficients(N: int) -> np.ndarray:
    """Cosine-expansion coefficients c with vp_kernel(N, x) = c0 + 2 sum c_k cos(k pi x).

    The profile is flat (c_k = 1) up to N/2 and decays linearly to zero at
    N+1, which is why the kernel reproduces degree-N/2 polynomials exactly
    and maps everything into degree N.
    """
    N = _check_even_order(N)
    k = np.arange(N + 1)
    half = N // 2
    c = np.where(k <= half, 1.0, (N - k + 1) / (half + 1))
    return c


def dirichlet_cosine_coefficients(N: int) -> np.ndarray:
    """Cosine-expansion coefficients of the Dirichlet kernel (all ones)."""
    if N < 0:
        raise ValueError(f"kernel order must be >= 0, got {N}")
    return np.ones(N + 1)


def cosine_poly_eval(coeffs, x):
    """Evaluate c0 + 2 sum_{k>=1} c_k cos(k pi x) for coefficient vector c."""
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    k = np.arange(1, len(coeffs))
    out = np.full_like(x, coeffs[0])
    if len(k):
        out += 2.0 * np.cos(np.pi * np.outer(x, k)) @ coeffs[1:]
    return float(out[0]) if scalar else out


def cosine_poly_primitive(coeffs, x):
    """Antiderivative of ``cosine_poly_eval`` vanishing at x = -1."""
    coeffs = np.asarray(coeffs, dtype=float)
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    k = np.arange(1, len(coeffs))
    out = coeffs[0] * (x + 1.0)
    if len(k):
        # sin(k pi x) - sin(-k pi) and the second term is identically zero
        out += 2.0 * (np.sin(np.pi * np.outer(x, k)) / (np.pi * k)) @ coeffs[1:]
    return float(out[0]) if scalar else out


def cosine_poly_zeros(coeffs, n_scan: int = 8192) -> np.ndarray:
    """Sign-change zeros of the cosine polynomial inside (-1, 1).

    Zeros are bracketed on a uniform scan grid and refined with Brent's
    method; touching (even-order) zeros without a sign change are harmless
    for the signed-mass computations this supports and are not reported.
    """
    xs = np.linspace(-1.0, 1.0, int(n_scan) + 1)
    vals = cosine_poly_eval(coeffs, xs)
    zeros = []
    f = lambda t: cosine_poly_eval(coeffs, t)
    for i in range(len(xs) - 1):
        a, b = xs[i], xs[i + 1]
        fa, fb = vals[i], vals[i + 1]
        if fa == 0.0:
            if -1.0 < a < 1.0:
                zeros.append(a)
            continue
        if fa * fb < 0.0:
            zeros.append(brentq(f, a, b, xtol=1e-14, rtol=8.9e-16))
    return np.asarray(sorted(set(zeros)))


def _l1_norm_cosine_poly(coeffs, n_scan: int) -> float:
    """Integral of |cosine polynomial| over [-1,1] by per-segment Gauss-Legendre.

    Between consecutive sign changes the integrand is smooth, so a fixed
    32-node rule per segment reaches near machine accuracy; plain trapezoid
    cannot because of the corners of |.|.
    """
    boundaries = np.concatenate(([-1.0], cosine_poly_zeros(coeffs, n_scan), [1.0]))
    gl_x, gl_w = np.polynomial.legendre.leggauss(32)
    total = 0.0
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        if b - a < 1e-14:
            continue
        mid, half = (a + b) / 2.0, (b - a) / 2.0
        seg = half * np.dot(gl_w, cosine_poly_eval(coeffs, mid + half * gl_x))
        total += abs(seg)
    return float(total)


def kernel_l1_norm(N: int, quad: Quadrature | None = None) -> float:
    """L1 norm of the normalized averaged kernel, int |vp_kernel(N,x)/2| dx."""
    N = _check_even_order(N)
    n_scan = quad.points_per_axis if quad is not None else max(8192, 64 * N)
    return _l1_norm_cosine_poly(vp_cosine_coefficients(N) / 2.0, n_scan)


def dirichlet_l1_norm(N: int, quad: Quadrature | None = None) -> float:
    """L1 norm of the normalized Dirichlet kernel, int |D^0_N(x)/2| dx."""
    if N < 0:
        raise ValueError(f"kernel order must be >= 0, got {N}")
    n_scan = quad.points_per_axis if quad is not None else max(8192, 64 * max(N, 1))
    return _l1_norm_cosine_poly(dirichlet_cosine_coefficients(N) / 2.0, n_scan)


def separable_kernel(kernel1d):
    """Lift a univariate kernel to a tensor-product kernel on (n, d) points."""

    def kernel(Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        out = np.ones(Z.shape[0])
        for axis in range(Z.shape[1]):
            out *= kernel1d(Z[:, axis])
        return out

    return kernel


def circular_convolve(f, kernel, quad: Quadrature, chunk_size: int = 1024):
    """Circular convolution x -> int f(y) * kernel(x - y)/2^d dy by quadrature.

    ``f`` and ``kernel`` take an (n, d) array of points and return (n,)
    values; both must be periodic on [-1,1]^d (caller responsibility).
    Differences x - y are wrapped into [-1, 1) before the kernel is applied.
    The 2^d factor normalizes the kernel to unit mass so constants are
    reproduced exactly.
    """
    f_weighted = np.asarray(f(quad.nodes), dtype=float) * quad.weights
    norm = 2.0 ** quad.d

    def convolved(X):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], chunk_size):
            block = X[start : start + chunk_size]
            diffs = _wrap(block[:, None, :] - quad.nodes[None, :, :])
            kvals = kernel(diffs.reshape(-1, quad.d)).reshape(block.shape[0], -1)
            out[start : start + chunk_size] = kvals @ f_weighted / norm
        return float(out[0]) if single else out

    return convolved


def convolve_on_grid(f, kernel1d, quad: Quadrature, eval_axes) -> np.ndarray:
    """Separable-kernel circular convolution evaluated on a tensor grid.

    Equivalent to ``circular_convolve`` with the tensor-product lift of
    ``kernel1d``, but factorized axis by axis, which is what makes the dense
    d=2 sweeps affordable.  Returns an array of shape
    (len(eval_axes[0]), ..., len(eval_axes[d-1])).
    """
    d = quad.d
    if len(eval_axes) != d:
        raise ValueError(f"need {d} evaluation axes, got {len(eval_axes)}")
    M1 = quad.points_per_axis + 1
    F = np.asarray(f(quad.nodes), dtype=float).reshape((M1,) * d)
    out = F
    for axis in range(d):
        ev = np.asarray(eval_axes[axis], dtype=float)
        diffs = _wrap(ev[:, None] - quad.axis_nodes[None, :])
        K = np.asarray(kernel1d(diffs.ravel()), dtype=float).reshape(len(ev), M1)
        K = K * quad.axis_weights[None, :] / 2.0
        out = np.moveaxis(np.tensordot(K, out, axes=([1], [axis])), 0, axis)
    return out


def fourier_coefficient(f, n, quad: Quadrature) -> float:
    """Inner product of ``f`` with the orthonormal basis function of index ``n``."""
    n = np.atleast_1d(np.asarray(n, dtype=int))
    if n.shape[0] != quad.d:
        raise ValueError(f"index has dimension {n.shape[0]}, quadrature has {quad.d}")
    needed = 4 * (int(np.max(np.abs(n))) + 1)
    if quad.points_per_axis < needed:
        raise ResolutionError(
            f"quadrature has {quad.points_per_axis} points per axis, need >= {needed}"
        )
    basis = np.ones(quad.nodes.shape[0])
    for axis in range(quad.d):
        ni = int(n[axis])
        col = quad.nodes[:, axis]
        if ni == 0:
            basis *= 2.0**-0.5
        elif ni > 0:
            basis *= np.sin(ni * np.pi * col)
        else:
            basis *= np.cos(ni * np.pi * col)
    return float(np.dot(quad.weights, np.asarray(f(quad.nodes), dtype=float) * basis))
