"""Hyperboloid (Lorentz) model primitives.

Points live on H^K = {x in R^{d+1} : <x, x>_M = -K, x_0 > 0}, where the
sectional curvature is -1/K. Every function takes batched tensors of shape
(..., d+1) and works in float64. The curvature ``k`` may be a python float or
a 0-dim tensor (trainable curvatures are tensors).

All exp/log maps are based at the north pole o = (sqrt(K), 0, ..., 0). The
origin tangent space {(0, v)} is identical for every K, which is what lets
``align`` move points between manifolds of different curvature.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvariantViolation, NumericFailure, UsageError

DTYPE = torch.float64
NORM_EPS = 1e-12
ACOSH_MAX = 1e15


def as_k(k) -> torch.Tensor:
    return torch.as_tensor(k, dtype=DTYPE)


def _check_finite(*tensors, what="input"):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise NumericFailure(f"non-finite {what}", component=what)


class _Arcosh(torch.autograd.Function):
    """arcosh on an argument already clamped to [1, ACOSH_MAX].

    The backward pass floors z^2 - 1 so coincident points yield a large but
    finite derivative instead of inf (which turns into NaN once multiplied by
    a zero upstream gradient).
    """

    @staticmethod
    def forward(ctx, z):
        ctx.save_for_backward(z)
        return torch.acosh(z)

    @staticmethod
    def backward(ctx, grad):
        (z,) = ctx.saved_tensors
        return grad / torch.sqrt(torch.clamp(z * z - 1.0, min=1e-15))


def arcosh(z: torch.Tensor) -> torch.Tensor:
    return _Arcosh.apply(torch.clamp(z, 1.0, ACOSH_MAX))


def _inner(x, y):
    prod = x * y
    return prod[..., 1:].sum(-1) - prod[..., 0]


def minkowski_inner(x, y) -> torch.Tensor:
    """-x0*y0 + sum_i xi*yi over the last axis."""
    x = torch.as_tensor(x, dtype=DTYPE)
    y = torch.as_tensor(y, dtype=DTYPE)
    if x.shape[-1] != y.shape[-1] or x.shape[-1] < 2:
        raise UsageError(f"incompatible vector lengths {x.shape[-1]} and {y.shape[-1]}")
    _check_finite(x, y, what="minkowski_inner")
    return _inner(x, y)


def north_pole(dim: int, k, batch_shape=()) -> torch.Tensor:
    k = as_k(k)
    o = torch.zeros(*batch_shape, dim + 1, dtype=DTYPE)
    return o + torch.cat([torch.sqrt(k).reshape(1), torch.zeros(dim, dtype=DTYPE)])


def distance(x, y, k) -> torch.Tensor:
    """Geodesic distance sqrt(K) * arcosh(-<x, y>_M / K)."""
    k = as_k(k)
    return torch.sqrt(k) * arcosh(-_inner(x, y) / k)


def sqdist(x, y, k) -> torch.Tensor:
    return distance(x, y, k) ** 2


def inner_matrix(x, y) -> torch.Tensor:
    """Minkowski inner products of every row of x (n, D) with every row of y (m, D)."""
    return x[..., 1:] @ y[..., 1:].transpose(-1, -2) - x[..., :1] @ y[..., :1].transpose(-1, -2)


def distance_matrix(x, y, k) -> torch.Tensor:
    k = as_k(k)
    return torch.sqrt(k) * arcosh(-inner_matrix(x, y) / k)


def exp_map0(v, k) -> torch.Tensor:
    """Exponential map at the north pole. ``v`` has shape (..., d+1), v_0 = 0."""
    v = torch.as_tensor(v, dtype=DTYPE)
    k = as_k(k)
    sk = torch.sqrt(k)
    spatial = v[..., 1:]
    r = torch.linalg.vector_norm(spatial, dim=-1, keepdim=True)
    r_safe = torch.clamp(r, min=NORM_EPS)
    head = sk * torch.cosh(r_safe / sk)
    tail = sk * torch.sinh(r_safe / sk) * spatial / r_safe
    out = torch.cat([head, tail], dim=-1)
    return torch.where(r < NORM_EPS, north_pole(v.shape[-1] - 1, k), out)


def log_map0(x, k) -> torch.Tensor:
    """Logarithmic map at the north pole; output has a zero first coordinate.

    The tangent length is recovered as sqrt(K) * asinh(|x_1..d| / sqrt(K)),
    which equals the distance to o on the manifold and stays well conditioned
    near the pole (arcosh(x_0 / sqrt(K)) loses half its digits there).
    """
    x = torch.as_tensor(x, dtype=DTYPE)
    k = as_k(k)
    sk = torch.sqrt(k)
    spatial = x[..., 1:]
    n = torch.linalg.vector_norm(spatial, dim=-1, keepdim=True)
    r = sk * torch.asinh(n / sk)
    tail = spatial * (r / torch.clamp(n, min=NORM_EPS))
    return torch.cat([torch.zeros_like(x[..., :1]), tail], dim=-1)


def lift_euclidean(e, k) -> torch.Tensor:
    """Map Euclidean vectors (..., d) onto H^K through exp_map0((0, e))."""
    e = torch.as_tensor(e, dtype=DTYPE)
    return exp_map0(torch.cat([torch.zeros_like(e[..., :1]), e], dim=-1), k)


def check_alignment_matrix(w: torch.Tensor):
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise UsageError(f"alignment matrix must be square, got {tuple(w.shape)}")
    if torch.any(w[0] != 0):
        raise InvariantViolation("alignment matrix has a nonzero first row")
    _check_finite(w, what="alignment matrix")


def align(x, k_a, k_b, w) -> torch.Tensor:
    """Move points from H^{k_a} to H^{k_b}: Exp_o^{k_b}(ReLU(W Log_o^{k_a}(x)))."""
    w = torch.as_tensor(w, dtype=DTYPE)
    check_alignment_matrix(w)
    t = log_map0(x, k_a)
    return exp_map0(torch.relu(t @ w.T), k_b)


def to_poincare(x, k) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=DTYPE)
    return x[..., 1:] / (x[..., :1] + torch.sqrt(as_k(k)))


def project_to_manifold(x, k) -> torch.Tensor:
    """Recompute x_0 from the spatial part so that <x, x>_M = -K exactly."""
    x = torch.as_tensor(x, dtype=DTYPE)
    spatial = x[..., 1:]
    head = torch.sqrt(as_k(k) + (spatial * spatial).sum(-1, keepdim=True))
    return torch.cat([head, spatial], dim=-1)


def project_to_tangent(x, u, k) -> torch.Tensor:
    """Orthogonal (Minkowski) projection of ambient u onto T_x H^K."""
    return u + (_inner(x, u) / as_k(k)).unsqueeze(-1) * x


def manifold_error(x, k) -> torch.Tensor:
    """|<x, x>_M + K| per point."""
    return torch.abs(_inner(x, x) + as_k(k))


def on_manifold(x, k, tol: float = 1e-8) -> bool:
    k_val = float(as_k(k))
    x = torch.as_tensor(x, dtype=DTYPE)
    if not torch.isfinite(x).all():
        return False
    ok_constraint = bool((manifold_error(x, k) <= tol * max(1.0, k_val)).all())
    # x_0 >= sqrt(K) up to rounding
    ok_sheet = bool((x[..., 0] >= (k_val ** 0.5) * (1 - 1e-12)).all())
    return ok_constraint and ok_sheet


@dataclass(frozen=True)
class LorentzPoint:
    """A (batch of) point(s) tagged with the curvature of its manifold."""

    coords: torch.Tensor
    k: float

    def __post_init__(self):
        object.__setattr__(self, "coords", torch.as_tensor(self.coords, dtype=DTYPE))

    @property
    def dim(self) -> int:
        return self.coords.shape[-1] - 1

    def validate(self, tol: float = 1e-8) -> "LorentzPoint":
        if not on_manifold(self.coords, self.k, tol):
            raise InvariantViolation(f"point is not on H^{self.k}")
        return self


def _same_manifold(x: LorentzPoint, y: LorentzPoint):
    if float(x.k) != float(y.k):
        raise UsageError(f"curvature mismatch: {float(x.k)} vs {float(y.k)}")
    if x.dim != y.dim:
        raise UsageError(f"dimension mismatch: {x.dim} vs {y.dim}")


def hyp_distance(x: LorentzPoint, y: LorentzPoint) -> torch.Tensor:
    _same_manifold(x, y)
    return distance(x.coords, y.coords, x.k)


class Hyperboloid:
    """Per-domain carrier used by the model; stores that domain's curvature.

    ``log0``/``exp0`` work in Euclidean tangent coordinates (the d spatial
    components of a vector in T_o), which is the shared space between domains.
    """

    hyperbolic = True

    def __init__(self, k):
        self.k = k

    def lift(self, e):
        return lift_euclidean(e, self.k)

    exp0 = lift

    def log0(self, x):
        return log_map0(x, self.k)[..., 1:]

    def dist(self, x, y):
        return distance(x, y, self.k)

    def sqdist(self, x, y):
        return sqdist(x, y, self.k)

    def dist_matrix(self, x, y):
        """(n, m) distances for x (n, D), y (m, D); also batched (b, n, D) x (b, m, D)."""
        return distance_matrix(x, y, self.k)


class EuclideanSpace:
    """Drop-in replacement for Hyperboloid used by the Euclidean ablation."""

    hyperbolic = False
    k = None

    def lift(self, e):
        return e

    exp0 = lift
    log0 = lift

    def sqdist(self, x, y):
        diff = x - y
        return (diff * diff).sum(-1)

    def dist(self, x, y):
        # +tiny keeps the sqrt derivative finite at coincident points
        return torch.sqrt(self.sqdist(x, y) + 1e-30)

    def dist_matrix(self, x, y):
        sq = (x * x).sum(-1).unsqueeze(-1) + (y * y).sum(-1).unsqueeze(-2) - 2.0 * x @ y.transpose(-1, -2)
        return torch.sqrt(torch.clamp(sq, min=0.0) + 1e-30)


def align_between(x, src_space, dst_space, w) -> torch.Tensor:
    """Same map as ``align`` expressed through the carriers' tangent charts.

    Row 0 of W multiplies the zero time coordinate and column 0 is never read,
    so only the (d x d) block W[1:, 1:] acts.
    """
    t = src_space.log0(x)
    return dst_space.exp0(torch.relu(t @ w[1:, 1:].T))
