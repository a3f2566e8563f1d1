"""Coagulation and fragmentation rate kernels.

Each kernel family carries declared growth-bound parameters (K0, alpha,
beta for coagulation, F0 and gamma for fragmentation) next to its actual
rate law, so that bound checks and contraction estimates never have to
infer them.  Evaluation is vectorized over numpy arrays and symmetric to
the bit: closed forms are written in commutative float operations and the
tabulated family canonicalizes the argument order.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError, SingularProfileError, UnboundedKernelError

__all__ = [
    "CoagKernel",
    "FragKernel",
    "TruncatedKernel",
    "BoundedKernelParams",
    "BoundCheckReport",
    "constant_coag",
    "additive_coag",
    "multiplicative_coag",
    "bound_form_coag",
    "lower_form_coag",
    "tabulated_coag",
    "constant_frag",
    "sum_power_frag",
    "product_frag",
    "tabulated_frag",
    "detailed_balance_frag",
    "eval_coag",
    "eval_frag",
    "coag_bound",
    "frag_bound",
    "truncate",
    "bounded_params",
    "validate_bounds",
    "load_table_csv",
]


@dataclasses.dataclass(frozen=True)
class KernelTable:
    """Rectangular lookup table with bilinear interpolation."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray

    def __call__(self, x, y):
        # Constant extension outside the node hull keeps the table usable
        # in quadratures that probe past its edges.
        xc = np.clip(x, self.xs[0], self.xs[-1])
        yc = np.clip(y, self.ys[0], self.ys[-1])
        ix = np.clip(np.searchsorted(self.xs, xc, side="right") - 1, 0, len(self.xs) - 2)
        iy = np.clip(np.searchsorted(self.ys, yc, side="right") - 1, 0, len(self.ys) - 2)
        x0, x1 = self.xs[ix], self.xs[ix + 1]
        y0, y1 = self.ys[iy], self.ys[iy + 1]
        tx = (xc - x0) / (x1 - x0)
        ty = (yc - y0) / (y1 - y0)
        v00 = self.values[ix, iy]
        v10 = self.values[ix + 1, iy]
        v01 = self.values[ix, iy + 1]
        v11 = self.values[ix + 1, iy + 1]
        return (
            v00 * (1 - tx) * (1 - ty)
            + v10 * tx * (1 - ty)
            + v01 * (1 - tx) * ty
            + v11 * tx * ty
        )


@dataclasses.dataclass(frozen=True)
class CoagKernel:
    """Symmetric coagulation rate K(x, y) with declared bound parameters.

    The declared parameters assert K(x,y) <= K0 (x^-alpha + y^-alpha)
    (x^beta + y^beta) on (0,1]^2, and optionally
    K(x,y) >= K1 (x^-alpha y^beta + y^-alpha x^beta).
    """

    kind: str
    scale: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    K0: float = 1.0
    K1: float | None = None
    table: KernelTable | None = None


@dataclasses.dataclass(frozen=True)
class FragKernel:
    """Symmetric binary fragmentation rate F(x, y) for the pair (x, y).

    F0 and gamma, when declared, assert F(x,y) <= F0 (x^gamma + y^gamma).
    F0 is None for families with no valid declared bound.
    """

    kind: str
    scale: float = 1.0
    gamma: float = 0.0
    F0: float | None = None
    table: KernelTable | None = None
    coag: "CoagKernel | TruncatedKernel | None" = None
    profile: Callable | None = None

    @property
    def is_zero(self) -> bool:
        return self.kind == "constant" and self.scale == 0.0


@dataclasses.dataclass(frozen=True)
class TruncatedKernel:
    """Base coagulation kernel silenced on sizes at or below 1/j."""

    base: CoagKernel
    j: float

    @property
    def threshold(self) -> float:
        return 1.0 / self.j

    # Declared bound parameters carry over: truncation only removes rate.
    @property
    def kind(self) -> str:
        return "truncated"

    @property
    def alpha(self) -> float:
        return self.base.alpha

    @property
    def beta(self) -> float:
        return self.base.beta

    @property
    def K0(self) -> float:
        return self.base.K0

    @property
    def K1(self) -> float | None:
        return self.base.K1

    @property
    def scale(self) -> float:
        return self.base.scale


@dataclasses.dataclass(frozen=True)
class BoundedKernelParams:
    """Finite sup-type constants of a kernel on the unit square.

    k_sup bounds K on (0,1]^2 (on (1/j,1]^2 for truncated kernels) and
    k_beta bounds K(x,y)/y^beta for x in (0,1], y > 1.
    """

    k_sup: float
    k_beta: float
    beta: float
    exact: bool
    n_samples: int = 0


@dataclasses.dataclass(frozen=True)
class BoundCheckReport:
    max_violation: float
    worst_x: float
    worst_y: float
    n_samples: int


def _check_exponent(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {value}")
    return value


def constant_coag(value: float = 1.0) -> CoagKernel:
    if value < 0:
        raise ConfigError(f"kernel scale must be nonnegative, got {value}")
    return CoagKernel(kind="constant", scale=value, alpha=0.0, beta=0.0, K0=value, K1=None)


def additive_coag(scale: float = 1.0) -> CoagKernel:
    """K(x, y) = scale * (x + y); sharp declared bound K0 = scale / 2."""
    if scale < 0:
        raise ConfigError(f"kernel scale must be nonnegative, got {scale}")
    return CoagKernel(kind="additive", scale=scale, alpha=0.0, beta=1.0, K0=scale / 2.0)


def multiplicative_coag(scale: float = 1.0) -> CoagKernel:
    """K(x, y) = scale * x * y; sharp declared bound K0 = scale / 4."""
    if scale < 0:
        raise ConfigError(f"kernel scale must be nonnegative, got {scale}")
    return CoagKernel(kind="multiplicative", scale=scale, alpha=0.0, beta=1.0, K0=scale / 4.0)


def bound_form_coag(K0: float, alpha: float, beta: float) -> CoagKernel:
    """K(x, y) = K0 (x^-alpha + y^-alpha)(x^beta + y^beta), the bound itself.

    Also satisfies the cross-term lower bound with K1 = K0, which makes
    decay-rate checks sharp.
    """
    if K0 <= 0:
        raise ConfigError(f"K0 must be positive, got {K0}")
    alpha = _check_exponent("alpha", alpha)
    beta = _check_exponent("beta", beta)
    return CoagKernel(kind="bound_form", scale=K0, alpha=alpha, beta=beta, K0=K0, K1=K0)


def lower_form_coag(K1: float, alpha: float, beta: float) -> CoagKernel:
    """K(x, y) = K1 (x^-alpha y^beta + y^-alpha x^beta), the lower bound itself."""
    if K1 <= 0:
        raise ConfigError(f"K1 must be positive, got {K1}")
    alpha = _check_exponent("alpha", alpha)
    beta = _check_exponent("beta", beta)
    return CoagKernel(kind="lower_form", scale=K1, alpha=alpha, beta=beta, K0=K1, K1=K1)


def tabulated_coag(
    xs, ys, values, K0: float | None = None, alpha: float = 0.0, beta: float = 0.0
) -> CoagKernel:
    table = _build_table(xs, ys, values)
    if not np.allclose(table.xs, table.ys) or not np.allclose(
        table.values, table.values.T, rtol=1e-12, atol=0.0
    ):
        raise ConfigError("tabulated coagulation kernel must be symmetric")
    if K0 is None:
        # Conservative declaration: the sup of the table against the
        # weakest form of the bound (alpha = beta = 0 gives bound 4*K0).
        K0 = float(np.max(table.values)) / 4.0
        alpha = 0.0
        beta = 0.0
    return CoagKernel(
        kind="tabulated",
        scale=1.0,
        alpha=_check_exponent("alpha", alpha),
        beta=_check_exponent("beta", beta),
        K0=float(K0),
        table=table,
    )


def constant_frag(value: float) -> FragKernel:
    if value < 0:
        raise ConfigError(f"fragmentation scale must be nonnegative, got {value}")
    return FragKernel(kind="constant", scale=value, gamma=0.0, F0=value / 2.0)


def sum_power_frag(F0: float, gamma: float) -> FragKernel:
    """F(x, y) = F0 (x^gamma + y^gamma), the growth bound itself."""
    if F0 <= 0:
        raise ConfigError(f"F0 must be positive, got {F0}")
    gamma = _check_exponent("gamma", gamma)
    return FragKernel(kind="sum_power", scale=F0, gamma=gamma, F0=F0)


def product_frag(scale: float = 1.0) -> FragKernel:
    """F(x, y) = scale * x * y.  No declared sum-power bound (F0 is None)."""
    if scale < 0:
        raise ConfigError(f"fragmentation scale must be nonnegative, got {scale}")
    return FragKernel(kind="product", scale=scale, gamma=1.0, F0=None)


def tabulated_frag(xs, ys, values, F0: float | None = None, gamma: float = 0.0) -> FragKernel:
    table = _build_table(xs, ys, values)
    if not np.allclose(table.xs, table.ys) or not np.allclose(
        table.values, table.values.T, rtol=1e-12, atol=0.0
    ):
        raise ConfigError("tabulated fragmentation kernel must be symmetric")
    return FragKernel(
        kind="tabulated",
        gamma=_check_exponent("gamma", gamma),
        F0=None if F0 is None else float(F0),
        table=table,
    )


def detailed_balance_frag(
    kernel: CoagKernel | TruncatedKernel,
    profile: Callable,
    F0: float | None = None,
    gamma: float = 0.0,
) -> FragKernel:
    """Fragmentation kernel F = K Q(x) Q(y) / Q(x+y) in detailed balance with K.

    profile is the equilibrium density Q evaluated pointwise on (0, inf).
    """
    return FragKernel(
        kind="detailed_balance",
        gamma=_check_exponent("gamma", gamma),
        F0=None if F0 is None else float(F0),
        coag=kernel,
        profile=profile,
    )


def _build_table(xs, ys, values) -> KernelTable:
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    values = np.asarray(values, dtype=float)
    if xs.ndim != 1 or ys.ndim != 1 or values.shape != (len(xs), len(ys)):
        raise ConfigError("kernel table needs 1-D nodes and a matching value grid")
    if len(xs) < 2 or len(ys) < 2:
        raise ConfigError("kernel table needs at least two nodes per axis")
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise ConfigError("kernel table nodes must be strictly increasing")
    if xs[0] <= 0 or ys[0] <= 0:
        raise ConfigError("kernel table nodes must be positive")
    if np.any(values < 0):
        raise ConfigError("kernel table values must be nonnegative")
    return KernelTable(xs=xs, ys=ys, values=values)


def load_table_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read (x, y, value) triples and reassemble the rectangular grid."""
    triples = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() in ("x", "#"):
                continue
            if len(row) != 3:
                raise ConfigError(f"kernel CSV rows must be x,y,value triples, got {row!r}")
            triples.append((float(row[0]), float(row[1]), float(row[2])))
    if not triples:
        raise ConfigError("kernel CSV is empty")
    xs = np.unique([t[0] for t in triples])
    ys = np.unique([t[1] for t in triples])
    if len(xs) * len(ys) != len(triples):
        raise ConfigError("kernel CSV does not cover a rectangular grid")
    values = np.full((len(xs), len(ys)), np.nan)
    for x, y, v in triples:
        values[np.searchsorted(xs, x), np.searchsorted(ys, y)] = v
    if np.any(np.isnan(values)):
        raise ConfigError("kernel CSV has duplicate or missing grid points")
    return xs, ys, values


def _require_positive(x, y):
    if np.any(np.asarray(x) <= 0) or np.any(np.asarray(y) <= 0):
        raise DomainError("kernel arguments must be positive sizes")


def eval_coag(kernel: CoagKernel | TruncatedKernel, x, y):
    """Evaluate the coagulation rate at (x, y), elementwise on arrays."""
    _require_positive(x, y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if isinstance(kernel, TruncatedKernel):
        thr = kernel.threshold
        mask = (x > thr) & (y > thr)
        out = np.where(mask, _eval_coag_base(kernel.base, x, y), 0.0)
        return out if out.ndim else float(out)
    out = _eval_coag_base(kernel, x, y)
    return out if np.ndim(out) else float(out)


def _eval_coag_base(kernel: CoagKernel, x, y):
    k = kernel.kind
    if k == "constant":
        return np.broadcast_to(kernel.scale, np.broadcast_shapes(x.shape, y.shape)).copy()
    if k == "additive":
        return kernel.scale * (x + y)
    if k == "multiplicative":
        return kernel.scale * (x * y)
    if k == "bound_form":
        a, b = kernel.alpha, kernel.beta
        return kernel.scale * (x**-a + y**-a) * (x**b + y**b)
    if k == "lower_form":
        a, b = kernel.alpha, kernel.beta
        return kernel.scale * (x**-a * y**b + y**-a * x**b)
    if k == "tabulated":
        # min/max canonical order makes interpolation exactly symmetric.
        lo = np.minimum(x, y)
        hi = np.maximum(x, y)
        return kernel.table(lo, hi)
    raise ConfigError(f"unknown coagulation kernel kind {k!r}")


def eval_frag(frag: FragKernel, x, y):
    """Evaluate the fragmentation rate for the fragment pair (x, y)."""
    _require_positive(x, y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = frag.kind
    if k == "constant":
        out = np.broadcast_to(frag.scale, np.broadcast_shapes(x.shape, y.shape)).copy()
    elif k == "sum_power":
        g = frag.gamma
        out = frag.scale * (x**g + y**g)
    elif k == "product":
        out = frag.scale * (x * y)
    elif k == "tabulated":
        lo = np.minimum(x, y)
        hi = np.maximum(x, y)
        out = frag.table(lo, hi)
    elif k == "detailed_balance":
        qx = np.asarray(frag.profile(x), dtype=float)
        qy = np.asarray(frag.profile(y), dtype=float)
        qs = np.asarray(frag.profile(x + y), dtype=float)
        if np.any(qs <= 0):
            raise SingularProfileError(
                "equilibrium profile vanishes at a merged size; detailed-balance "
                "fragmentation rate is undefined there"
            )
        out = eval_coag(frag.coag, x, y) * qx * qy / qs
    else:
        raise ConfigError(f"unknown fragmentation kernel kind {k!r}")
    return out if np.ndim(out) else float(out)


def coag_bound(kernel: CoagKernel | TruncatedKernel, x, y):
    """Declared growth bound K0 (x^-a + y^-a)(x^b + y^b)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = kernel.alpha, kernel.beta
    return kernel.K0 * (x**-a + y**-a) * (x**b + y**b)


def frag_bound(frag: FragKernel, x, y):
    """Declared growth bound F0 (x^g + y^g)."""
    if frag.F0 is None:
        raise ConfigError(f"fragmentation kernel kind {frag.kind!r} declares no bound")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    g = frag.gamma
    return frag.F0 * (x**g + y**g)


def truncate(kernel: CoagKernel | TruncatedKernel, j: float) -> TruncatedKernel:
    """Zero the kernel on sizes at or below 1/j (strict indicator x, y > 1/j)."""
    if j < 1:
        raise ConfigError(f"truncation index must be >= 1, got {j}")
    if isinstance(kernel, TruncatedKernel):
        # Nesting keeps the tighter threshold.
        return TruncatedKernel(base=kernel.base, j=max(j, kernel.j))
    return TruncatedKernel(base=kernel, j=float(j))


def bounded_params(kernel: CoagKernel | TruncatedKernel, n_grid: int = 512) -> BoundedKernelParams:
    """Finite sup constants for contraction estimates and step heuristics.

    Closed form for families monotone on the unit square; otherwise the
    max over a dense corner-including sample lattice, flagged inexact.
    Raises UnboundedKernelError when the kernel is singular at zero and
    not truncated.
    """
    if isinstance(kernel, TruncatedKernel):
        base = kernel.base
        lo = kernel.threshold
    else:
        base = kernel
        lo = None

    beta = base.beta
    if base.kind == "constant":
        return BoundedKernelParams(k_sup=base.scale, k_beta=base.scale, beta=0.0, exact=True)
    if base.kind == "additive":
        return BoundedKernelParams(k_sup=2.0 * base.scale, k_beta=2.0 * base.scale, beta=1.0, exact=True)
    if base.kind == "multiplicative":
        return BoundedKernelParams(k_sup=base.scale, k_beta=base.scale, beta=1.0, exact=True)
    if base.kind == "tabulated":
        vmax = float(np.max(base.table.values))
        return BoundedKernelParams(k_sup=vmax, k_beta=vmax, beta=0.0, exact=True)

    # Power families: singular at zero unless alpha == 0 or truncated.
    if base.alpha > 0 and lo is None:
        raise UnboundedKernelError(
            f"kernel kind {base.kind!r} with alpha={base.alpha} is unbounded near zero; "
            "truncate it first"
        )
    if base.alpha == 0.0 and lo is None:
        if base.kind == "bound_form":
            return BoundedKernelParams(k_sup=4.0 * base.K0, k_beta=4.0 * base.K0, beta=beta, exact=True)
        return BoundedKernelParams(k_sup=2.0 * base.scale, k_beta=2.0 * base.scale, beta=beta, exact=True)

    # Truncated power family: dense log lattice on the closed square
    # [1/j, 1]^2 (the open-square sup equals the closed max by continuity).
    grid = np.geomspace(lo, 1.0, n_grid)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    k_sup = float(np.max(_eval_coag_base(base, X, Y)))
    j = 1.0 / lo
    if base.kind == "bound_form":
        k_beta = 2.0 * base.K0 * (j**base.alpha + 1.0)
    else:
        k_beta = base.scale * (j**base.alpha + 1.0)
    return BoundedKernelParams(
        k_sup=k_sup, k_beta=k_beta, beta=beta, exact=False, n_samples=n_grid * n_grid
    )


def validate_bounds(
    kernel,
    n_per_axis: int = 64,
    n_random: int = 2000,
    seed: int = 0,
    lo: float = 1e-6,
) -> BoundCheckReport:
    """Check the declared growth bound on a log lattice plus random samples.

    Works for both coagulation and fragmentation kernels.  Returns the
    worst relative violation max((K - bound)/bound, 0); built-in families
    report exactly zero.
    """
    grid = np.geomspace(lo, 1.0, n_per_axis)
    rng = np.random.default_rng(seed)
    extra = np.exp(rng.uniform(math.log(lo), 0.0, size=(2, n_random)))
    xs = np.concatenate([np.repeat(grid, n_per_axis), extra[0]])
    ys = np.concatenate([np.tile(grid, n_per_axis), extra[1]])

    if isinstance(frag := kernel, FragKernel):
        values = eval_frag(frag, xs, ys)
        bounds = frag_bound(frag, xs, ys)
    else:
        values = eval_coag(kernel, xs, ys)
        bounds = coag_bound(kernel, xs, ys)

    rel = (values - bounds) / bounds
    worst = int(np.argmax(rel))
    return BoundCheckReport(
        max_violation=max(float(rel[worst]), 0.0),
        worst_x=float(xs[worst]),
        worst_y=float(ys[worst]),
        n_samples=len(xs),
    )
