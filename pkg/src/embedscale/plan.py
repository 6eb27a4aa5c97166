"""FLOPs cost models and budget-constrained (model size, dimension) planning.

Per-query cost is split between encoding the query with an N-parameter
model (2NT FLOPs for T tokens) and scoring it against a corpus of M
vectors: 2MD for exhaustive scoring, 2*D*ln(M) for the ANN proxy. The log
base in the ANN regime is fixed to the natural log here and noted in every
output, since cost constants are only meaningful up to such factors.
Projection-layer FLOPs are deliberately not counted.

A fraction gamma of the budget goes to encoding, the rest to scoring;
sweeping gamma and evaluating the joint scaling law at the implied (N, D)
yields the optimal allocation.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite, log, sqrt
from typing import Optional, Sequence

from .core import DataError
from .fit import JointLawFit, predict_joint

REGIMES = ("exhaustive", "ann")
DEFAULT_GRID_POINTS = 4096
_INVPHI = (sqrt(5.0) - 1.0) / 2.0
_GOLDEN_TOL = 1e-12


@dataclass(frozen=True)
class BudgetSpec:
    """Per-query FLOPs budget and the retrieval workload it must cover."""

    total_flops: float
    query_tokens: int
    corpus_size: int
    regime: str = "exhaustive"

    def __post_init__(self):
        if not (isfinite(self.total_flops) and self.total_flops > 0):
            raise DataError(f"total_flops must be positive, got {self.total_flops}")
        if self.query_tokens < 1:
            raise DataError(f"query_tokens must be >= 1, got {self.query_tokens}")
        if self.corpus_size < 2:
            raise DataError(f"corpus_size must be >= 2, got {self.corpus_size}")
        if self.regime not in REGIMES:
            raise DataError(f"regime must be one of {REGIMES}, got {self.regime!r}")


@dataclass(frozen=True)
class AllocationResult:
    """Optimal split of one budget.

    n_hat and d_hat are the raw real-valued optimizers; the rounded forms
    snap to 1e6-parameter and multiple-of-8 granularity. budget_overshoot
    is the rounded allocation's cost minus the budget (negative when
    rounding lands inside it). enc_flops and score_flops are the raw
    allocation's costs and sum to the budget up to float rounding.
    """

    gamma: float
    n_hat: float
    d_hat: float
    n_hat_rounded: float
    d_hat_rounded: int
    predicted_entropy: float
    enc_flops: float
    score_flops: float
    budget_overshoot: float

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise DataError(f"gamma must lie in (0,1), got {self.gamma}")
        if not (self.n_hat > 0 and self.d_hat > 0):
            raise DataError("n_hat and d_hat must be positive")


@dataclass(frozen=True)
class BudgetCurve:
    """Entropy-vs-dimension curve at a fixed budget; skipped dims were infeasible."""

    points: tuple[tuple[float, float], ...]
    skipped: tuple[float, ...]


def flops_encode(n_params: float, tokens: int) -> float:
    """Query encoding cost 2*N*T."""
    if not n_params > 0:
        raise DataError(f"n_params must be positive, got {n_params}")
    if tokens < 1:
        raise DataError(f"tokens must be >= 1, got {tokens}")
    return 2.0 * n_params * tokens


def flops_score(corpus_size: int, dim: float, regime: str = "exhaustive") -> float:
    """Corpus scoring cost: 2*M*D exhaustive, 2*D*ln(M) for the ANN proxy."""
    if corpus_size < 2:
        raise DataError(f"corpus_size must be >= 2, got {corpus_size}")
    if not dim > 0:
        raise DataError(f"dim must be positive, got {dim}")
    if regime == "exhaustive":
        return 2.0 * corpus_size * dim
    if regime == "ann":
        return 2.0 * dim * log(corpus_size)
    raise DataError(f"regime must be one of {REGIMES}, got {regime!r}")


def allocation_from_gamma(gamma: float, b: BudgetSpec) -> tuple[float, float]:
    """(N, D) implied by giving fraction gamma of the budget to encoding.

    N = gamma*B/(2T); D = (1-gamma)*B / (2M) exhaustive, or
    (1-gamma)*B / (2*ln M) under ann. Outputs are real-valued, unrounded.
    """
    if not 0.0 < gamma < 1.0:
        raise DataError(f"gamma must lie in (0,1), got {gamma}")
    n = gamma * b.total_flops / (2.0 * b.query_tokens)
    rest = (1.0 - gamma) * b.total_flops
    if b.regime == "exhaustive":
        d = rest / (2.0 * b.corpus_size)
    else:
        d = rest / (2.0 * log(b.corpus_size))
    return n, d


def round_dim(d: float) -> int:
    """Snap a dimension to the nearest multiple of 8, floored at 8."""
    return max(8, 8 * round(d / 8.0))


def round_params(n: float) -> float:
    """Snap a parameter count to the nearest million, floored at 1e6."""
    return max(1e6, round(n / 1e6) * 1e6)


def _golden_section(f, lo: float, hi: float):
    """Minimize unimodal f on [lo, hi]; returns the best point evaluated."""
    best_x, best_v = lo, f(lo)
    for x in (hi,):
        v = f(x)
        if v < best_v:
            best_x, best_v = x, v
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > _GOLDEN_TOL:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    for x, v in ((c, fc), (d, fd)):
        if v < best_v:
            best_x, best_v = x, v
    return best_x, best_v


def optimal_allocation(fit: JointLawFit, b: BudgetSpec,
                       grid_points: int = DEFAULT_GRID_POINTS) -> AllocationResult:
    """Minimize predicted entropy over the gamma split of one budget.

    Evaluates the joint law on the uniform interior grid gamma_j = j/(G+1),
    j = 1..G, then refines with golden-section search inside the bracket
    [gamma_{j*-1}, gamma_{j*+1}] around the best grid point (ties on the
    grid go to the lowest gamma). The returned allocation reports the raw
    optimizer plus rounded forms and the rounding's budget overshoot.

    Raises:
        DataError: missing/non-joint fit or grid_points < 3.
    """
    if not isinstance(fit, JointLawFit):
        raise DataError("optimal_allocation requires a joint-law fit")
    if grid_points < 3:
        raise DataError(f"grid_points must be >= 3, got {grid_points}")

    def objective(gamma: float) -> float:
        n, d = allocation_from_gamma(gamma, b)
        return predict_joint(fit, d, n)

    step = 1.0 / (grid_points + 1)
    best_j = 1
    best_value = objective(step)
    for j in range(2, grid_points + 1):
        value = objective(j * step)
        if value < best_value:
            best_j, best_value = j, value

    lo = max(best_j - 1, 1) * step
    hi = min(best_j + 1, grid_points) * step
    gamma_hat, value = _golden_section(objective, lo, hi)
    if best_value < value:
        gamma_hat, value = best_j * step, best_value

    n_hat, d_hat = allocation_from_gamma(gamma_hat, b)
    n_rounded = round_params(n_hat)
    d_rounded = round_dim(d_hat)
    rounded_cost = (flops_encode(n_rounded, b.query_tokens)
                    + flops_score(b.corpus_size, d_rounded, b.regime))
    return AllocationResult(
        gamma=gamma_hat,
        n_hat=n_hat,
        d_hat=d_hat,
        n_hat_rounded=n_rounded,
        d_hat_rounded=d_rounded,
        predicted_entropy=value,
        enc_flops=flops_encode(n_hat, b.query_tokens),
        score_flops=flops_score(b.corpus_size, d_hat, b.regime),
        budget_overshoot=rounded_cost - b.total_flops,
    )


def budget_curve(fit: JointLawFit, b: BudgetSpec,
                 dims: Sequence[float]) -> BudgetCurve:
    """Predicted entropy at each dimension when the leftover budget buys N.

    For each D with flops_score(M, D) < B, the model size is the largest
    affordable, N = (B - flops_score) / (2T); dims whose scoring cost
    alone exhausts the budget are skipped and reported.

    Raises:
        DataError: non-joint fit, empty dims, a dim < 1, or every dim
            infeasible.
    """
    if not isinstance(fit, JointLawFit):
        raise DataError("budget_curve requires a joint-law fit")
    if not len(dims):
        raise DataError("dims must be nonempty")
    points = []
    skipped = []
    for d in dims:
        if not d >= 1:
            raise DataError(f"dimensions must be >= 1, got {d}")
        score = flops_score(b.corpus_size, d, b.regime)
        if not score < b.total_flops:
            skipped.append(d)
            continue
        n = (b.total_flops - score) / (2.0 * b.query_tokens)
        points.append((d, predict_joint(fit, d, n)))
    if not points:
        raise DataError(
            f"all {len(dims)} dimensions infeasible for budget {b.total_flops}"
        )
    return BudgetCurve(points=tuple(points), skipped=tuple(skipped))
