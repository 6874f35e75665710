"""Survival probabilities for conjunctions of linear exponential inequalities.

The central object is the event ``{A z > b}`` where ``z`` is a vector of
i.i.d. unit-rate exponential variables and ``A`` is entrywise nonnegative.
Two exact reduction rules shrink such a system:

* ``eliminate_singleton_row`` — a row with a single positive entry and a
  nonnegative threshold contributes a multiplicative factor
  ``exp(-b_r / a_ri)`` plus a threshold shift on the surviving rows;
* ``eliminate_identical_columns`` — a row supported exactly on a set of
  pairwise-identical columns splits the probability into Poisson-weighted
  subproblems in which leading columns of the set are removed.

``evaluate`` drives these rules deterministically down to closed-form
leaves (empty system, Erlang survival, sum-of-distinct-exponentials
survival) and reports whether the system was fully resolved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincc

from .errors import IllConditionedError, InputError

#: Relative gap below which two rates are treated as numerically coincident.
RATE_GAP_TOL = 1e-6


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ConjunctionSystem:
    """The event ``{coeff @ z > thresholds}`` for i.i.d. unit-rate exponential z.

    ``coeff`` is a (rows, vars) matrix with nonnegative entries; ``vars`` must
    be at least 1, ``rows`` may be 0 (the always-true event). Arrays are
    copied and marked read-only.
    """

    coeff: np.ndarray
    thresholds: np.ndarray

    def __post_init__(self):
        coeff = np.atleast_2d(np.asarray(self.coeff, dtype=float))
        thresholds = np.asarray(self.thresholds, dtype=float).reshape(-1)
        if coeff.ndim != 2:
            raise InputError(f"coeff must be 2-D, got shape {coeff.shape}")
        if coeff.shape[1] < 1:
            raise InputError("system needs at least one variable")
        if coeff.shape[0] == 0:
            coeff = coeff.reshape(0, coeff.shape[1])
        if thresholds.shape[0] != coeff.shape[0]:
            raise InputError(
                f"{thresholds.shape[0]} thresholds for {coeff.shape[0]} rows"
            )
        if not np.all(np.isfinite(coeff)):
            raise InputError("coeff entries must be finite")
        if not np.all(np.isfinite(thresholds)):
            raise InputError("thresholds must be finite")
        if np.any(coeff < 0):
            r, c = np.argwhere(coeff < 0)[0]
            raise InputError(f"coeff[{r},{c}] = {coeff[r, c]} is negative")
        object.__setattr__(self, "coeff", _readonly(coeff))
        object.__setattr__(self, "thresholds", _readonly(thresholds))

    @property
    def nrows(self) -> int:
        return self.coeff.shape[0]

    @property
    def nvars(self) -> int:
        return self.coeff.shape[1]


@dataclass(frozen=True)
class RecursionResult:
    """Outcome of ``evaluate``.

    ``value`` is the event probability in [0, 1] when ``resolved`` is true
    and NaN otherwise. ``method_trace`` lists the reduction steps and leaf
    names that were applied, in deterministic depth-first order.
    """

    value: float
    resolved: bool
    method_trace: tuple[str, ...]


def drop_vacuous_rows(system: ConjunctionSystem) -> ConjunctionSystem:
    """Remove rows whose threshold is <= 0; they hold almost surely."""
    keep = system.thresholds > 0.0
    if keep.all():
        return system
    return ConjunctionSystem(system.coeff[keep], system.thresholds[keep])


def eliminate_singleton_row(
    system: ConjunctionSystem, row: int
) -> tuple[float, ConjunctionSystem]:
    """Remove a row with a single positive entry.

    Returns ``(multiplier, reduced)`` such that
    ``Pr(system) = multiplier * Pr(reduced)``. Requires the row's threshold
    to be nonnegative. The eliminated variable's column stays in the reduced
    system; the surviving thresholds are shifted by its column scaled with
    ``threshold / entry``.
    """
    if not 0 <= row < system.nrows:
        raise InputError(f"row {row} out of range for {system.nrows}-row system")
    b = system.thresholds[row]
    if b < 0:
        raise InputError(f"row {row} threshold {b} is negative")
    support = np.flatnonzero(system.coeff[row] > 0)
    if support.size != 1:
        raise InputError(
            f"row {row} has {support.size} positive entries; need exactly 1"
        )
    col = int(support[0])
    delta = b / system.coeff[row, col]
    keep = np.arange(system.nrows) != row
    coeff = system.coeff[keep]
    thresholds = system.thresholds[keep] - delta * coeff[:, col]
    return math.exp(-delta), ConjunctionSystem(coeff, thresholds)


def eliminate_identical_columns(
    system: ConjunctionSystem, row: int, columns=None
) -> list[tuple[float, ConjunctionSystem]]:
    """Split on a row supported by a set of pairwise-identical columns.

    Requires: the row's threshold is nonnegative, its positive entries sit
    exactly on ``columns`` (inferred from the row's support when omitted),
    and those columns are identical as vectors. Returns ``k`` pairs
    ``(weight_m, reduced_m)`` for ``m = 0..k-1`` with
    ``Pr(system) = sum_m weight_m * Pr(reduced_m)``; ``weight_m`` is the
    Poisson(delta) mass at m, ``reduced_m`` drops the row and the first
    ``m`` columns of the set, and every branch shares the same shifted
    thresholds.
    """
    if not 0 <= row < system.nrows:
        raise InputError(f"row {row} out of range for {system.nrows}-row system")
    b = system.thresholds[row]
    if b < 0:
        raise InputError(f"row {row} threshold {b} is negative")
    support = np.flatnonzero(system.coeff[row] > 0)
    if support.size == 0:
        raise InputError(f"row {row} has no positive entries")
    if columns is None:
        columns = support
    columns = np.asarray(sorted(int(c) for c in columns))
    if not np.array_equal(columns, support):
        raise InputError(
            f"columns {columns.tolist()} do not match row {row} support "
            f"{support.tolist()}"
        )
    first = columns[0]
    for other in columns[1:]:
        if not np.array_equal(system.coeff[:, first], system.coeff[:, other]):
            raise InputError(f"columns {first} and {other} differ")
    delta = b / system.coeff[row, first]
    keep = np.arange(system.nrows) != row
    base = system.coeff[keep]
    shifted = system.thresholds[keep] - delta * base[:, first]
    terms = []
    for m in range(columns.size):
        weight = _poisson_mass(m, delta)
        reduced = ConjunctionSystem(np.delete(base, columns[:m], axis=1), shifted)
        terms.append((weight, reduced))
    return terms


def _poisson_mass(m: int, delta: float) -> float:
    if delta == 0.0:
        return 1.0 if m == 0 else 0.0
    # log-domain keeps delta**m from overflowing for large thresholds
    return math.exp(m * math.log(delta) - delta - math.lgamma(m + 1))


def erlang_survival(n: int, x: float) -> float:
    """Pr(sum of n i.i.d. unit-rate exponentials > x); 1 for x < 0.

    Equals ``exp(-x) * sum_{k<n} x**k / k!``, computed through the
    regularized upper incomplete gamma function so that large ``x`` cannot
    overflow.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InputError(f"n must be a positive integer, got {n!r}")
    if x < 0:
        return 1.0
    return float(gammaincc(n, x))


def hypoexponential_survival(rates, x: float) -> float:
    """Pr(sum_i E_i / rates_i > x) for independent unit exponentials E_i.

    ``rates`` must be positive and pairwise distinct; the partial-fraction
    weights are ``prod_{j!=i} rates_j / (rates_j - rates_i)``. Raises
    IllConditionedError when the smallest pairwise gap is below
    ``RATE_GAP_TOL`` relative to the largest rate, where the formula loses
    all precision. Returns 1 for x < 0.
    """
    rates = np.asarray(rates, dtype=float).reshape(-1)
    if rates.size < 1:
        raise InputError("need at least one rate")
    if np.any(rates <= 0) or not np.all(np.isfinite(rates)):
        raise InputError(f"rates must be positive and finite, got {rates.tolist()}")
    if x < 0:
        return 1.0
    if rates.size == 1:
        return math.exp(-rates[0] * x)
    diff = np.abs(rates[:, None] - rates[None, :])
    gap = diff[~np.eye(rates.size, dtype=bool)].min()
    if gap < RATE_GAP_TOL * rates.max():
        raise IllConditionedError(
            f"rate gap {gap:.3e} below {RATE_GAP_TOL} * max rate {rates.max():.3e}"
        )
    total = 0.0
    for i, li in enumerate(rates):
        weight = 1.0
        for j, lj in enumerate(rates):
            if j != i:
                weight *= lj / (lj - li)
        total += weight * math.exp(-li * x)
    return min(max(total, 0.0), 1.0)


class _Unresolved(Exception):
    pass


def evaluate(system: ConjunctionSystem, branch_limit: int = 32) -> RecursionResult:
    """Resolve a system to a probability via the exact reduction rules.

    Deterministic order: vacuous rows are dropped, then single-positive-entry
    rows are eliminated in ascending row order, then identical-column rows are
    split in ascending row order, re-checking from the top after each step.
    Leaves: an empty system (probability 1), a single row with all-equal
    positive coefficients (Erlang survival over its active columns), and a
    single row positive and pairwise distinct on every column
    (sum-of-distinct-exponentials survival). A remaining all-zero row makes
    the conjunction impossible (probability 0).

    Splitting may spawn at most ``branch_limit`` subproblems in total; past
    that, or when no rule applies, the result is unresolved with NaN value.
    Near-coincident coefficients that defeat the distinct-rate leaf also
    yield an unresolved result.
    """
    trace: list[str] = []
    budget = [branch_limit]
    try:
        value = _evaluate(system, trace, budget)
    except (_Unresolved, IllConditionedError):
        return RecursionResult(float("nan"), False, tuple(trace))
    return RecursionResult(min(max(value, 0.0), 1.0), True, tuple(trace))


def _evaluate(system: ConjunctionSystem, trace: list[str], budget: list[int]) -> float:
    system = drop_vacuous_rows(system)
    if system.nrows == 0:
        trace.append("empty")
        return 1.0
    row_support = [np.flatnonzero(system.coeff[r] > 0) for r in range(system.nrows)]
    if any(s.size == 0 for s in row_support):
        trace.append("impossible")  # positive threshold over an all-zero row
        return 0.0
    if system.nrows == 1:
        leaf = _leaf_value(system, row_support[0], trace)
        if leaf is not None:
            return leaf
    for r in range(system.nrows):
        if row_support[r].size == 1:
            trace.append("singleton-row")
            multiplier, reduced = eliminate_singleton_row(system, r)
            return multiplier * _evaluate(reduced, trace, budget)
    for r in range(system.nrows):
        cols = row_support[r]
        if cols.size >= 2 and _columns_identical(system.coeff, cols):
            budget[0] -= cols.size
            if budget[0] < 0:
                raise _Unresolved
            trace.append("identical-columns")
            total = 0.0
            for weight, reduced in eliminate_identical_columns(system, r, cols):
                total += weight * _evaluate(reduced, trace, budget)
            return total
    raise _Unresolved


def _leaf_value(system, support, trace):
    row = system.coeff[0]
    b = system.thresholds[0]
    positive = row[support]
    if np.all(positive == positive[0]):
        trace.append("erlang")
        return erlang_survival(int(support.size), b / positive[0])
    if support.size == system.nvars and np.unique(positive).size == support.size:
        value = hypoexponential_survival(1.0 / positive, b)
        trace.append("hypoexponential")
        return value
    return None


def _columns_identical(coeff, cols) -> bool:
    first = coeff[:, cols[0]]
    return all(np.array_equal(first, coeff[:, c]) for c in cols[1:])
