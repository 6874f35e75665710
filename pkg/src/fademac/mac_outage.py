"""Outage probability of a slow-fading multiple-access channel.

``n`` senders transmit to one receiver over independent Rayleigh-faded
links. A rate tuple is supported exactly when every subset of senders
clears its sum-capacity constraint; with exponentially distributed channel
gains those constraints form a conjunction system over all ``2**n - 1``
nonempty sender subsets (one row per subset, subset encoded by the binary
expansion of the row index). Outage is the probability that at least one
constraint fails; a tie counts as success.

The channel is summarized by one positive parameter per sender,
``lambda_i = noise / (2 * fading_variance_i * power_i)``: the rate of the
exponential variable entering sender i's column. ``outage_exact`` has
closed forms for ``n <= 2`` and otherwise delegates to the reduction
recursion in :mod:`fademac.exp_linear`; for systems the recursion cannot
resolve it returns a ``not-computable`` estimate and callers should use the
bounds or Monte Carlo. Bounds: two lower bounds (equal-parameter and
distinct-parameter variants, both tight for ``n <= 2``), a polynomial upper
bound for equal parameters and ``n >= 3``, and a weak single-exponential
upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import exp_linear
from .errors import InputError

LN2 = math.log(2.0)

#: Largest supported sender count; the constraint matrix has 2**n - 1 rows.
MAX_SENDERS = 20

#: Total-rate guard: past this, exp(-lambda * (2**R - 1)) underflows for any
#: realistic lambda and outage is reported as exactly 1.
MAX_TOTAL_BITS = 60.0

METHODS = ("exact", "lower", "upper", "weak", "mc", "not-computable")

_DIRECTIONS = {
    "exact": "exact",
    "lower": "lower",
    "upper": "upper",
    "weak": "upper",
    "mc": "mc",
    "not-computable": "none",
}


@dataclass(frozen=True)
class OutageEstimate:
    """A probability tagged with how it was obtained.

    ``method`` is one of ``METHODS``. Monte-Carlo estimates carry a 95%%
    normal-approximation ``halfwidth`` and are flagged ``low_confidence``
    when either outcome was observed fewer than 10 times.
    """

    value: float
    method: str
    halfwidth: float | None = None
    low_confidence: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise InputError(f"unknown method {self.method!r}")

    @property
    def direction(self) -> str:
        """'lower', 'upper', 'exact', 'mc', or 'none' (not computable)."""
        return _DIRECTIONS[self.method]

    @property
    def computable(self) -> bool:
        return self.method != "not-computable"


_NOT_COMPUTABLE = OutageEstimate(float("nan"), "not-computable")


@dataclass(frozen=True)
class MacSpec:
    """Channel parameters: one exponential rate ``lambda_i`` per sender."""

    rates: tuple[float, ...]

    def __post_init__(self):
        rates = tuple(float(v) for v in self.rates)
        if not 1 <= len(rates) <= MAX_SENDERS:
            raise InputError(f"need 1..{MAX_SENDERS} senders, got {len(rates)}")
        if any(not math.isfinite(v) or v <= 0 for v in rates):
            raise InputError(f"channel rates must be positive and finite: {rates}")
        object.__setattr__(self, "rates", rates)

    @property
    def n(self) -> int:
        return len(self.rates)

    @property
    def iid(self) -> bool:
        """True when every sender has exactly the same parameter."""
        return all(v == self.rates[0] for v in self.rates)

    @property
    def all_distinct(self) -> bool:
        return len(set(self.rates)) == self.n


@dataclass(frozen=True)
class RateVector:
    """Per-sender transmission rates in bits per channel use."""

    bits: tuple[float, ...]

    def __post_init__(self):
        bits = tuple(float(v) for v in self.bits)
        if not 1 <= len(bits) <= MAX_SENDERS:
            raise InputError(f"need 1..{MAX_SENDERS} rates, got {len(bits)}")
        if any(not math.isfinite(v) or v < 0 for v in bits):
            raise InputError(f"rates must be nonnegative and finite: {bits}")
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return len(self.bits)

    @property
    def total(self) -> float:
        """Sum rate R = sum_i r_i."""
        return float(sum(self.bits))

    @property
    def gains(self) -> np.ndarray:
        """Per-sender SNR demands 2**r_i - 1 (expm1 keeps small rates exact)."""
        return np.expm1(LN2 * np.asarray(self.bits))

    @property
    def gain_sum(self) -> float:
        """S = sum_i (2**r_i - 1)."""
        return float(self.gains.sum())

    @property
    def gain_product(self) -> float:
        """alpha = prod_i (2**r_i - 1)."""
        return float(self.gains.prod())

    @property
    def gain_excess(self) -> float:
        """beta = 2**R - 1 - S.

        Computed as the sum of all order->=2 elementary symmetric products of
        the per-sender gains (the expansion of ``prod(1+s_i) - 1 - sum s_i``),
        which is a sum of nonnegative terms: nonnegativity survives floating
        point, unlike the direct difference which can round below zero for
        near-zero rates. Satisfies ``gain_product <= gain_excess`` for n >= 2.
        """
        elementary = np.array([1.0])
        for s in self.gains:
            elementary = np.convolve(elementary, [1.0, s])
        return float(elementary[2:].sum())


def exp_partial_sum(n: int, x: float) -> float:
    """The n-term exponential series sum_{k<n} x**k / k! (grows with n, x)."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InputError(f"n must be a positive integer, got {n!r}")
    total, term = 1.0, 1.0
    for k in range(1, n):
        term *= x / k
        total += term
    return total


def build_conjunction_matrix(n: int) -> np.ndarray:
    """0/1 subset matrix with 2**n - 1 rows.

    Row k (1-based) is the n-bit binary expansion of k, most significant bit
    first, so each row selects one nonempty subset of the n senders.
    """
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_SENDERS:
        raise InputError(f"n must be in 1..{MAX_SENDERS}, got {n!r}")
    rows = np.arange(1, 2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((rows[:, None] >> shifts) & 1).astype(float)


def rate_thresholds(matrix: np.ndarray, rates: RateVector) -> np.ndarray:
    """Per-subset SNR thresholds 2**(A r) - 1 (exactly 0 for zero rates)."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != rates.n:
        raise InputError(
            f"matrix shape {matrix.shape} does not match {rates.n} senders"
        )
    return np.exp2(matrix @ np.asarray(rates.bits)) - 1.0


def conjunction_system(mac: MacSpec, rates: RateVector) -> exp_linear.ConjunctionSystem:
    """The success event {A D z > b} with channel parameters absorbed.

    Column i is scaled by 1 / lambda_i so the system is over i.i.d. unit-rate
    exponentials; outage is one minus its probability.
    """
    _check_pair(mac, rates)
    matrix = build_conjunction_matrix(mac.n)
    coeff = matrix / np.asarray(mac.rates)
    return exp_linear.ConjunctionSystem(coeff, rate_thresholds(matrix, rates))


def outage_exact(mac: MacSpec, rates: RateVector) -> OutageEstimate:
    """Exact outage probability, when an exact route exists.

    Closed forms cover n = 1 and the equal-parameter n = 2 case; otherwise
    the conjunction system is handed to the reduction recursion. If the
    recursion cannot resolve it (the typical n >= 3 situation), the result
    is tagged ``not-computable`` and callers should fall back to bounds or
    Monte Carlo.
    """
    _check_pair(mac, rates)
    if rates.total == 0.0:
        return OutageEstimate(0.0, "exact")
    if rates.total > MAX_TOTAL_BITS:
        return OutageEstimate(1.0, "exact")
    lam = mac.rates[0]
    if mac.n == 1:
        return OutageEstimate(-math.expm1(-lam * rates.gain_sum), "exact")
    if mac.n == 2 and mac.iid:
        total_gain = math.expm1(LN2 * rates.total)  # 2**(r1+r2) - 1
        value = 1.0 - math.exp(-lam * total_gain) * (1.0 + lam * rates.gain_product)
        return OutageEstimate(min(max(value, 0.0), 1.0), "exact")
    result = exp_linear.evaluate(conjunction_system(mac, rates))
    if not result.resolved:
        return _NOT_COMPUTABLE
    return OutageEstimate(min(max(1.0 - result.value, 0.0), 1.0), "exact")


def outage_lower_iid(mac: MacSpec, rates: RateVector) -> OutageEstimate:
    """Lower outage bound for equal channel parameters.

    ``1 - exp(-lam*S) * erlang_survival(n, lam*beta)``. For n <= 2 the bound
    coincides with the exact probability, which is returned instead (tagged
    ``exact``) so every method agrees bitwise on such receivers.
    """
    lam = _require_iid(mac, rates)
    if mac.n <= 2:
        return outage_exact(mac, rates)
    if rates.total > MAX_TOTAL_BITS:
        return OutageEstimate(1.0, "lower")
    survival = math.exp(-lam * rates.gain_sum) * exp_linear.erlang_survival(
        mac.n, lam * rates.gain_excess
    )
    return OutageEstimate(min(max(1.0 - survival, 0.0), 1.0), "lower")


def outage_lower_distinct(mac: MacSpec, rates: RateVector) -> OutageEstimate:
    """Lower outage bound for pairwise-distinct channel parameters.

    ``1 - exp(-sum_i lam_i*(2**r_i - 1)) * hypoexponential_survival(lam, beta)``,
    clamped to [0, 1]. For n <= 2 the exact probability is returned instead
    (tagged ``exact``). Raises IllConditionedError when the parameters are
    too close for the partial-fraction weights.
    """
    _check_pair(mac, rates)
    if not mac.all_distinct:
        raise InputError(f"channel parameters are not distinct: {mac.rates}")
    if mac.n <= 2:
        return outage_exact(mac, rates)
    if rates.total > MAX_TOTAL_BITS:
        return OutageEstimate(1.0, "lower")
    weighted = float(np.asarray(mac.rates) @ rates.gains)
    survival = math.exp(-weighted) * exp_linear.hypoexponential_survival(
        mac.rates, rates.gain_excess
    )
    return OutageEstimate(min(max(1.0 - survival, 0.0), 1.0), "lower")


def outage_upper_iid(mac: MacSpec, rates: RateVector) -> OutageEstimate:
    """Upper outage bound for equal channel parameters.

    For n >= 3: ``1 - exp(-lam*(2**R - 1)) * (y**2/2 + y + 1)`` with
    ``y = lam * alpha``. For n <= 2 the exact probability is sharper and is
    returned instead (tagged ``exact``).
    """
    lam = _require_iid(mac, rates)
    if mac.n <= 2:
        return outage_exact(mac, rates)
    if rates.total > MAX_TOTAL_BITS:
        return OutageEstimate(1.0, "upper")
    x = lam * math.expm1(LN2 * rates.total)
    y = lam * rates.gain_product
    poly = 0.5 * y * y + y + 1.0
    if not math.isfinite(poly) or x > 700.0:
        # exp(-x) underflows while poly stays polynomial in x: bound -> 1
        survival = math.exp(min(-x + math.log(poly), 0.0)) if math.isfinite(poly) else 0.0
    else:
        survival = math.exp(-x) * poly
    return OutageEstimate(min(max(1.0 - survival, 0.0), 1.0), "upper")


def outage_upper_weak(mac: MacSpec, rates: RateVector) -> OutageEstimate:
    """Single-exponential upper bound ``1 - exp(-lam*(2**R - 1))``.

    Never replaced by the exact value (it is the bound the rate-allocation
    objective is built from); coincides with the exact probability at n = 1.
    """
    lam = _require_iid(mac, rates)
    if rates.total > MAX_TOTAL_BITS:
        return OutageEstimate(1.0, "weak")
    value = -math.expm1(-lam * math.expm1(LN2 * rates.total))
    return OutageEstimate(value, "weak")


def _require_iid(mac: MacSpec, rates: RateVector) -> float:
    _check_pair(mac, rates)
    if not mac.iid:
        raise InputError(f"channel parameters are not all equal: {mac.rates}")
    return mac.rates[0]


def _check_pair(mac: MacSpec, rates: RateVector) -> None:
    if mac.n != rates.n:
        raise InputError(f"{mac.n} channel parameters vs {rates.n} rates")
