"""Monte-Carlo estimation of channel and network outage probabilities.

Trials are embarrassingly parallel: the trial budget is split into
``workers`` chunks, chunk ``c`` draws from its own deterministic stream
(``SeedSequence(seed).spawn(workers)[c]``), and per-chunk outage counts are
reduced in chunk order. Estimates are therefore bit-reproducible for a
fixed (trials, seed, workers) triple; changing ``workers`` changes the
streams but not the estimand.

A trial is an outage when any subset constraint of any receiver strictly
fails (ties count as success), matching the analytic convention where the
boundary has probability zero.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .mac_outage import (
    MacSpec,
    OutageEstimate,
    RateVector,
    build_conjunction_matrix,
    rate_thresholds,
)

#: Trials are generated in batches of at most this many rows per receiver.
BATCH_ROWS = 1_000_000

#: Below this many observations of either outcome the normal-approximation
#: half-width is unreliable and the estimate is flagged.
MIN_TAIL_COUNT = 10


@dataclass(frozen=True)
class McConfig:
    """Trial budget, base seed, and worker (chunk) count."""

    trials: int = 100_000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.trials, (int, np.integer)) or self.trials < 1:
            raise InputError(f"trials must be a positive integer, got {self.trials!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise InputError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not isinstance(self.workers, (int, np.integer)) or self.workers < 1:
            raise InputError(f"workers must be a positive integer, got {self.workers!r}")


def _receiver_block(mac: MacSpec, rates: RateVector) -> tuple[np.ndarray, np.ndarray]:
    matrix = build_conjunction_matrix(mac.n)
    return matrix / np.asarray(mac.rates), rate_thresholds(matrix, rates)


def _chunk_outages(blocks, chunk_trials: int, seed_seq) -> int:
    """Outage count over one chunk; draws per receiver in a fixed order."""
    rng = np.random.default_rng(seed_seq)
    count = 0
    done = 0
    while done < chunk_trials:
        rows = min(BATCH_ROWS, chunk_trials - done)
        failed = np.zeros(rows, dtype=bool)
        for coeff, thresholds in blocks:
            draws = rng.exponential(size=(rows, coeff.shape[1]))
            failed |= ((draws @ coeff.T) < thresholds).any(axis=1)
        count += int(failed.sum())
        done += rows
    return count


def _estimate(blocks, config: McConfig) -> OutageEstimate:
    sizes = [
        config.trials // config.workers + (1 if c < config.trials % config.workers else 0)
        for c in range(config.workers)
    ]
    streams = np.random.SeedSequence(config.seed).spawn(config.workers)
    if config.workers == 1:
        counts = [_chunk_outages(blocks, sizes[0], streams[0])]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [
                pool.submit(_chunk_outages, blocks, size, stream)
                for size, stream in zip(sizes, streams)
            ]
            counts = [fut.result() for fut in futures]  # reduce in chunk order
    outages = sum(counts)
    p = outages / config.trials
    halfwidth = 1.96 * np.sqrt(p * (1.0 - p) / config.trials)
    low_confidence = min(outages, config.trials - outages) < MIN_TAIL_COUNT
    return OutageEstimate(p, "mc", float(halfwidth), low_confidence)


def mc_mac_outage(mac: MacSpec, rates: RateVector, config: McConfig = McConfig()) -> OutageEstimate:
    """Monte-Carlo outage estimate for a single receiver."""
    return _estimate([_receiver_block(mac, rates)], config)


def mc_network_outage(net, link_rates, config: McConfig = McConfig()) -> OutageEstimate:
    """Monte-Carlo estimate of the network outage 1 - prod_j (1 - P_j).

    Each receiver's links fade independently, so a trial draws one gain
    vector per receiver (ascending node id) and the trial is an outage when
    any receiver is in outage. A single-receiver network reproduces
    ``mc_mac_outage`` bit-for-bit.

    ``link_rates`` is an array aligned with ``net.links``.
    """
    link_rates = np.asarray(link_rates, dtype=float)
    if link_rates.shape != (len(net.links),):
        raise InputError(
            f"expected {len(net.links)} link rates, got shape {link_rates.shape}"
        )
    blocks = []
    for j in net.receivers():
        mac = net.mac_of(j)
        bits = [link_rates[net.link_index(link)] for link in net.in_links(j)]
        blocks.append(_receiver_block(mac, RateVector(tuple(bits))))
    return _estimate(blocks, config)
