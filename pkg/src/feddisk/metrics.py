"""Communication accounting and the privacy-leakage bound.

Communication cost counts parameters: each effective round a client uploads
its model and downloads the aggregate, so one round moves 2*S parameters of
size 8 bytes each.  The two-phase variant pays for density-model rounds on
top of classifier rounds.

The leakage bound caps the mutual information between one client's sample
and a draw from the federation-wide mixture by kappa_k * H(client sample),
reported in bits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError

BYTES_PER_PARAM = 8  # float64 wire format


@dataclass
class CommLedger:
    """Parameter counts and effective rounds for both exchange phases."""

    s_made: int = 0
    s_cls: int = 0
    ecr_made: int = 0
    ecr_cls: int = 0

    def __post_init__(self) -> None:
        if min(self.s_made, self.s_cls, self.ecr_made, self.ecr_cls) < 0:
            raise ConfigError("ledger counts must be >= 0")

    def bytes_per_round_made(self) -> int:
        return 2 * BYTES_PER_PARAM * self.s_made

    def bytes_per_round_cls(self) -> int:
        return 2 * BYTES_PER_PARAM * self.s_cls


@dataclass
class LeakageInput:
    """Mixture weight of one client and the empirical law of its data point."""

    kappa: float
    distribution: np.ndarray

    def __post_init__(self) -> None:
        if not 0.0 < self.kappa <= 1.0:
            raise ConfigError(f"kappa must lie in (0, 1], got {self.kappa}")
        self.distribution = _check_distribution(self.distribution)


def _check_distribution(dist: np.ndarray) -> np.ndarray:
    p = np.asarray(dist, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ConfigError("distribution must be a nonempty vector")
    if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise ConfigError("distribution entries must be >= 0 and sum to 1")
    return p


def effective_rounds(acc_curve: np.ndarray, target: float) -> int | None:
    """Smallest 1-based round index whose accuracy reaches the target, if any."""
    curve = np.asarray(acc_curve, dtype=np.float64)
    if curve.size == 0:
        raise ConfigError("accuracy curve is empty")
    if not 0.0 <= target <= 1.0:
        raise ConfigError(f"target accuracy must lie in [0, 1], got {target}")
    hits = np.flatnonzero(curve >= target)
    return int(hits[0]) + 1 if hits.size else None


def comm_cost(ledger: CommLedger) -> int:
    """Total parameters exchanged per client: 2*(S_made*ECR_made + S_cls*ECR_cls).

    With no density-model phase this reduces to the plain 2*S_cls*ECR_cls.
    """
    return 2 * (ledger.s_made * ledger.ecr_made + ledger.s_cls * ledger.ecr_cls)


def entropy_bits(dist: np.ndarray) -> float:
    """Shannon entropy in bits, with 0*log(0) = 0."""
    p = _check_distribution(dist)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log2(nz)))


def leakage_bound(inp: LeakageInput) -> float:
    """Upper bound, in bits, on what a client's sample reveals through the mixture."""
    return inp.kappa * entropy_bits(inp.distribution)


def empirical_distribution(rows: np.ndarray) -> np.ndarray:
    """Empirical law of a dataset's rows: relative frequency of distinct rows."""
    arr = np.ascontiguousarray(rows)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ConfigError("need a nonempty 2-D array of samples")
    _, counts = np.unique(arr, axis=0, return_counts=True)
    return counts / arr.shape[0]


def cost_summary(ledger: CommLedger) -> dict:
    """Cost block for reports: ledger fields plus derived totals."""
    total = comm_cost(ledger)
    return {
        **asdict(ledger),
        "ecr_total": ledger.ecr_made + ledger.ecr_cls,
        "cost_params": total,
        "cost_bytes": BYTES_PER_PARAM * total,
    }
