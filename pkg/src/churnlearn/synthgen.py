"""Synthetic CDR datasets with planted churn contagion.

A static contact graph is grown by degree-heterogeneous preferential
attachment at a target sparsity.  Customers then churn month by month at a
target rate, with contagion: once a contact has churned, a customer's churn
probability is multiplied by ``1 + 10 * homophily_strength`` in all later
months.  Churned customers emit no calls on or after their churn day.
Everything is driven by one seeded generator, so a seed pins the record
stream byte for byte.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cdr import MIN_CALL_SECONDS, CallEvents, write_cdr
from .graph import _csr_from_coo

__all__ = ["SynthConfig", "SyntheticDataset", "generate", "write_ground_truth", "read_ground_truth"]

log = logging.getLogger(__name__)

DAYS_PER_MONTH = 30


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; sparsity and churn rate are the calibration targets."""

    n_customers: int
    target_churn_rate: float = 0.03
    target_sparsity: float = 6e-4
    homophily_strength: float = 0.5
    months: int = 6
    rng_seed: int = 0
    calls_per_edge_per_month: float = 3.0
    duration_mean_s: float = 90.0

    def __post_init__(self) -> None:
        if self.n_customers < 100:
            raise ValueError("n_customers must be at least 100")
        if not 0.0 < self.target_churn_rate < 1.0:
            raise ValueError("target_churn_rate must lie in (0, 1)")
        if not 0.0 < self.target_sparsity < 1.0:
            raise ValueError("target_sparsity must lie in (0, 1)")
        if not 0.0 <= self.homophily_strength <= 1.0:
            raise ValueError("homophily_strength must lie in [0, 1]")
        if self.months < 2:
            raise ValueError("need at least two months of data")
        if self.calls_per_edge_per_month < 1.0:
            raise ValueError("calls_per_edge_per_month must be at least 1")
        if self.duration_mean_s <= MIN_CALL_SECONDS:
            raise ValueError(f"duration_mean_s must exceed {MIN_CALL_SECONDS} seconds")
        n = self.n_customers
        target_edges = self.target_sparsity * n * n / 2.0
        if target_edges < 1.0:
            raise ValueError(
                f"target_sparsity {self.target_sparsity:g} yields under one edge "
                f"for n={n}; raise the sparsity or the customer count"
            )
        if target_edges > n * (n - 1) / 2.0:
            raise ValueError("target_sparsity exceeds the complete graph")
        if target_edges / n > n / 8.0:
            raise ValueError(
                "target_sparsity is too dense for heavy-tailed attachment "
                f"(mean degree {2 * target_edges / n:.1f} with n={n})"
            )


@dataclass
class SyntheticDataset:
    """Generated events plus the planted ground truth."""

    config: SynthConfig
    events: CallEvents
    churn_schedule: dict[str, int]
    edge_u: np.ndarray
    edge_v: np.ndarray

    @property
    def n_contact_edges(self) -> int:
        return self.edge_u.shape[0]

    def contact_sparsity(self) -> float:
        n = self.config.n_customers
        return 2.0 * self.n_contact_edges / (n * n)

    def contact_graph(self):
        """Static contact structure as a unit-weight :class:`CallGraph`."""
        rows = np.concatenate([self.edge_u, self.edge_v])
        cols = np.concatenate([self.edge_v, self.edge_u])
        vals = np.ones(rows.shape[0], dtype=np.float64)
        return _csr_from_coo(list(self.events.ids), rows, cols, vals)

    def write(self, cdr_path, truth_path) -> None:
        write_cdr(cdr_path, self.events.records())
        write_ground_truth(truth_path, self.churn_schedule)


def _customer_ids(n: int) -> list[str]:
    return [f"c{i:07d}" for i in range(n)]


def _attachment_graph(n: int, target_edges: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Grow an undirected contact graph by preferential attachment.

    Each arriving node links to ``target_edges / n`` existing nodes on
    average (fractional part resolved by a coin flip), chosen mostly in
    proportion to degree, which yields the heavy-tailed degree profile of
    call networks.
    """
    m_mean = target_edges / n
    base = int(m_mean)
    frac = m_mean - base
    seed_size = min(n, max(2, base + 1))
    us: list[int] = list(range(seed_size - 1))
    vs: list[int] = list(range(1, seed_size))
    endpoints: list[int] = [x for pair in zip(us, vs) for x in pair]
    for i in range(seed_size, n):
        mi = base + (1 if rng.random() < frac else 0)
        mi = min(mi, i)
        if mi == 0:
            continue
        chosen: list[int] = []
        seen = {i}
        attempts = 0
        limit = 20 * mi + 20
        while len(chosen) < mi and attempts < limit:
            attempts += 1
            if endpoints and rng.random() < 0.9:
                j = endpoints[int(rng.integers(len(endpoints)))]
            else:
                j = int(rng.integers(i))
            if j not in seen:
                seen.add(j)
                chosen.append(j)
        for j in chosen:
            us.append(i)
            vs.append(j)
            endpoints.append(i)
            endpoints.append(j)
    return np.asarray(us, dtype=np.int64), np.asarray(vs, dtype=np.int64)


def _weighted_sample_without_replacement(
    weights: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Indices of ``count`` items drawn without replacement with probability
    proportional to ``weights`` (exponential-key trick, fully vectorized)."""
    if count <= 0:
        return np.empty(0, dtype=np.int64)
    keys = rng.exponential(size=weights.shape[0]) / weights
    return np.argpartition(keys, count - 1)[:count]


def generate(config: SynthConfig) -> SyntheticDataset:
    """Generate one synthetic dataset; identical seeds give identical output."""
    rng = np.random.default_rng(config.rng_seed)
    n = config.n_customers
    target_edges = config.target_sparsity * n * n / 2.0
    edge_u, edge_v = _attachment_graph(n, target_edges, rng)

    # Neighbor lookup (CSR layout) for exposure bookkeeping.
    src = np.concatenate([edge_u, edge_v])
    dst = np.concatenate([edge_v, edge_u])
    deg = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(deg, out=indptr[1:])
    nbr = dst[np.argsort(src, kind="stable")]

    churn_day = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    exposed = np.zeros(n, dtype=bool)
    boost = 1.0 + 10.0 * config.homophily_strength

    for month in range(1, config.months):
        month_start = month * DAYS_PER_MONTH
        active = np.flatnonzero(churn_day > month_start)
        if active.size == 0:
            break
        quota = int(round(config.target_churn_rate * active.size))
        if quota == 0:
            continue
        weights = np.where(exposed[active], boost, 1.0)
        picked = active[_weighted_sample_without_replacement(weights, quota, rng)]
        picked = np.sort(picked)
        churn_day[picked] = month_start + rng.integers(0, DAYS_PER_MONTH, size=picked.size)
        # Contagion starts the month after a contact churns.
        for c in picked:
            exposed[nbr[indptr[c] : indptr[c + 1]]] = True

    # Emit calls month by month over the edges whose endpoints are active.
    lam = config.calls_per_edge_per_month
    cd_u = churn_day[edge_u]
    cd_v = churn_day[edge_v]
    chunks_caller: list[np.ndarray] = []
    chunks_callee: list[np.ndarray] = []
    chunks_day: list[np.ndarray] = []
    chunks_dur: list[np.ndarray] = []
    for month in range(config.months):
        month_start = month * DAYS_PER_MONTH
        month_end = month_start + DAYS_PER_MONTH
        win_end = np.minimum(month_end, np.minimum(cd_u, cd_v))
        alive = win_end > month_start
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            continue
        # At least one call per live edge per month keeps active customers
        # visibly active; the Poisson part restores the configured mean.
        counts = 1 + rng.poisson(lam - 1.0, size=idx.size)
        per_call_edge = np.repeat(idx, counts)
        total = per_call_edge.shape[0]
        span = (win_end[per_call_edge] - month_start).astype(np.float64)
        days = month_start + np.floor(rng.random(total) * span).astype(np.int64)
        durations = MIN_CALL_SECONDS + np.floor(
            rng.exponential(config.duration_mean_s - MIN_CALL_SECONDS, size=total)
        ).astype(np.int64)
        flip = rng.random(total) < 0.5
        caller = np.where(flip, edge_u[per_call_edge], edge_v[per_call_edge])
        callee = np.where(flip, edge_v[per_call_edge], edge_u[per_call_edge])
        chunks_caller.append(caller)
        chunks_callee.append(callee)
        chunks_day.append(days)
        chunks_dur.append(durations)

    if chunks_caller:
        caller = np.concatenate(chunks_caller)
        callee = np.concatenate(chunks_callee)
        day = np.concatenate(chunks_day)
        duration = np.concatenate(chunks_dur)
        order = np.lexsort((duration, callee, caller, day))
        caller, callee = caller[order], callee[order]
        day, duration = day[order], duration[order]
    else:
        caller = callee = day = duration = np.empty(0, dtype=np.int64)

    ids = _customer_ids(n)
    events = CallEvents(ids, caller, callee, day, duration)
    schedule = {
        ids[i]: int(churn_day[i])
        for i in range(n)
        if churn_day[i] != np.iinfo(np.int64).max
    }
    return SyntheticDataset(config, events, schedule, edge_u, edge_v)


def write_ground_truth(path, schedule: dict[str, int]) -> None:
    """``customer_id<TAB>churn_day`` rows for the scheduled churners."""
    with open(path, "w", encoding="utf-8") as fh:
        for cid in sorted(schedule):
            fh.write(f"{cid}\t{schedule[cid]}\n")


def read_ground_truth(path) -> dict[str, int]:
    out: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            cid, day = line.split("\t")
            out[cid] = int(day)
    return out
