"""The four relational classifiers: WVRN, CDRN, NLB and SPA-RC.

Each classifier maps (graph, current node states) to a churn-score vector in
one local pass.  Per-node scoring functions define the contract; the
``*_scores`` variants are vectorized equivalents used by the collective
inference loops and agree with the scalar forms to floating-point accuracy.

Nodes are in one of two states: a known hard label (non-churner or churner)
or an estimated class vector.  Known labels contribute hard 0/1 vectors to
their neighbors; estimated nodes contribute their current vector.  All
classifiers consume the exclusive neighborhood (linked nodes only), and fall
back to the class prior for isolated or otherwise degenerate nodes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
import scipy.optimize
from scipy.special import expit

from .graph import CallGraph

__all__ = [
    "ClassVector",
    "NodeState",
    "CdrnReference",
    "NlbModel",
    "NLB_FEATURE_NAMES",
    "wvrn_score",
    "wvrn_scores",
    "cdrn_train",
    "cdrn_score",
    "cdrn_scores",
    "nlb_features",
    "nlb_features_matrix",
    "nlb_train",
    "nlb_score",
    "nlb_scores",
    "spa_rc_score",
    "spa_rc_scores",
    "save_key_values",
    "load_key_values",
    "RC_NAMES",
    "make_scorer",
]

log = logging.getLogger(__name__)

RC_NAMES = ("wvrn", "cdrn", "nlb", "spa_rc")

NLB_FEATURE_NAMES = (
    "churn_mass",
    "nonchurn_mass",
    "any_churn_neighbor",
    "churn_majority",
)


class ClassVector(NamedTuple):
    """Two-class membership vector; components sum to 1."""

    p_nonchurn: float
    p_churn: float


def _as_vector(p_churn: float) -> ClassVector:
    return ClassVector(1.0 - p_churn, p_churn)


class NodeState:
    """Per-node class knowledge: hard labels for known nodes, a current
    churn-probability estimate for the rest.

    ``known`` marks the labelled nodes; their ``p_churn`` entry is exactly
    0.0 or 1.0 and is never rescored.  ``prior`` is the class prior used to
    initialize unknown nodes and as the fallback for isolated ones.
    """

    __slots__ = ("known", "p_churn", "prior")

    def __init__(self, n_nodes: int, prior: float, known: np.ndarray | None = None, p_churn: np.ndarray | None = None) -> None:
        if not 0.0 <= prior <= 1.0:
            raise ValueError(f"prior must lie in [0, 1], got {prior}")
        self.prior = float(prior)
        self.known = np.zeros(n_nodes, dtype=bool) if known is None else np.asarray(known, dtype=bool).copy()
        if p_churn is None:
            self.p_churn = np.full(n_nodes, self.prior, dtype=np.float64)
        else:
            self.p_churn = np.asarray(p_churn, dtype=np.float64).copy()
        if self.known.shape != (n_nodes,) or self.p_churn.shape != (n_nodes,):
            raise ValueError("state arrays must have one entry per node")
        if np.any((self.p_churn < 0.0) | (self.p_churn > 1.0)):
            raise ValueError("estimates must lie in [0, 1]")
        k = self.p_churn[self.known]
        if k.size and np.any((k != 0.0) & (k != 1.0)):
            raise ValueError("known nodes must carry hard 0/1 labels")

    @classmethod
    def fully_labeled(cls, labels: np.ndarray, prior: float | None = None) -> "NodeState":
        labels = np.asarray(labels, dtype=np.float64)
        if prior is None:
            prior = float(labels.mean()) if labels.size else 0.0
        return cls(labels.shape[0], prior, known=np.ones(labels.shape[0], dtype=bool), p_churn=labels)

    @property
    def n_nodes(self) -> int:
        return self.known.shape[0]

    def set_known(self, i: int, churner: bool) -> None:
        self.known[i] = True
        self.p_churn[i] = 1.0 if churner else 0.0

    def vector(self, i: int) -> ClassVector:
        return _as_vector(float(self.p_churn[i]))

    def copy(self) -> "NodeState":
        return NodeState(self.n_nodes, self.prior, self.known, self.p_churn)


# ---------------------------------------------------------------------------
# WVRN: weighted vote over the labels/estimates of connected nodes.
# ---------------------------------------------------------------------------

def wvrn_score(graph: CallGraph, state: NodeState, i: int) -> ClassVector:
    """Weighted-vote score: the weight-normalized churn mass of ``i``'s
    linked neighbors; isolated nodes fall back to the class prior."""
    nbrs = graph.neighbors(i)
    if nbrs.shape[0] == 0:
        return _as_vector(state.prior)
    w = graph.neighbor_weights(i)
    mass = float(np.dot(w, state.p_churn[nbrs]))
    total = float(w.sum())
    return _as_vector(mass / total)


def wvrn_scores(graph: CallGraph, state: NodeState) -> np.ndarray:
    return _wvrn_all(graph, state.p_churn, state.prior)


def _wvrn_all(graph: CallGraph, p: np.ndarray, prior: float) -> np.ndarray:
    s = graph.row_sums()
    mass = graph.matrix().dot(p)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(s > 0.0, mass / np.where(s > 0.0, s, 1.0), prior)
    return out


# ---------------------------------------------------------------------------
# CDRN: similarity of a node's neighbor class distribution to per-class
# reference distributions learned from labelled data.
# ---------------------------------------------------------------------------

@dataclass
class CdrnReference:
    """Per-class reference neighbor-distribution vectors, each summing to 1."""

    ref_nonchurn: np.ndarray
    ref_churn: np.ndarray

    def to_key_values(self) -> dict[str, float]:
        return {
            "nonchurn_ref_p_nonchurn": float(self.ref_nonchurn[0]),
            "nonchurn_ref_p_churn": float(self.ref_nonchurn[1]),
            "churn_ref_p_nonchurn": float(self.ref_churn[0]),
            "churn_ref_p_churn": float(self.ref_churn[1]),
        }

    @classmethod
    def from_key_values(cls, kv: dict[str, float]) -> "CdrnReference":
        return cls(
            ref_nonchurn=np.array([kv["nonchurn_ref_p_nonchurn"], kv["nonchurn_ref_p_churn"]]),
            ref_churn=np.array([kv["churn_ref_p_nonchurn"], kv["churn_ref_p_churn"]]),
        )


def _neighbor_distributions(graph: CallGraph, p: np.ndarray) -> np.ndarray:
    """(n, 2) matrix of weight-normalized neighbor class distributions;
    isolated nodes get the zero vector."""
    s = graph.row_sums()
    mass = graph.matrix().dot(p)
    linked = s > 0.0
    m = np.where(linked, mass / np.where(linked, s, 1.0), 0.0)
    out = np.empty((p.shape[0], 2), dtype=np.float64)
    out[:, 0] = np.where(linked, 1.0 - m, 0.0)
    out[:, 1] = np.where(linked, m, 0.0)
    return out


def cdrn_train(graph: CallGraph, state: NodeState) -> CdrnReference:
    """Average the neighbor class distributions of each class's members.

    Requires a fully labelled state; a class with zero members is an error
    because it leaves no distribution to reference.
    """
    if not state.known.all():
        raise ValueError("cdrn_train requires a fully labelled state")
    dist = _neighbor_distributions(graph, state.p_churn)
    refs: list[np.ndarray] = []
    for label in (0.0, 1.0):
        members = state.p_churn == label
        if not members.any():
            cls_name = "churner" if label else "non-churner"
            raise ValueError(f"no {cls_name} nodes in the training data; cannot build a reference")
        total = dist[members].sum(axis=0)
        norm = total.sum()
        if norm <= 0.0:
            cls_name = "churner" if label else "non-churner"
            raise ValueError(f"all {cls_name} nodes are isolated; reference is degenerate")
        refs.append(total / norm)
    return CdrnReference(ref_nonchurn=refs[0], ref_churn=refs[1])


def _cosine(a0: np.ndarray, a1: np.ndarray, ref: np.ndarray) -> np.ndarray:
    dot = a0 * ref[0] + a1 * ref[1]
    norm = np.sqrt(a0 * a0 + a1 * a1) * float(np.hypot(ref[0], ref[1]))
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norm > 0.0, dot / np.where(norm > 0.0, norm, 1.0), 0.0)
    return np.maximum(cos, 0.0)


def cdrn_score(graph: CallGraph, state: NodeState, i: int, reference: CdrnReference) -> ClassVector:
    """Cosine similarity of ``i``'s neighbor class distribution to each class
    reference, floored at zero and normalized to a class vector."""
    nbrs = graph.neighbors(i)
    if nbrs.shape[0] == 0:
        return _as_vector(state.prior)
    w = graph.neighbor_weights(i)
    m = float(np.dot(w, state.p_churn[nbrs]) / w.sum())
    d0, d1 = 1.0 - m, m
    norm_d = float(np.hypot(d0, d1))
    sims = []
    for ref in (reference.ref_nonchurn, reference.ref_churn):
        norm = norm_d * float(np.hypot(ref[0], ref[1]))
        cos = (d0 * float(ref[0]) + d1 * float(ref[1])) / norm if norm > 0.0 else 0.0
        sims.append(max(cos, 0.0))
    total = sims[0] + sims[1]
    if total <= 0.0:
        return _as_vector(state.prior)
    return ClassVector(sims[0] / total, sims[1] / total)


def cdrn_scores(graph: CallGraph, state: NodeState, reference: CdrnReference) -> np.ndarray:
    return _cdrn_all(graph, state.p_churn, state.prior, reference)


def _cdrn_all(graph: CallGraph, p: np.ndarray, prior: float, reference: CdrnReference) -> np.ndarray:
    dist = _neighbor_distributions(graph, p)
    s0 = _cosine(dist[:, 0], dist[:, 1], reference.ref_nonchurn)
    s1 = _cosine(dist[:, 0], dist[:, 1], reference.ref_churn)
    total = s0 + s1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0.0, s1 / np.where(total > 0.0, total, 1.0), prior)
    return out


# ---------------------------------------------------------------------------
# NLB: logistic regression over link-based features.
# ---------------------------------------------------------------------------

def nlb_features(graph: CallGraph, state: NodeState, i: int) -> np.ndarray:
    """Link-based feature vector of node ``i``.

    ``[churn mass, non-churn mass, any churned neighbor, churn majority]``
    where the masses are weighted sums over linked neighbors, the indicator
    fires when some neighbor has p_churn > 0.5, and the majority flag when
    churn is the heavier weighted class.  Isolated nodes yield all zeros.
    """
    nbrs = graph.neighbors(i)
    if nbrs.shape[0] == 0:
        return np.zeros(4, dtype=np.float64)
    w = graph.neighbor_weights(i)
    p = state.p_churn[nbrs]
    churn_mass = float(np.dot(w, p))
    nonchurn_mass = float(np.dot(w, 1.0 - p))
    any_churn = 1.0 if bool(np.any(p > 0.5)) else 0.0
    majority = 1.0 if churn_mass > nonchurn_mass else 0.0
    return np.array([churn_mass, nonchurn_mass, any_churn, majority])


def nlb_features_matrix(graph: CallGraph, state: NodeState) -> np.ndarray:
    return _nlb_features_all(graph, state.p_churn)


def _nlb_features_all(graph: CallGraph, p: np.ndarray) -> np.ndarray:
    n = p.shape[0]
    churn_mass = graph.matrix().dot(p)
    nonchurn_mass = graph.row_sums() - churn_mass
    rows = np.repeat(np.arange(n), np.diff(graph.indptr))
    if graph.indices.size:
        hits = np.bincount(rows, weights=(p[graph.indices] > 0.5).astype(np.float64), minlength=n)
    else:
        hits = np.zeros(n)
    out = np.empty((n, 4), dtype=np.float64)
    out[:, 0] = churn_mass
    out[:, 1] = nonchurn_mass
    out[:, 2] = hits > 0.0
    out[:, 3] = churn_mass > nonchurn_mass
    return out


@dataclass
class NlbModel:
    """Fitted logistic model over the link-based features."""

    intercept: float
    coefficients: np.ndarray
    feature_names: tuple[str, ...] = NLB_FEATURE_NAMES
    converged: bool = True
    grad_max_norm: float = 0.0
    n_iterations: int = 0
    objective_path: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.shape != (len(self.feature_names),):
            raise ValueError("one coefficient per feature is required")
        if not (np.isfinite(self.coefficients).all() and np.isfinite(self.intercept)):
            raise ValueError("model coefficients must be finite")

    def to_key_values(self) -> dict[str, float]:
        kv = {"intercept": self.intercept}
        kv.update({name: float(c) for name, c in zip(self.feature_names, self.coefficients)})
        return kv

    @classmethod
    def from_key_values(cls, kv: dict[str, float]) -> "NlbModel":
        names = tuple(k for k in kv if k != "intercept")
        return cls(intercept=kv["intercept"], coefficients=np.array([kv[n] for n in names]), feature_names=names)


def _penalized_nll(w: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Sum of logistic negative log-likelihoods plus an L2 penalty on the
    non-intercept coefficients, with its gradient."""
    margin = X @ w
    # log(1 + exp(-m)) for y=1 and log(1 + exp(m)) for y=0, computed stably.
    nll = np.logaddexp(0.0, margin) - y * margin
    value = float(nll.sum()) + 0.5 * l2 * float(np.dot(w[1:], w[1:]))
    grad = X.T @ (expit(margin) - y)
    grad[1:] += l2 * w[1:]
    return value, grad


def nlb_train(
    graph: CallGraph,
    state: NodeState,
    l2: float = 1e-4,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> NlbModel:
    """Fit the link-based logistic model on a fully labelled state.

    Maximizes the L2-regularized log-likelihood (penalty ``l2`` on the
    standardized-feature coefficients, intercept unpenalized) to ``tol`` on
    the gradient max-norm.  The problem is convex, so the fit is
    deterministic and seed-free; non-convergence within ``max_iter``
    iterations is reported with the achieved gradient norm, not fatal.
    """
    if not state.known.all():
        raise ValueError("nlb_train requires a fully labelled state")
    y = state.p_churn.astype(np.float64)
    if not ((y == 1.0).any() and (y == 0.0).any()):
        raise ValueError("both classes must be present to fit the model")
    F = _nlb_features_all(graph, y)
    mu = F.mean(axis=0)
    sd = F.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    X = np.empty((F.shape[0], F.shape[1] + 1))
    X[:, 0] = 1.0
    X[:, 1:] = (F - mu) / sd

    path: list[float] = []

    def record(wk: np.ndarray) -> None:
        path.append(_penalized_nll(wk, X, y, l2)[0])

    w0 = np.zeros(X.shape[1])
    record(w0)
    res = scipy.optimize.minimize(
        _penalized_nll,
        w0,
        args=(X, y, l2),
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": max_iter, "gtol": tol, "ftol": 1e-16},
    )
    grad = _penalized_nll(res.x, X, y, l2)[1]
    grad_norm = float(np.abs(grad).max())
    converged = grad_norm <= tol
    if not converged:
        log.warning(
            "nlb_train stopped after %d iterations with gradient max-norm %.3e (target %.1e)",
            res.nit,
            grad_norm,
            tol,
        )
    coef = res.x[1:] / sd
    intercept = float(res.x[0] - np.dot(res.x[1:], mu / sd))
    return NlbModel(
        intercept=intercept,
        coefficients=coef,
        converged=converged,
        grad_max_norm=grad_norm,
        n_iterations=int(res.nit),
        objective_path=tuple(path),
    )


def nlb_score(model: NlbModel, features: np.ndarray) -> ClassVector:
    """Logistic score for one feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != model.coefficients.shape:
        raise ValueError(
            f"got {features.shape[0] if features.ndim == 1 else features.shape} feature(s) "
            f"for a model with {model.coefficients.shape[0]} coefficients"
        )
    p = float(expit(model.intercept + float(np.dot(model.coefficients, features))))
    return _as_vector(p)


def nlb_scores(model: NlbModel, features_matrix: np.ndarray) -> np.ndarray:
    features_matrix = np.asarray(features_matrix, dtype=np.float64)
    return expit(model.intercept + features_matrix @ model.coefficients)


# ---------------------------------------------------------------------------
# SPA-RC: one spreading-activation transfer step.
# ---------------------------------------------------------------------------

def spa_rc_score(graph: CallGraph, state: NodeState, i: int, spread_factor: float = 0.5) -> ClassVector:
    """One energy-transfer step: keep ``1 - d`` of the node's own class mass
    and pull ``d`` from neighbors in proportion to their normalized outgoing
    weights, then renormalize the pair to a class vector."""
    _check_spread(spread_factor)
    d = spread_factor
    p_i = float(state.p_churn[i])
    nbrs = graph.neighbors(i)
    w = graph.neighbor_weights(i)
    s = graph.row_sums()
    inflow1 = 0.0
    inflow0 = 0.0
    for j, wij in zip(nbrs, w):
        share = wij / s[j]
        inflow1 += share * state.p_churn[j]
        inflow0 += share * (1.0 - state.p_churn[j])
    e1 = (1.0 - d) * p_i + d * inflow1
    e0 = (1.0 - d) * (1.0 - p_i) + d * inflow0
    total = e0 + e1
    if total <= 0.0:
        return _as_vector(state.prior)
    return ClassVector(e0 / total, e1 / total)


def spa_rc_scores(graph: CallGraph, state: NodeState, spread_factor: float = 0.5) -> np.ndarray:
    return _spa_all(graph, state.p_churn, state.prior, spread_factor)


def _spa_all(graph: CallGraph, p: np.ndarray, prior: float, spread_factor: float) -> np.ndarray:
    _check_spread(spread_factor)
    d = spread_factor
    s = graph.row_sums()
    linked = s > 0.0
    safe = np.where(linked, s, 1.0)
    W = graph.matrix()
    inflow1 = W.dot(np.where(linked, p / safe, 0.0))
    inflow0 = W.dot(np.where(linked, (1.0 - p) / safe, 0.0))
    e1 = (1.0 - d) * p + d * inflow1
    e0 = (1.0 - d) * (1.0 - p) + d * inflow0
    total = e0 + e1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(total > 0.0, e1 / np.where(total > 0.0, total, 1.0), prior)
    return out


def _check_spread(d: float) -> None:
    if not 0.0 <= d < 1.0:
        raise ValueError(f"spread factor must lie in [0, 1), got {d}")


# ---------------------------------------------------------------------------
# Model-file serialization and the scorer registry.
# ---------------------------------------------------------------------------

def save_key_values(path, kv: dict[str, float]) -> None:
    """Write a ``name<TAB>value`` model file."""
    with open(path, "w", encoding="utf-8") as fh:
        for name, value in kv.items():
            fh.write(f"{name}\t{value!r}\n")


def load_key_values(path) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            name, value = line.split("\t")
            out[name] = float(value)
    return out


def make_scorer(
    rc: str,
    graph: CallGraph,
    prior: float,
    reference: CdrnReference | None = None,
    model: NlbModel | None = None,
    spread_factor: float = 0.5,
) -> Callable[[np.ndarray], np.ndarray]:
    """Build the vectorized one-pass scorer ``p -> p_new`` for a classifier.

    CDRN and NLB require their pre-trained reference/model; omitting one is
    a configuration error.
    """
    if rc == "wvrn":
        return lambda p: _wvrn_all(graph, p, prior)
    if rc == "cdrn":
        if reference is None:
            raise ValueError("cdrn requires a pre-trained CdrnReference")
        return lambda p: _cdrn_all(graph, p, prior, reference)
    if rc == "nlb":
        if model is None:
            raise ValueError("nlb requires a pre-trained NlbModel")
        return lambda p: nlb_scores(model, _nlb_features_all(graph, p))
    if rc == "spa_rc":
        _check_spread(spread_factor)
        return lambda p: _spa_all(graph, p, prior, spread_factor)
    raise ValueError(f"unknown relational classifier {rc!r}; expected one of {RC_NAMES}")
