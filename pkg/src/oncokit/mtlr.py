"""Multi-task logistic regression over discretized time, and its neural
extension.

Time is cut at boundaries 0 < tau_1 < ... < tau_m (event-time quantiles by
default, with the last boundary pushed to the data maximum). A subject's
outcome is encoded as the monotone binary sequence y_j = [dead by tau_j];
the k-th admissible sequence has k leading zeros, so there are m+1 of them
and the sequence score is the suffix sum

    f(x, k) = sum_{j > k} (theta_j . x + b_j),     f(x, m) = 0.

An uncensored subject contributes -f(x, k) + log Z with Z the sum of
exponentiated scores over all m+1 sequences. A subject censored at time c
is marginalized: its numerator sums exp f over every sequence consistent
with being alive at c (all k with at least as many leading zeros as there
are boundaries at or before c).
Log-sum-exps are max-subtracted; masked-out sequences get a -1e30 offset,
which underflows to an exact zero weight in 64-bit.

The smoothness penalty C/2 * sum ||theta_j||^2 is part of the objective.
Fitting runs full-batch AdamW under the shared warm-restart cosine
schedule until the gradient norm drops below 1e-6 (or the iteration cap),
and is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tape, Tensor, backward, logsumexp, matmul, relu, transpose, trunc_normal, tsum, zeros
from .ehr import Cohort
from .errors import ContractError
from .metrics import concordance_detail
from .optim import OptimState, adamw_step, cosine_lr

_MASK_OFF = -1e30


@dataclass
class SurvivalCurve:
    times: np.ndarray        # starts at 0
    survival: np.ndarray     # starts at 1, nonincreasing, within [0, 1]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.survival = np.asarray(self.survival, dtype=np.float64)
        if self.survival[0] > 1.0 + 1e-12:
            raise ContractError("survival curve must start at or below 1")
        if np.any(np.diff(self.survival) > 1e-12):
            raise ContractError("survival curve must be nonincreasing")


@dataclass
class MtlrModel:
    boundaries: np.ndarray           # (m,), strictly increasing, > 0
    theta: np.ndarray                # (m, p)
    bias: np.ndarray                 # (m,)
    smoothing: float                 # C
    feature_names: list[str] = field(default_factory=list)
    iterations: int = 0
    final_grad_norm: float = 0.0


def time_grid(times, events, m: int | None = None) -> np.ndarray:
    """Event-time quantile boundaries; defaults to m = ceil(sqrt(#events)).

    The last boundary is forced to the maximum observed time so every
    subject's outcome lies on the grid. Duplicate quantiles collapse.
    """
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    event_times = times[events == 1]
    if event_times.size == 0:
        raise ContractError("cannot build a time grid without any events")
    if m is None:
        m = int(np.ceil(np.sqrt(event_times.size)))
    m = max(1, m)
    qs = np.quantile(event_times, np.arange(1, m + 1) / m)
    qs[-1] = times.max()
    grid = np.unique(qs)
    if grid[0] <= 0:
        raise ContractError("time grid boundaries must be positive")
    return grid


def _suffix_matrix(m: int) -> np.ndarray:
    """A[k, j] = 1 when boundary column j belongs to sequence k's suffix."""
    a = np.zeros((m + 1, m))
    for k in range(m + 1):
        a[k, k:] = 1.0
    return a


def event_interval(boundaries: np.ndarray, t: float) -> int:
    """Number of boundaries strictly before an event at time t."""
    k = int(np.searchsorted(boundaries, t, side="left"))
    if t > boundaries[-1]:
        raise ContractError(
            f"event time {t} lies beyond the last boundary {boundaries[-1]}")
    return k


def censor_interval(boundaries: np.ndarray, c: float) -> int:
    """Number of boundaries at or before a censoring time c."""
    return int(np.searchsorted(boundaries, c, side="right"))


def _admissible_offsets(boundaries, times, events) -> np.ndarray:
    """(n, m+1) additive mask: 0 where a sequence is consistent, -1e30 not."""
    m = boundaries.shape[0]
    n = times.shape[0]
    offs = np.full((n, m + 1), _MASK_OFF)
    for i in range(n):
        if events[i] == 1:
            offs[i, event_interval(boundaries, times[i])] = 0.0
        else:
            offs[i, censor_interval(boundaries, times[i]):] = 0.0
    return offs


def mtlr_nll_from_scores(scores: Tensor, boundaries, times, events) -> Tensor:
    """Negative log-likelihood given per-boundary scores G (n, m).

    This is the piece shared by the linear model, the neural front end and
    any head producing boundary scores; it is differentiable through
    ``scores``.
    """
    boundaries = np.asarray(boundaries, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    events = np.asarray(events)
    m = boundaries.shape[0]
    if scores.shape != (times.shape[0], m):
        raise ContractError(
            f"scores shape {scores.shape} does not match (n, m) = "
            f"({times.shape[0]}, {m})")
    suffix = Tensor(_suffix_matrix(m))
    f = matmul(scores, transpose(suffix, (1, 0)))          # (n, m+1)
    offs = Tensor(_admissible_offsets(boundaries, times, events))
    return tsum(logsumexp(f, axis=1) - logsumexp(f + offs, axis=1))


def _linear_scores(theta: Tensor, bias: Tensor, x: np.ndarray) -> Tensor:
    return matmul(Tensor(x), transpose(theta, (1, 0))) + bias


def mtlr_objective(theta: Tensor, bias: Tensor, cohort_x, boundaries, times,
                   events, smoothing: float) -> Tensor:
    nll = mtlr_nll_from_scores(_linear_scores(theta, bias, cohort_x),
                               boundaries, times, events)
    if smoothing != 0.0:
        nll = nll + (smoothing / 2.0) * tsum(theta * theta)
    return nll


def mtlr_loss(model: MtlrModel, cohort: Cohort) -> float:
    """Objective value at the model's parameters (regularizer included)."""
    obj = mtlr_objective(Tensor(model.theta), Tensor(model.bias),
                         cohort.covariate_matrix(), model.boundaries,
                         cohort.times(), cohort.events(), model.smoothing)
    return float(obj.data)


def mtlr_loss_and_grads(model: MtlrModel, cohort: Cohort):
    theta = Tensor(model.theta, requires_grad=True)
    bias = Tensor(model.bias, requires_grad=True)
    with Tape() as tape:
        obj = mtlr_objective(theta, bias, cohort.covariate_matrix(),
                             model.boundaries, cohort.times(), cohort.events(),
                             model.smoothing)
    grads = backward(tape, obj)
    return float(obj.data), grads[theta].data, grads[bias].data


@dataclass
class FitConfig:
    iterations: int = 2000
    base_lr: float = 0.05
    floor_lr: float = 1e-5
    period: int = 50
    grad_tol: float = 1e-6
    weight_decay: float = 0.0
    seed: int = 0


def _fit_params(param_init: dict[str, Tensor], loss_fn, cfg: FitConfig):
    """Full-batch AdamW loop shared by the linear and neural fits."""
    params = dict(param_init)
    state = OptimState(base_lr=cfg.base_lr, weight_decay=cfg.weight_decay,
                       period=cfg.period, floor_lr=cfg.floor_lr)
    grad_norm = np.inf
    iterations = 0
    for step in range(cfg.iterations):
        with Tape() as tape:
            loss = loss_fn(params)
        grads = backward(tape, loss)
        gmap = {name: grads[p].data for name, p in params.items()}
        grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in gmap.values())))
        iterations = step
        if grad_norm <= cfg.grad_tol:
            break
        params = adamw_step(params, gmap, state, lr=cosine_lr(step, state))
    return params, iterations, grad_norm


def mtlr_fit(cohort: Cohort, m: int | None = None, smoothing: float = 1.0,
             config: FitConfig | None = None) -> MtlrModel:
    cfg = config or FitConfig()
    boundaries = time_grid(cohort.times(), cohort.events(), m)
    x = cohort.covariate_matrix()
    times = cohort.times()
    events = cohort.events()
    n_bounds = boundaries.shape[0]
    p = x.shape[1]
    init = {
        "theta": zeros((n_bounds, p), requires_grad=True),
        "bias": zeros((n_bounds,), requires_grad=True),
    }

    def loss_fn(params):
        return mtlr_objective(params["theta"], params["bias"], x, boundaries,
                              times, events, smoothing)

    params, iterations, grad_norm = _fit_params(init, loss_fn, cfg)
    return MtlrModel(boundaries, params["theta"].data.copy(),
                     params["bias"].data.copy(), smoothing,
                     list(cohort.feature_names), iterations, grad_norm)


# ----------------------------------------------------------------- inference

def _interval_probabilities(scores_row: np.ndarray) -> np.ndarray:
    """softmax over the m+1 sequence scores for one subject."""
    m = scores_row.shape[0]
    f = _suffix_matrix(m) @ scores_row
    f = f - f.max()
    e = np.exp(f)
    return e / e.sum()


def mtlr_survival(model: MtlrModel, covariates) -> SurvivalCurve:
    """Survival probabilities at the grid boundaries (prefixed with S(0)=1).

    S(tau_j) sums the probability mass of every sequence that is still
    alive at tau_j, i.e. death regions j..m.
    """
    x = np.asarray(covariates, dtype=np.float64)
    if x.shape != (model.theta.shape[1],):
        raise ContractError(
            f"covariate width {x.shape} != model width ({model.theta.shape[1]},)")
    g = model.theta @ x + model.bias
    probs = _interval_probabilities(g)
    m = model.boundaries.shape[0]
    surv = np.array([probs[j:].sum() for j in range(1, m + 1)])
    times = np.concatenate([[0.0], model.boundaries])
    return SurvivalCurve(times, np.concatenate([[1.0], np.clip(surv, 0.0, 1.0)]))


def mtlr_risk(model: MtlrModel, covariates) -> float:
    """Scalar risk: cumulative incidence mass sum_j (1 - S(tau_j)).

    Monotone under shifting probability mass to earlier intervals, bounded
    by the grid size, and higher for earlier expected events.
    """
    curve = mtlr_survival(model, covariates)
    return float((1.0 - curve.survival[1:]).sum())


def mtlr_cohort_risks(model: MtlrModel, cohort: Cohort) -> np.ndarray:
    return np.array([mtlr_risk(model, s.covariates) for s in cohort.subjects])


def mtlr_c_index(model: MtlrModel, cohort: Cohort):
    risks = mtlr_cohort_risks(model, cohort)
    return concordance_detail(cohort.times(), risks, cohort.events(),
                              orientation="hazard")


# ----------------------------------------------------------------- neural

@dataclass
class NMtlrModel:
    boundaries: np.ndarray
    hidden_widths: tuple[int, ...]
    mlp_params: dict[str, np.ndarray]
    theta: np.ndarray
    bias: np.ndarray
    smoothing: float
    feature_names: list[str] = field(default_factory=list)
    iterations: int = 0
    final_grad_norm: float = 0.0

    def features(self, x: np.ndarray) -> np.ndarray:
        h = x
        for i in range(len(self.hidden_widths)):
            h = h @ self.mlp_params[f"mlp.{i}.w"] + self.mlp_params[f"mlp.{i}.b"]
            h = np.maximum(h, 0.0)
        return h


def _mlp_forward(params: dict[str, Tensor], x: Tensor, depth: int) -> Tensor:
    h = x
    for i in range(depth):
        h = relu(matmul(h, params[f"mlp.{i}.w"]) + params[f"mlp.{i}.b"])
    return h


def nmtlr_fit(cohort: Cohort, hidden_widths=(16,), m: int | None = None,
              smoothing: float = 1.0, config: FitConfig | None = None) -> NMtlrModel:
    """MTLR head on top of a relu MLP, trained end to end.

    An empty ``hidden_widths`` makes the front end the identity, which
    reproduces the linear fit exactly (same objective, same optimizer
    trajectory).
    """
    cfg = config or FitConfig()
    boundaries = time_grid(cohort.times(), cohort.events(), m)
    x = cohort.covariate_matrix()
    times = cohort.times()
    events = cohort.events()
    n_bounds = boundaries.shape[0]
    hidden_widths = tuple(int(wd) for wd in hidden_widths)

    rng = np.random.default_rng(cfg.seed)
    init: dict[str, Tensor] = {}
    width = x.shape[1]
    for i, wd in enumerate(hidden_widths):
        init[f"mlp.{i}.w"] = trunc_normal(rng, (width, wd), std=1.0 / np.sqrt(width))
        init[f"mlp.{i}.b"] = zeros((wd,), requires_grad=True)
        width = wd
    init["theta"] = zeros((n_bounds, width), requires_grad=True)
    init["bias"] = zeros((n_bounds,), requires_grad=True)
    depth = len(hidden_widths)
    xt = Tensor(x)

    def loss_fn(params):
        feats = _mlp_forward(params, xt, depth)
        scores = matmul(feats, transpose(params["theta"], (1, 0))) + params["bias"]
        nll = mtlr_nll_from_scores(scores, boundaries, times, events)
        if smoothing != 0.0:
            nll = nll + (smoothing / 2.0) * tsum(params["theta"] * params["theta"])
        return nll

    params, iterations, grad_norm = _fit_params(init, loss_fn, cfg)
    mlp = {name: t.data.copy() for name, t in params.items() if name.startswith("mlp.")}
    return NMtlrModel(boundaries, hidden_widths, mlp, params["theta"].data.copy(),
                      params["bias"].data.copy(), smoothing,
                      list(cohort.feature_names), iterations, grad_norm)


def nmtlr_risk(model: NMtlrModel, covariates) -> float:
    x = np.asarray(covariates, dtype=np.float64)
    feats = model.features(x)
    head = MtlrModel(model.boundaries, model.theta, model.bias, model.smoothing)
    return mtlr_risk(head, feats)


def nmtlr_survival(model: NMtlrModel, covariates) -> SurvivalCurve:
    x = np.asarray(covariates, dtype=np.float64)
    feats = model.features(x)
    head = MtlrModel(model.boundaries, model.theta, model.bias, model.smoothing)
    return mtlr_survival(head, feats)


def nmtlr_cohort_risks(model: NMtlrModel, cohort: Cohort) -> np.ndarray:
    return np.array([nmtlr_risk(model, s.covariates) for s in cohort.subjects])


# ----------------------------------------------------------------- storage

def save_mtlr(model: MtlrModel, path) -> None:
    payload = {
        "type": "mtlr",
        "boundaries": [float(v) for v in model.boundaries],
        "theta": [[float(v) for v in row] for row in model.theta],
        "bias": [float(v) for v in model.bias],
        "smoothing": model.smoothing,
        "feature_names": model.feature_names,
    }
    Path(path).write_text(json.dumps(payload, indent=2))


def load_mtlr(path) -> MtlrModel:
    obj = json.loads(Path(path).read_text())
    if obj.get("type") != "mtlr":
        raise ContractError(f"{path} does not hold an mtlr model")
    return MtlrModel(np.array(obj["boundaries"]), np.array(obj["theta"]),
                     np.array(obj["bias"]), float(obj["smoothing"]),
                     list(obj["feature_names"]))
