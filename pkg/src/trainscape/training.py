"""Training loop, two-rate Adam, and the convergence measure.

A training run is a pure function of (model config, run config, data): the
parameter draw, the batch schedule, and every update are seeded, and BLAS
is pinned to one thread for the duration of the run so the float stream is
identical no matter how runs are packed onto processes.

Losses are normalized against the first recorded loss and capped at M:
    l_i = min(raw_i / raw_1, M),   non-finite entries -> M.
Convergence asks three things of the normalized trace, using windows of
max(1, floor(window_frac * N)) steps at each end:
    mean(recent) < C
    mean(early) - mean(recent) >= drop
    population variance(recent) < var_threshold

The scalar summary mu compares the trace's area S = sum(l_i) against the
area A3 = 1 + (N-1)*C of a trace that starts at 1 and sits exactly at the
convergence cutoff afterwards:
    converged and S <= A3:   mu = +sqrt((A3 - S) / ((N-1)*C))
    otherwise:               mu = -sqrt((S - A3) / (1 + (N-1)*(M - C)))
clamped to [-1, 1]. Positive mu means faster-than-cutoff convergence,
negative mu grades how badly a run diverged; an immediate plunge to zero
loss scores exactly +1 and a trace pinned at M scores -1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .dataio import SequenceSet, make_batches
from .diffcore import Record, Tensor, backward
from .errors import ConfigError
from .model import (
    ATTENTION_GROUP,
    FC_GROUP,
    ModelConfig,
    TransformerParams,
    batch_loss,
    init_params,
)

__all__ = [
    "TrainRunConfig",
    "LossTrace",
    "ConvergenceReport",
    "AdamState",
    "partition_params",
    "adam_step",
    "fit",
    "train_run",
    "normalize_losses",
    "check_convergence",
    "convergence_measure",
    "evaluate_run",
]

MIN_TRACE_FOR_CRITERION = 20


@dataclass(frozen=True)
class TrainRunConfig:
    """One training run: the two learning rates plus loop and criterion
    settings. eta_att drives the attention group, eta_fc everything else."""

    eta_att: float = 1e-3
    eta_fc: float = 1e-3
    n_steps: int = 2000
    batch_size: int = 256
    seed: int = 0
    cutoff: float = 0.4           # C, normalized-loss level that counts as converged
    drop: float = 0.1             # required fall from the early to the recent window
    var_threshold: float = 0.01   # recent-window variance ceiling
    window_frac: float = 0.05     # fraction of the trace in each window
    max_loss: float = 10.0        # M, cap for normalized losses
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.eta_att < 0.0 or self.eta_fc < 0.0:
            raise ConfigError(f"learning rates must be non-negative, got {self.eta_att} and {self.eta_fc}")
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be positive, got {self.n_steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not (0.0 < self.cutoff):
            raise ConfigError(f"cutoff must be positive, got {self.cutoff}")
        if not (self.max_loss > self.cutoff):
            raise ConfigError(f"max_loss ({self.max_loss}) must exceed cutoff ({self.cutoff})")
        if self.drop < 0.0:
            raise ConfigError(f"drop must be non-negative, got {self.drop}")
        if not (0.0 < self.var_threshold):
            raise ConfigError(f"var_threshold must be positive, got {self.var_threshold}")
        if not (0.0 < self.window_frac <= 0.5):
            raise ConfigError(f"window_frac must lie in (0, 0.5], got {self.window_frac}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError(f"betas must lie in (0, 1), got {self.beta1} and {self.beta2}")
        if not (self.adam_eps > 0.0):
            raise ConfigError(f"adam_eps must be positive, got {self.adam_eps}")


@dataclass
class LossTrace:
    """Raw and normalized per-step losses for one run.

    When a step produces a non-finite loss the run halts; remaining raw
    entries stay NaN and the normalized trace is padded with max_loss, so
    both arrays always have length n_steps.
    """

    raw: np.ndarray
    normalized: np.ndarray
    diverged_at: int | None = None

    @classmethod
    def from_raw(cls, raw: np.ndarray, max_loss: float, diverged_at: int | None = None) -> "LossTrace":
        raw = np.asarray(raw, dtype=np.float64)
        return cls(raw=raw, normalized=normalize_losses(raw, max_loss), diverged_at=diverged_at)

    def __len__(self) -> int:
        return int(self.raw.size)


@dataclass(frozen=True)
class ConvergenceReport:
    """Verdict and diagnostics for one finished trace."""

    converged: bool
    mu: float
    early_mean: float
    recent_mean: float
    recent_variance: float


def normalize_losses(raw: np.ndarray, max_loss: float) -> np.ndarray:
    """l_i = min(raw_i / raw_1, max_loss); non-finite ratios become
    max_loss. Output entries always lie in [0, max_loss]."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ConfigError("cannot normalize an empty loss trace")
    first = raw.flat[0]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = raw / first
    out = np.where(np.isfinite(ratio), ratio, max_loss)
    return np.clip(out, 0.0, max_loss)


def partition_params(params: TransformerParams) -> tuple[dict[str, Tensor], dict[str, Tensor]]:
    """Split leaves into (attention group, fc group). Every leaf must carry
    one of the two known tags; together the groups cover all leaves."""
    attention: dict[str, Tensor] = {}
    fc: dict[str, Tensor] = {}
    for name, tensor in params.leaves.items():
        group = params.groups.get(name)
        if group == ATTENTION_GROUP:
            attention[name] = tensor
        elif group == FC_GROUP:
            fc[name] = tensor
        else:
            raise ConfigError(f"parameter {name!r} has unknown group tag {group!r}")
    return attention, fc


@dataclass
class AdamState:
    """First/second moment estimates per leaf, the shared step counter,
    and the moment hyperparameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int
    beta1: float
    beta2: float
    eps: float

    @classmethod
    def initial(cls, params: TransformerParams, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(
            m={name: np.zeros_like(t.data) for name, t in params.leaves.items()},
            v={name: np.zeros_like(t.data) for name, t in params.leaves.items()},
            t=0,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(
    params: TransformerParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    eta_att: float,
    eta_fc: float,
) -> tuple[TransformerParams, AdamState]:
    """One Adam update with bias correction:

        m <- b1*m + (1-b1)*g          v <- b2*v + (1-b2)*g^2
        m_hat = m/(1-b1^t)            v_hat = v/(1-b2^t)
        w <- w - eta * m_hat / (sqrt(v_hat) + eps)

    eta is eta_att for attention-group leaves and eta_fc for the rest.
    Inputs are left untouched; fresh parameter and state maps come back.
    Non-finite gradients are carried through arithmetic unchanged, the
    loss check in the training loop is what stops a diverged run.
    """
    partition_params(params)  # validates the tags
    t = state.t + 1
    correct1 = 1.0 - state.beta1 ** t
    correct2 = 1.0 - state.beta2 ** t
    new_values: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, tensor in params.leaves.items():
        g = grads[name]
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        eta = eta_att if params.groups[name] == ATTENTION_GROUP else eta_fc
        step = eta * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
        new_values[name] = tensor.data - step
        new_m[name] = m
        new_v[name] = v
    return (
        params.with_values(new_values),
        AdamState(m=new_m, v=new_v, t=t, beta1=state.beta1, beta2=state.beta2, eps=state.eps),
    )


def fit(
    model_config: ModelConfig,
    run_config: TrainRunConfig,
    data: SequenceSet,
) -> tuple[TransformerParams, LossTrace]:
    """Train from a fresh initialization; returns final parameters and the
    full loss trace. Halts early on the first non-finite loss, padding the
    trace; BLAS is held to one thread so results do not depend on how many
    sibling runs share the machine."""
    model_config.validate()
    run_config.validate()
    if data.window != model_config.context_len + 1:
        raise ConfigError(
            f"data window {data.window} must equal context_len + 1 = {model_config.context_len + 1}"
        )
    if data.vocab_size != model_config.vocab_size:
        raise ConfigError(
            f"data vocabulary size {data.vocab_size} does not match model vocab_size {model_config.vocab_size}"
        )
    raw = np.full(run_config.n_steps, np.nan)
    diverged_at = None
    with threadpool_limits(limits=1):
        params = init_params(model_config)
        state = AdamState.initial(params, run_config.beta1, run_config.beta2, run_config.adam_eps)
        batches = make_batches(data, run_config.batch_size, run_config.seed, run_config.n_steps)
        for step, batch in enumerate(batches):
            inputs, targets = batch[:, :-1], batch[:, 1:]
            with Record() as rec:
                loss = batch_loss(params, inputs, targets, model_config)
            value = loss.item()
            raw[step] = value
            if not math.isfinite(value):
                diverged_at = step
                break
            grads = backward(rec, loss, params.leaves)
            params, state = adam_step(params, grads, state, run_config.eta_att, run_config.eta_fc)
    return params, LossTrace.from_raw(raw, run_config.max_loss, diverged_at)


def train_run(model_config: ModelConfig, run_config: TrainRunConfig, data: SequenceSet) -> LossTrace:
    """Train and return only the loss trace (see fit)."""
    _, trace = fit(model_config, run_config, data)
    return trace


def _window(n: int, frac: float) -> int:
    return max(1, int(math.floor(frac * n)))


def check_convergence(trace: LossTrace, config: TrainRunConfig) -> tuple[bool, float, float, float]:
    """Apply the three-part criterion to a normalized trace.

    Returns (converged, early_mean, recent_mean, recent_variance). The
    trace must hold at least 20 steps for the end windows to mean anything.
    """
    losses = trace.normalized
    n = losses.size
    if n < MIN_TRACE_FOR_CRITERION:
        raise ConfigError(f"convergence needs a trace of at least {MIN_TRACE_FOR_CRITERION} steps, got {n}")
    w = _window(n, config.window_frac)
    early_mean = float(losses[:w].mean())
    recent = losses[-w:]
    recent_mean = float(recent.mean())
    recent_variance = float(recent.var())  # population variance
    converged = (
        recent_mean < config.cutoff
        and early_mean - recent_mean >= config.drop
        and recent_variance < config.var_threshold
    )
    return converged, early_mean, recent_mean, recent_variance


def convergence_measure(trace: LossTrace, converged: bool, cutoff: float, max_loss: float) -> float:
    """Map a trace to mu in [-1, 1] (see the module docstring for the
    formula). The square root argument is floored at zero so a
    not-converged trace whose area still beats the cutoff line grades 0.
    """
    losses = trace.normalized
    n = losses.size
    if n < 2:
        raise ConfigError(f"convergence measure needs at least 2 steps, got {n}")
    if not (max_loss > cutoff > 0.0):
        raise ConfigError(f"need max_loss > cutoff > 0, got {max_loss} and {cutoff}")
    area = float(losses.sum())
    cutoff_area = (n - 1) * cutoff
    # excess = S - A3, written so that area == 1 gives exactly -cutoff_area
    excess = (area - 1.0) - cutoff_area
    if converged and excess <= 0.0:
        mu = math.sqrt(-excess / cutoff_area)
    else:
        mu = -math.sqrt(max(excess, 0.0) / (1.0 + (n - 1) * (max_loss - cutoff)))
    return min(1.0, max(-1.0, mu)) + 0.0


def evaluate_run(trace: LossTrace, config: TrainRunConfig) -> ConvergenceReport:
    """Criterion plus measure in one report."""
    converged, early_mean, recent_mean, recent_variance = check_convergence(trace, config)
    mu = convergence_measure(trace, converged, config.cutoff, config.max_loss)
    return ConvergenceReport(
        converged=converged,
        mu=mu,
        early_mean=early_mean,
        recent_mean=recent_mean,
        recent_variance=recent_variance,
    )
