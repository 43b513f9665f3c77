"""Desk-scale preference optimization on tabular softmax policies.

A policy is a finite (prompt, response) logit table; preferences come from
instances pairing a reference response with one negative per active
dimension.  Three optimizers share the same per-dimension losses:

* ``multi_neg`` -- plain descent on the uniform average of the
  per-dimension losses;
* ``lag_dpo`` -- tolerance-constrained optimization: each dimension's loss
  gets a Lagrange multiplier grown by dual ascent while the loss exceeds
  its margin, and the primal step descends the reweighted sum;
* ``pcgrad`` -- gradient surgery: conflicting per-dimension gradients are
  projected onto each other's normal plane before summing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import DIMENSIONS
from .params import log1pexp, sigmoid

ALGOS = ("lag_dpo", "multi_neg", "pcgrad")
UPDATE_RULES = ("signed", "monotone")


class TrainError(RuntimeError):
    """Raised when training encounters a non-finite loss."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

class TabularPolicy:
    """Softmax policy over a finite response table.

    ``candidates`` maps each prompt to its response tuple (at least two);
    logits are stored flat in prompt-major order.
    """

    def __init__(self, candidates: dict, logits: np.ndarray | None = None):
        self.prompts = tuple(sorted(candidates))
        self.candidates = {p: tuple(candidates[p]) for p in self.prompts}
        index = {}
        offset = 0
        self._slices = {}
        for p in self.prompts:
            cands = self.candidates[p]
            if len(cands) < 2:
                raise ValueError(f"prompt {p!r} has fewer than two candidates")
            if len(set(cands)) != len(cands):
                raise ValueError(f"prompt {p!r} has duplicate candidates")
            for r in cands:
                index[(p, r)] = offset
                offset += 1
            self._slices[p] = slice(offset - len(cands), offset)
        self._index = index
        if logits is None:
            logits = np.zeros(offset)
        logits = np.asarray(logits, dtype=float)
        if logits.shape != (offset,):
            raise ValueError("logits length does not match the response table")
        self.logits = logits

    @classmethod
    def uniform_from_items(cls, items) -> "TabularPolicy":
        """Zero-logit policy whose table covers every response the items
        mention."""
        candidates: dict[str, list] = {}
        for inst in items:
            seen = candidates.setdefault(inst.question, [])
            for resp in (inst.reference, *[inst.negatives[d] for d in sorted(inst.negatives)]):
                if resp not in seen:
                    seen.append(resp)
        return cls({p: tuple(v) for p, v in candidates.items()})

    def flat_index(self, prompt: str, response: str) -> int:
        try:
            return self._index[(prompt, response)]
        except KeyError:
            raise KeyError(f"unregistered pair ({prompt!r}, {response!r})") from None

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(self.candidates, self.logits.copy())

    def freeze(self) -> "ReferencePolicy":
        return ReferencePolicy(self)

    def log_probs(self, prompt: str) -> dict:
        """Log softmax over one prompt's candidates."""
        if prompt not in self._slices:
            raise KeyError(f"unknown prompt {prompt!r}")
        block = self.logits[self._slices[prompt]]
        lse = _logsumexp(block)
        return {
            r: float(z - lse)
            for r, z in zip(self.candidates[prompt], block)
        }


class ReferencePolicy(TabularPolicy):
    """Frozen copy of a policy; its logits are write-protected."""

    def __init__(self, policy: TabularPolicy):
        super().__init__(policy.candidates, policy.logits.copy())
        self.logits.setflags(write=False)


def _logsumexp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + float(np.log(np.sum(np.exp(z - m))))


def log_prob(policy: TabularPolicy, prompt: str, response: str) -> float:
    """Log softmax probability of one registered (prompt, response) pair."""
    policy.flat_index(prompt, response)  # raises for unregistered pairs
    return policy.log_probs(prompt)[response]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def dpo_pair_loss(
    policy: TabularPolicy,
    ref: TabularPolicy,
    prompt: str,
    chosen: str,
    rejected: str,
    beta: float,
) -> float:
    """-log sigmoid(beta * (policy-vs-reference log-ratio margin))."""
    d_chosen = log_prob(policy, prompt, chosen) - log_prob(ref, prompt, chosen)
    d_rejected = log_prob(policy, prompt, rejected) - log_prob(ref, prompt, rejected)
    margin = beta * (d_chosen - d_rejected)
    return float(log1pexp(-margin))


def per_dim_loss(policy, ref, batch, dimension: str, beta: float) -> float:
    """Mean pair loss over the batch using each item's negative for
    ``dimension``; every item must carry one."""
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    for inst in batch:
        if dimension not in inst.negatives:
            raise ValueError(
                f"item {inst.id!r} has no negative for dimension {dimension!r}"
            )
    margins = _margins(policy, ref, batch, dimension, beta)
    return float(np.mean(log1pexp(-margins)))


def standard_multineg_loss(policy, ref, batch, dims, beta: float) -> float:
    """Uniform average of the per-dimension losses."""
    dims = tuple(dims)
    if not dims:
        raise ValueError("dims must be non-empty")
    return float(
        np.mean([per_dim_loss(policy, ref, batch, d, beta) for d in dims])
    )


def _margins(policy, ref, batch, dimension, beta) -> np.ndarray:
    ci = np.array([policy.flat_index(i.question, i.reference) for i in batch])
    ni = np.array(
        [policy.flat_index(i.question, i.negatives[dimension]) for i in batch]
    )
    # within one prompt the softmax normalizers cancel out of the margin
    dz_policy = policy.logits[ci] - policy.logits[ni]
    dz_ref = ref.logits[ci] - ref.logits[ni]
    return beta * (dz_policy - dz_ref)


def per_dim_gradient(policy, ref, batch, dimension: str, beta: float) -> np.ndarray:
    """Analytic gradient of :func:`per_dim_loss` w.r.t. the policy logits."""
    batch = list(batch)
    if not batch:
        raise ValueError("empty batch")
    margins = _margins(policy, ref, batch, dimension, beta)
    weight = -beta * sigmoid(-margins) / len(batch)
    grad = np.zeros_like(policy.logits)
    ci = np.array([policy.flat_index(i.question, i.reference) for i in batch])
    ni = np.array(
        [policy.flat_index(i.question, i.negatives[dimension]) for i in batch]
    )
    np.add.at(grad, ci, weight)
    np.add.at(grad, ni, -weight)
    return grad


def per_dim_gradients(policy, ref, items, dims, beta: float) -> dict:
    """Per-dimension full-dataset gradients, each over the items carrying
    that dimension."""
    out = {}
    for d in dims:
        sub = [i for i in items if d in i.active_dims]
        if not sub:
            raise ValueError(f"no items carry dimension {d!r}")
        out[d] = per_dim_gradient(policy, ref, sub, d, beta)
    return out


# ---------------------------------------------------------------------------
# Dual state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DualState:
    """Per-dimension Lagrange multipliers with their tolerance margins."""

    lambdas: dict
    epsilon: dict
    eta_lambda: float = 0.01
    lambda_max: float = 10.0
    update_rule: str = "signed"

    def __post_init__(self):
        if set(self.lambdas) != set(self.epsilon):
            raise ValueError("lambdas and epsilon must share dimensions")
        if self.eta_lambda < 0:
            raise ValueError("eta_lambda must be >= 0")
        if self.lambda_max <= 0:
            raise ValueError("lambda_max must be > 0")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"unknown update_rule {self.update_rule!r}")
        for d, lam in self.lambdas.items():
            if not 0 <= lam <= self.lambda_max:
                raise ValueError(f"lambda[{d}]={lam} outside [0, lambda_max]")

    @classmethod
    def default(
        cls,
        dims,
        epsilon: float = 0.5,
        eta_lambda: float = 0.01,
        lambda_max: float = 10.0,
        update_rule: str = "signed",
    ) -> "DualState":
        dims = tuple(dims)
        return cls(
            lambdas={d: 0.0 for d in dims},
            epsilon={d: float(epsilon) for d in dims},
            eta_lambda=eta_lambda,
            lambda_max=lambda_max,
            update_rule=update_rule,
        )


def dual_update(dual: DualState, losses: dict) -> DualState:
    """One dual-ascent step on the multipliers.

    The signed rule moves by eta * (L - eps) in either direction; the
    monotone rule only ever increases, by eta * max(0, L - eps).  Both are
    clamped to [0, lambda_max].  Dimensions whose loss is NaN (absent from
    the batch) keep their multiplier.
    """
    if set(losses) != set(dual.lambdas):
        raise ValueError("loss dimensions do not match the dual state")
    new = {}
    for d, lam in dual.lambdas.items():
        loss = losses[d]
        if np.isnan(loss):
            new[d] = lam
            continue
        gap = loss - dual.epsilon[d]
        if dual.update_rule == "signed":
            lam = lam + dual.eta_lambda * gap
        else:
            lam = lam + dual.eta_lambda * max(0.0, gap)
        new[d] = float(min(dual.lambda_max, max(0.0, lam)))
    return replace(dual, lambdas=new)


def lagrangian_objective(per_dim_losses: dict, dual: DualState) -> float:
    """sum_d (1 + lambda_d) L_d - sum_d lambda_d eps_d.

    The subtracted term does not enter the primal gradient but makes the
    value the correct dual function for the ascent step.
    """
    if set(per_dim_losses) != set(dual.lambdas):
        raise ValueError("loss dimensions do not match the dual state")
    total = 0.0
    for d, loss in per_dim_losses.items():
        total += (1.0 + dual.lambdas[d]) * loss - dual.lambdas[d] * dual.epsilon[d]
    return float(total)


# ---------------------------------------------------------------------------
# Gradient surgery
# ---------------------------------------------------------------------------

def pcgrad_combine(gradients, seed=0) -> np.ndarray:
    """Project each gradient out of conflict with the others, then sum.

    For each gradient, the others are visited in random order; whenever the
    inner product with another original gradient is negative, the
    conflicting component is removed.  Zero-norm counterparts are skipped.
    """
    originals = [np.asarray(g, dtype=float) for g in gradients]
    if not originals:
        raise ValueError("need at least one gradient")
    rng = (
        seed
        if isinstance(seed, np.random.Generator)
        else np.random.default_rng(seed)
    )
    surgered = []
    for i, g in enumerate(originals):
        gi = g.copy()
        others = [j for j in range(len(originals)) if j != i]
        if len(others) > 1:
            others = list(rng.permutation(others))
        for j in others:
            gj = originals[j]
            denom = float(gj @ gj)
            if denom == 0.0:
                continue
            dot = float(gi @ gj)
            if dot < 0:
                gi = gi - (dot / denom) * gj
        surgered.append(gi)
    return np.sum(surgered, axis=0)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    algo: str
    steps: int
    beta: float = 0.1
    primal_lr: float = 0.05
    batch_size: int | None = None
    seed: int = 0
    dual_loss_ema: float | None = None
    record_logits: bool = False

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"unknown algo {self.algo!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.primal_lr <= 0:
            raise ValueError("primal_lr must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.dual_loss_ema is not None and not 0 < self.dual_loss_ema <= 1:
            raise ValueError("dual_loss_ema must be in (0, 1]")


@dataclass(frozen=True)
class StepRecord:
    step: int
    losses: dict
    lambdas: dict
    objective: float
    grad_norm: float
    feasible: bool
    logits: np.ndarray | None = None


@dataclass(frozen=True)
class TrainTrace:
    records: tuple
    dims: tuple
    config: TrainConfig
    dual_final: DualState
    final_logits: np.ndarray
    logit_index: tuple  # (prompt, response) per flat position

    def steps_to_feasibility(self) -> int | None:
        for rec in self.records:
            if rec.feasible:
                return rec.step
        return None


def train(dataset, config: TrainConfig, dual_init: DualState | None = None) -> TrainTrace:
    """Run one optimizer over the dataset and return its per-step trace.

    The policy starts as (and is referenced against) the uniform table over
    the dataset's responses.  Each step computes the per-dimension losses
    at the current parameters; for ``lag_dpo`` the dual update runs before
    the primal step, which then uses the updated multipliers, following the
    dual-then-primal ordering of the constrained training loop.
    Deterministic given the config seed.
    """
    items = list(dataset)
    if not items:
        raise ValueError("empty dataset")
    dims = tuple(
        d for d in DIMENSIONS if any(d in i.active_dims for i in items)
    )
    policy = TabularPolicy.uniform_from_items(items)
    ref = policy.freeze()
    if dual_init is None:
        dual_init = DualState.default(dims)
    if set(dual_init.lambdas) != set(dims):
        raise ValueError(
            f"dual state dimensions {sorted(dual_init.lambdas)} do not match "
            f"dataset dimensions {sorted(dims)}"
        )
    dual = dual_init

    by_dim = {d: [i for i in items if d in i.active_dims] for d in dims}
    rng = np.random.default_rng(config.seed)
    n = len(items)
    full_batch = config.batch_size is None or config.batch_size >= n
    ema: dict[str, float] = {}

    records = []
    for step in range(config.steps):
        if full_batch:
            batch = items
        else:
            idx = rng.choice(n, size=config.batch_size, replace=False)
            batch = [items[i] for i in sorted(idx)]

        batch_by_dim = {d: [i for i in batch if d in i.active_dims] for d in dims}
        losses = {}
        grads = {}
        for d in dims:
            sub = batch_by_dim[d]
            if sub:
                loss = per_dim_loss(policy, ref, sub, d, config.beta)
                if not np.isfinite(loss):
                    raise TrainError(step, f"non-finite loss for dimension {d}")
                losses[d] = loss
                grads[d] = per_dim_gradient(policy, ref, sub, d, config.beta)
            else:
                # dimension absent from this batch: loss recorded as NaN,
                # multiplier left untouched, no gradient contribution
                losses[d] = float("nan")
                grads[d] = np.zeros_like(policy.logits)

        if full_batch:
            full_losses = losses
        else:
            full_losses = {
                d: per_dim_loss(policy, ref, by_dim[d], d, config.beta)
                for d in dims
            }
        feasible = all(
            full_losses[d] <= dual.epsilon[d] for d in dims
        )

        if config.algo == "lag_dpo":
            dual_losses = losses
            if config.dual_loss_ema is not None:
                alpha = config.dual_loss_ema
                for d in dims:
                    if np.isnan(losses[d]):
                        continue
                    ema[d] = (
                        losses[d]
                        if d not in ema
                        else (1 - alpha) * ema[d] + alpha * losses[d]
                    )
                # a dimension absent from the batch keeps its multiplier
                # even when a smoothed estimate exists
                dual_losses = {
                    d: ema[d] if not np.isnan(losses[d]) else float("nan")
                    for d in dims
                }
            dual = dual_update(dual, dual_losses)
            grad = np.zeros_like(policy.logits)
            for d in dims:
                grad += (1.0 + dual.lambdas[d]) * grads[d]
            objective = lagrangian_objective(losses, dual)
        elif config.algo == "multi_neg":
            grad = np.zeros_like(policy.logits)
            for d in dims:
                grad += grads[d]
            grad /= len(dims)
            objective = float(np.nanmean([losses[d] for d in dims]))
        else:  # pcgrad
            grad = pcgrad_combine([grads[d] for d in dims], rng)
            objective = float(np.nanmean([losses[d] for d in dims]))

        policy.logits = policy.logits - config.primal_lr * grad

        records.append(
            StepRecord(
                step=step,
                losses=dict(losses),
                lambdas=dict(dual.lambdas),
                objective=objective,
                grad_norm=float(np.linalg.norm(grad)),
                feasible=feasible,
                logits=policy.logits.copy() if config.record_logits else None,
            )
        )

    index = tuple(
        (p, r) for p in policy.prompts for r in policy.candidates[p]
    )
    return TrainTrace(
        records=tuple(records),
        dims=dims,
        config=config,
        dual_final=dual,
        final_logits=policy.logits.copy(),
        logit_index=index,
    )
