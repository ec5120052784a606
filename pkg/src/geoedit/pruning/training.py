"""Importance-head training: soft-gated fidelity vs sparsity pressure."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .. import autodiff as ad
from ..autodiff import Adam, Rng
from ..errors import ContractError
from ..validation import as_float_array
from .attention import PrunedAttentionLayer
from .head import PruningHead
from .tokens import feature_map_to_tokens, keep_count, select_topk, tokens_to_feature_map


@dataclass(frozen=True)
class PrunerTrainConfig:
    lambda_sparsity: float = 0.1
    lr: float = 3e-3
    steps: int = 2000
    seed: int = 0
    log_every: int = 50
    mode: str = "soft-train"

    def __post_init__(self):
        if self.lambda_sparsity < 0.0:
            raise ContractError(
                f"lambda_sparsity must be >= 0, got {self.lambda_sparsity}"
            )
        if self.mode not in ("soft-train", "hard-infer"):
            raise ContractError(f"unknown mode {self.mode!r}")
        if self.steps < 1 or self.lr <= 0.0:
            raise ContractError("steps must be >= 1 and lr > 0")


def pruner_loss(x, d, layer, head, cfg):
    """Scalar training loss: value-gated output vs the frozen dense teacher.

    Hard top-k selection is not differentiable, so training gates the value
    rows by the scores instead; the sparsity term mean(S) pushes scores down
    while the fidelity term holds the gated output near the teacher's.
    Returns (loss Tensor, fidelity float, mean-score float).
    """
    x = as_float_array(x, "x")
    tokens = feature_map_to_tokens(x)
    teacher = ad.constant(layer.dense_tokens(tokens))
    t = ad.constant(tokens)
    s = head.score_tape(t, d)
    student = layer.soft_gated_tokens_tape(t, s)
    fid = ad.mse(student, teacher)
    sparsity = ad.tmean(s)
    loss = ad.add(fid, ad.scale(sparsity, cfg.lambda_sparsity))
    return loss, fid.item(), sparsity.item()


def train_pruning_head(dataset, layer, cfg=None, edit_dim=None):
    """Fit a PruningHead against a frozen attention layer.

    ``dataset`` is a nonempty list of (X[B,C,H,W], d_edit) pairs, cycled for
    cfg.steps optimizer steps.  Returns (head, curve) where curve rows are
    dicts {step, loss, fidelity, sparsity} logged every cfg.log_every steps
    and at the final step.
    """
    cfg = cfg or PrunerTrainConfig()
    if not dataset:
        raise ContractError("train_pruning_head requires a nonempty dataset")
    first_d = np.asarray(dataset[0][1])
    head = PruningHead(
        layer.channels,
        edit_dim=edit_dim or first_d.shape[0],
        seed=cfg.seed,
    )
    opt = Adam(head.param_list(), lr=cfg.lr)
    curve = []
    for step in range(1, cfg.steps + 1):
        x, d = dataset[(step - 1) % len(dataset)]
        opt.zero_grad()
        loss, fid, sp = pruner_loss(x, d, layer, head, cfg)
        ad.backward(loss)
        opt.step()
        if step % cfg.log_every == 0 or step == cfg.steps:
            curve.append(
                {"step": step, "loss": loss.item(), "fidelity": fid, "sparsity": sp}
            )
    return head, curve


def hard_pruning_mse(layer, head, xs, d, rho):
    """Held-out MSE of hard top-k pruning vs the dense teacher."""
    total = 0.0
    for x in xs:
        tokens = feature_map_to_tokens(x)
        s = head.score(tokens, d)
        keep = select_topk(s, rho)
        diff = layer.pruned_tokens(tokens, keep) - layer.dense_tokens(tokens)
        total += float(np.mean(diff**2))
    return total / len(xs)


def random_pruning_mse(layer, xs, rho, rng):
    """Baseline: uniform-random keep sets of the same size."""
    total = 0.0
    for x in xs:
        tokens = feature_map_to_tokens(x)
        b, n, _ = tokens.shape
        k = keep_count(n, rho)
        keep = np.stack([np.sort(rng.choice(n, size=k, replace=False)) for _ in range(b)])
        diff = layer.pruned_tokens(tokens, keep) - layer.dense_tokens(tokens)
        total += float(np.mean(diff**2))
    return total / len(xs)


class TaskAwarePruner(BaseEstimator):
    """Estimator wrapper: learns token importance for one edit task.

    fit(X) trains the importance head against the frozen ``layer`` teacher;
    transform(X) applies hard top-k pruned attention at ``rho``;
    importance(X) exposes the scores.  X is [n_samples, C, H, W].
    """

    def __init__(
        self,
        layer=None,
        edit_direction=None,
        rho=0.5,
        lambda_sparsity=0.1,
        lr=3e-3,
        n_steps=2000,
        batch_size=4,
        seed=0,
        log_every=50,
    ):
        self.layer = layer
        self.edit_direction = edit_direction
        self.rho = rho
        self.lambda_sparsity = lambda_sparsity
        self.lr = lr
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.seed = seed
        self.log_every = log_every

    def _validated(self):
        if not isinstance(self.layer, PrunedAttentionLayer):
            raise ContractError("TaskAwarePruner requires a PrunedAttentionLayer")
        d = as_float_array(self.edit_direction, "edit_direction")
        if d.ndim != 1:
            raise ContractError("edit_direction must be a 1-D unit vector")
        return d

    def fit(self, X, y=None):
        d = self._validated()
        X = as_float_array(X, "X")
        if X.ndim != 4:
            raise ContractError(f"X must be [n_samples, C, H, W], got {X.shape}")
        cfg = PrunerTrainConfig(
            lambda_sparsity=self.lambda_sparsity,
            lr=self.lr,
            steps=self.n_steps,
            seed=self.seed,
            log_every=self.log_every,
        )
        batches = [
            (X[i : i + self.batch_size], d)
            for i in range(0, len(X), self.batch_size)
        ]
        self.head_, self.curve_ = train_pruning_head(batches, self.layer, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def importance(self, X):
        self._require_fitted()
        X = as_float_array(X, "X")
        return self.head_.score(feature_map_to_tokens(X), self._validated())

    def transform(self, X):
        self._require_fitted()
        X = as_float_array(X, "X")
        h, w = X.shape[2], X.shape[3]
        tokens = feature_map_to_tokens(X)
        keep = select_topk(self.head_.score(tokens, self._validated()), self.rho)
        return tokens_to_feature_map(self.layer.pruned_tokens(tokens, keep), h, w)

    def _require_fitted(self):
        if not hasattr(self, "head_"):
            raise ContractError("TaskAwarePruner is not fitted; call fit first")
