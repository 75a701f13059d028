"""Loss, Adam, early stopping and the single-run training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DomainError, Parameter, Tape, Value
from .graph import Graph, similarity
from .models import ModelConfig, build_model, glorot_init, sparse_input  # noqa: F401  (re-export)
from .regsoftmax import EdgeSlots, RegSoftmaxParams, as_slots, reg_softmax_forward

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    max_epochs: int = 10000
    patience: int = 50
    lr: float = 0.01
    tau0: float = 1.0
    lambda0: float = 3.0
    epsilon0: float = 1.0
    lr_tau: float = 0.01
    lr_lambda: float = 0.001
    lr_epsilon: float = 0.01
    learn_tau: bool = True
    learn_lambda: bool = True
    learn_epsilon: bool = True
    t_steps: int = 1
    projection: str = "row"
    stopping: str = "either"
    check_every: int = 10
    seed: int = 0
    regularized: bool = True

    def __post_init__(self):
        if self.patience < 1:
            raise ContractError("patience must be at least 1")
        if self.max_epochs < 1:
            raise ContractError("max_epochs must be at least 1")
        for name in ("lr", "lr_tau", "lr_lambda", "lr_epsilon"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.stopping not in ("either", "both"):
            raise ContractError(f"stopping must be 'either' or 'both', got {self.stopping!r}")
        if self.projection not in ("row", "global", "clip"):
            raise ContractError(f"projection must be row, global or clip, got {self.projection!r}")

    def reg_params(self) -> RegSoftmaxParams:
        return RegSoftmaxParams.create(
            self.tau0, self.lambda0, self.epsilon0, self.t_steps,
            self.lr_tau, self.lr_lambda, self.lr_epsilon,
            self.learn_tau, self.learn_lambda, self.learn_epsilon, self.projection,
        )


@dataclass
class Split:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        self.train, self.val, self.test = (np.asarray(a, dtype=np.int64) for a in (self.train, self.val, self.test))
        parts = np.concatenate([self.train, self.val, self.test])
        if np.unique(parts).size != parts.size:
            raise ContractError("train/val/test sets must be pairwise disjoint")


@dataclass
class RunResult:
    test_accuracy: float
    best_epoch: int
    epochs_run: int
    seconds_per_epoch: float
    tau: float
    lam: float
    epsilon: float
    val_accuracy: float = 0.0
    history: list = field(default_factory=list, repr=False)
    params: dict = field(default_factory=dict, repr=False)


def cross_entropy(y_hat: Value, y: np.ndarray, idx) -> Value:
    """Summed negative log-likelihood over the nodes in ``idx``."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ContractError("cross_entropy needs at least one node")
    P = y_hat.data[idx]
    Y = np.asarray(y, dtype=np.float64)[idx]
    clipped = np.maximum(P, PROB_FLOOR)
    loss = -np.sum(Y * np.log(clipped))

    shape = y_hat.data.shape

    def back(g):
        out = np.zeros(shape)
        out[idx] = np.where(P > PROB_FLOOR, -g * Y / clipped, 0.0)
        return (out,)

    return ad.custom("cross_entropy", [y_hat], loss, back)


class Adam:
    """Bias-corrected Adam with a learning rate per parameter."""

    def __init__(self, params: list[Parameter], betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.learnable:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - p.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def accuracy(probs: np.ndarray, labels: np.ndarray, idx) -> float:
    idx = np.asarray(idx)
    return float(np.mean(np.argmax(probs[idx], axis=1) == labels[idx]))


class Runner:
    """Owns the model and hyperparameters of one training run."""

    def __init__(self, g: Graph, model_cfg: ModelConfig, train_cfg: TrainConfig, s=None):
        self.g = g
        self.cfg = train_cfg
        self.model_cfg = model_cfg
        self.rng = np.random.default_rng(train_cfg.seed)
        self.model = build_model(g, model_cfg, self.rng)
        for p in self.model.parameters():
            p.lr = train_cfg.lr
        self.reg = train_cfg.reg_params() if train_cfg.regularized else None
        self.slots: EdgeSlots | None = None
        if self.reg is not None:
            self.slots = as_slots(similarity(g) if s is None else s)
        self.params = self.model.parameters() + (self.reg.parameters() if self.reg else [])
        self.optimizer = Adam(self.params)
        self.y = g.one_hot()
        self.x = sparse_input(g.features)

    def forward(self, tape: Tape, training: bool, check: bool = False) -> tuple[Value, Value, dict]:
        logits, extra = self.model.forward(tape, self.x, training, self.rng)
        if self.reg is None:
            probs = ad.row_softmax(logits)
        else:
            probs = reg_softmax_forward(logits, self.slots, self.reg, check=check)
        return logits, probs, extra

    def loss(self, probs: Value, idx) -> Value:
        loss = cross_entropy(probs, self.y, idx)
        wd = self.model_cfg.weight_decay
        if wd > 0:
            for p in self.model.decay_parameters():
                penalty = ad.scale_const(ad.sum_squares(probs.tape.watch(p)), 0.5 * wd)
                loss = ad.add(loss, penalty)
        return loss

    def train_step(self, train_idx, check: bool = False) -> float:
        tape = Tape()
        _, probs, _ = self.forward(tape, True, check)
        loss = self.loss(probs, train_idx)
        tape.backward(loss)
        self.optimizer.step()
        if self.reg is not None:
            self.reg.clamp()
        return float(loss.data)

    def evaluate(self, check: bool = False) -> tuple[np.ndarray, np.ndarray]:
        tape = Tape()
        logits, probs, _ = self.forward(tape, False, check)
        return logits.data, probs.data

    def snapshot(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.params}

    def restore(self, state: dict[str, np.ndarray]):
        for p in self.params:
            p.value = state[p.name].copy()


def train_run(g: Graph, split: Split, model_cfg: ModelConfig, train_cfg: TrainConfig, s=None) -> RunResult:
    """Train one model with early stopping and report test accuracy.

    Patience resets whenever validation loss or validation accuracy strictly
    improves (``stopping="either"``); with ``stopping="both"`` each metric has
    its own counter and the run stops when either is exhausted. Parameters
    from the epoch with the best validation accuracy (lower validation loss
    breaks ties) are restored before testing.
    """
    runner = Runner(g, model_cfg, train_cfg, s)
    cfg = train_cfg
    labels = g.labels
    best_loss, best_acc = np.inf, -np.inf
    wait_loss = wait_acc = 0
    best = (-np.inf, np.inf)
    best_state, best_epoch = runner.snapshot(), 0
    history = []
    elapsed = 0.0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        check = cfg.check_every > 0 and (epoch == 1 or epoch % cfg.check_every == 0)
        t0 = time.perf_counter()
        try:
            train_loss = runner.train_step(split.train, check)
        except DomainError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}") from exc
        elapsed += time.perf_counter() - t0
        tape = Tape()
        try:
            _, probs, _ = runner.forward(tape, False, check)
        except DomainError as exc:
            raise TrainingDiverged(f"epoch {epoch} (eval): {exc}") from exc
        val_loss = float(cross_entropy(probs, runner.y, split.val).data)
        val_acc = accuracy(probs.data, labels, split.val)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)) or train_loss < 0:
            raise TrainingDiverged(f"epoch {epoch}: loss {train_loss}, val loss {val_loss}")
        history.append((train_loss, val_loss, val_acc))

        if (val_acc, -val_loss) > (best[0], -best[1]):
            best = (val_acc, val_loss)
            best_state, best_epoch = runner.snapshot(), epoch

        loss_improved = val_loss < best_loss
        acc_improved = val_acc > best_acc
        best_loss = min(best_loss, val_loss)
        best_acc = max(best_acc, val_acc)
        if cfg.stopping == "either":
            wait_loss = wait_acc = 0 if (loss_improved or acc_improved) else wait_loss + 1
        else:
            wait_loss = 0 if loss_improved else wait_loss + 1
            wait_acc = 0 if acc_improved else wait_acc + 1
        if max(wait_loss, wait_acc) >= cfg.patience:
            break

    runner.restore(best_state)
    _, probs = runner.evaluate()
    reg = runner.reg
    result = RunResult(
        test_accuracy=accuracy(probs, labels, split.test),
        best_epoch=best_epoch,
        epochs_run=epoch,
        seconds_per_epoch=elapsed / max(epoch, 1),
        tau=float(reg.tau.value) if reg else float("nan"),
        lam=float(reg.lam.value) if reg else float("nan"),
        epsilon=float(reg.eps.value) if reg else float("nan"),
        val_accuracy=best[0],
        history=history,
        params=best_state,
    )
    logger.debug("run finished: %s", result)
    return result
