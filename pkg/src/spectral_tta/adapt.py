"""Entropy objective, Adam, and the test-time adaptation protocols.

The episodic protocol resets the adaptation parameters (and optimizer
moments) before every batch; the online protocol lets them evolve over a
whole corruption run. Baselines: plain inference, batch-norm statistic
recomputation, and entropy-trained batch-norm modulators.
"""

import csv
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError
from .network import BN_BATCH, BatchNorm2d, Model

OPT_ADAM = "adam"
OPT_SGD = "sgd"  # plain gradient descent, kept for diagnostics

RECORD_FORMAT_VERSION = 1


@dataclass
class AdaptConfig:
    protocol: str = "episodic"
    learning_rate: float = 0.001
    steps_per_batch: int = 1
    batch_size: int = 200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = OPT_ADAM
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in ("episodic", "online"):
            raise ContractViolationError(f"unknown protocol {self.protocol!r}")
        if self.learning_rate < 0:
            raise ContractViolationError("learning_rate must be >= 0")
        if self.steps_per_batch < 1:
            raise ContractViolationError("steps_per_batch must be >= 1")
        if self.batch_size < 1:
            raise ContractViolationError("batch_size must be >= 1")
        if self.optimizer not in (OPT_ADAM, OPT_SGD):
            raise ContractViolationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    timestep: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def entropy(logits: np.ndarray) -> float:
    """Mean Shannon entropy (natural log) of softmax(logits) per row."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ContractViolationError("logits must be (m, C) with C >= 2")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    p = np.exp(z - lse[:, None])
    h = lse - np.sum(p * z, axis=1)
    return float(h.mean())


def entropy_grad(logits: np.ndarray) -> np.ndarray:
    """Gradient of :func:`entropy` with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(z - lse)
    zbar = np.sum(p * z, axis=1, keepdims=True)
    return -p * (z - zbar) / logits.shape[0]


def adam_step(
    state: AdamState, params: np.ndarray, grads: np.ndarray, cfg: AdaptConfig
) -> np.ndarray:
    """One optimizer step; mutates ``state``, returns the new parameters."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ContractViolationError(
            f"params shape {params.shape} != grads shape {grads.shape}"
        )
    if cfg.optimizer == OPT_SGD:
        state.timestep += 1
        return params - cfg.learning_rate * grads
    state.timestep += 1
    t = state.timestep
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.first_moment = b1 * state.first_moment + (1 - b1) * grads
    state.second_moment = b2 * state.second_moment + (1 - b2) * grads**2
    mhat = state.first_moment / (1 - b1**t)
    vhat = state.second_moment / (1 - b2**t)
    return params - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)


def _params_hash(vec: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(vec).tobytes()).hexdigest()[:16]


@dataclass
class RunRecord:
    """Per-batch log of one adaptation (or inference) session."""

    method: str
    protocol: str
    batches: list = field(default_factory=list)

    def add(self, index, n, error, entropy_before, entropy_after, params_hash=""):
        if not 0.0 <= error <= 1.0:
            raise ContractViolationError(f"error {error} outside [0, 1]")
        self.batches.append(
            {
                "batch": index,
                "n": n,
                "error": error,
                "entropy_before": entropy_before,
                "entropy_after": entropy_after,
                "params_hash": params_hash,
            }
        )

    def errors(self) -> list[float]:
        return [b["error"] for b in self.batches]

    def mean_error(self) -> float:
        # weighted by batch size so tail batches count per-sample
        total = sum(b["n"] for b in self.batches)
        wrong = sum(b["error"] * b["n"] for b in self.batches)
        return wrong / total

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for b in self.batches:
                row = {
                    "version": RECORD_FORMAT_VERSION,
                    "method": self.method,
                    "protocol": self.protocol,
                    **b,
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _batch_error(logits: np.ndarray, labels: np.ndarray) -> float:
    wrong = int(np.sum(logits.argmax(axis=1) != labels))
    return wrong / len(labels)


def _check_batches(test_batches):
    batches = list(test_batches)
    if not batches:
        raise ContractViolationError("empty batch stream")
    return batches


def _run_protocol(model: Model, test_batches, cfg: AdaptConfig, method: str, episodic: bool):
    batches = _check_batches(test_batches)
    n_params = model.adapt_param_count()
    params0 = model.adapt_params()
    record = RunRecord(method=method, protocol="episodic" if episodic else "online")
    state = AdamState.zeros(n_params)
    for b_idx, (x, y) in enumerate(batches):
        if episodic:
            model.set_adapt_params(params0)
            state = AdamState.zeros(n_params)
        logits, caches = model.forward(x)
        h_before = entropy(logits)
        for step in range(cfg.steps_per_batch):
            if step > 0:
                logits, caches = model.forward(x)
            gloss = entropy_grad(logits)
            grads = model.backward_adapt(caches, gloss)
            model.set_adapt_params(adam_step(state, model.adapt_params(), grads, cfg))
        logits_after, _ = model.forward(x)
        record.add(
            b_idx,
            len(y),
            _batch_error(logits_after, y),
            h_before,
            entropy(logits_after),
            _params_hash(model.adapt_params()),
        )
    if episodic:
        model.set_adapt_params(params0)
    return record


def adapt_episodic(model: Model, test_batches, cfg: AdaptConfig, method: str = "adapt") -> RunRecord:
    """Adapt-and-evaluate each batch independently, resetting in between."""
    return _run_protocol(model, test_batches, cfg, method, episodic=True)


def adapt_online(model: Model, test_batches, cfg: AdaptConfig, method: str = "adapt") -> RunRecord:
    """Adapt across the batch stream without resets."""
    return _run_protocol(model, test_batches, cfg, method, episodic=False)


def run_adaptation(model: Model, test_batches, cfg: AdaptConfig, method: str = "adapt") -> RunRecord:
    if cfg.protocol == "episodic":
        return adapt_episodic(model, test_batches, cfg, method)
    return adapt_online(model, test_batches, cfg, method)


# ---- baselines ----------------------------------------------------------


def baseline_no_adapt(model: Model, test_batches) -> RunRecord:
    """Pure inference with frozen statistics."""
    batches = _check_batches(test_batches)
    record = RunRecord(method="no-adapt", protocol="none")
    for b_idx, (x, y) in enumerate(batches):
        logits, _ = model.forward(x)
        h = entropy(logits)
        record.add(b_idx, len(y), _batch_error(logits, y), h, h)
    return record


def baseline_bn_stats(model: Model, test_batches) -> RunRecord:
    """Recompute batch-norm statistics per test batch; nothing is learned."""
    batches = _check_batches(test_batches)
    work = model.clone()
    work.set_bn_mode(BN_BATCH)
    record = RunRecord(method="bn-stats", protocol="none")
    for b_idx, (x, y) in enumerate(batches):
        logits, _ = work.forward(x)
        h = entropy(logits)
        record.add(b_idx, len(y), _batch_error(logits, y), h, h)
    return record


def baseline_bn_modulators(model: Model, test_batches, cfg: AdaptConfig) -> RunRecord:
    """Entropy-train the batch-norm scale/shift with batch statistics."""
    work = model.clone()
    work.set_bn_mode(BN_BATCH)
    work.adapt_target = "bn-modulators"
    if not any(isinstance(l, BatchNorm2d) for l in work.layers):
        raise ContractViolationError("model has no batch-norm layers to modulate")
    return run_adaptation(work, test_batches, cfg, method="bn-modulators")


def summary_csv(records: dict, path) -> None:
    """Write a method -> mean error summary for a list of RunRecords."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "protocol", "mean_error", "batches"])
        for name in sorted(records):
            rec = records[name]
            writer.writerow([rec.method, rec.protocol, repr(rec.mean_error()), len(rec.batches)])
