"""Maximum-likelihood training by batched gradient ascent.

Per optimizer step: one forward+backward over the batch through the
unnormalized log-value, plus exactly one forward+backward through the
partition function (Z does not depend on the data, so its cost is
amortized over the batch).  Early stopping watches validation likelihood;
the best-validation parameters are restored at the end.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field

import numpy as np

from pcsq import engine, inference
from pcsq.circuits import TensorizedCircuit
from pcsq.errors import ConfigError, NumericError
from pcsq.mixtures import CircuitMixture
from pcsq.squaring import SquaredCircuit


@dataclass
class TrainConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 3
    optimizer: str = "adam"  # adam(beta1=0.9, beta2=0.999, eps=1e-8) | sgd
    init: str = "uniform(0,1)"
    seed: int = 0
    l2: float = 0.0

    def check(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        parse_init(self.init)
        return self


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (epoch, train_ll, val_ll, seconds)
    best_epoch: int = -1
    best_val_ll: float = -np.inf
    wall_seconds: float = 0.0
    z_evals_per_step: float = 0.0

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,train_ll,val_ll,seconds\n")
            for epoch, tr, va, sec in self.epochs:
                fh.write(f"{epoch},{tr!r},{va!r},{sec!r}\n")


_INIT_RE = re.compile(r"^\s*(uniform|normal)\s*\(\s*([-0-9.eE+]+)\s*,\s*([-0-9.eE+]+)\s*\)\s*$")


def parse_init(scheme: str):
    m = _INIT_RE.match(scheme)
    if not m:
        raise ConfigError(
            f"bad init scheme {scheme!r}; expected uniform(a,b) or normal(mean,std)"
        )
    kind, a, b = m.group(1), float(m.group(2)), float(m.group(3))
    if kind == "uniform" and not a < b:
        raise ConfigError("uniform init needs a < b")
    if kind == "normal" and b <= 0:
        raise ConfigError("normal init needs std > 0")
    return kind, a, b


def _stores(model):
    if isinstance(model, CircuitMixture):
        return model.parameter_stores()
    if isinstance(model, SquaredCircuit):
        return [model.store]
    if isinstance(model, TensorizedCircuit):
        return [model.store]
    raise ConfigError(f"cannot train a {type(model).__name__}")


def init_parameters(model, scheme="uniform(0,1)", seed=0):
    """Draw every trainable free parameter from the seeded scheme."""
    kind, a, b = parse_init(scheme)
    rng = np.random.default_rng(seed)
    for store in _stores(model):
        for block in store.blocks.values():
            if not block.trainable:
                continue
            if kind == "uniform":
                vals = rng.uniform(a, b, size=block.size)
            else:
                vals = rng.normal(a, b, size=block.size)
            store.values[block.offset : block.offset + block.size] = vals
        store.bump()
    return model


class _Optimizer:
    def __init__(self, stores, config: TrainConfig):
        self.stores = stores
        self.masks = [s.trainable_mask() for s in stores]
        self.lr = config.learning_rate
        self.l2 = config.l2

    def _loss_grad(self, store, mask):
        # gradients hold d(mean LL)/d(theta); we minimize the negative
        g = -store.gradients[mask]
        if self.l2:
            g = g + self.l2 * store.values[mask]
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; aborting the step")
        return g

    def step(self):
        raise NotImplementedError


class _Sgd(_Optimizer):
    def step(self):
        for store, mask in zip(self.stores, self.masks):
            store.values[mask] -= self.lr * self._loss_grad(store, mask)
            store.bump()


class _Adam(_Optimizer):
    def __init__(self, stores, config):
        super().__init__(stores, config)
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.m = [np.zeros(int(mask.sum())) for mask in self.masks]
        self.v = [np.zeros(int(mask.sum())) for mask in self.masks]

    def step(self):
        self.t += 1
        for i, (store, mask) in enumerate(zip(self.stores, self.masks)):
            g = self._loss_grad(store, mask)
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            mhat = self.m[i] / (1 - self.beta1**self.t)
            vhat = self.v[i] / (1 - self.beta2**self.t)
            store.values[mask] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            store.bump()


def _accumulate_gradients(model, x):
    """Accumulate d(mean log-likelihood)/d(free params) for one batch."""
    b = x.shape[0]
    if isinstance(model, SquaredCircuit):
        res = engine.forward(model.source, x, want_tape=True)
        engine.backward(res.tape, engine.log_grad_seed(res.root, np.full(b, 2.0 / b)))
        _, zres = inference.partition_function(model, want_tape=True)
        engine.backward(zres.tape, engine.log_grad_seed(zres.root, np.array([-1.0])))
    elif isinstance(model, TensorizedCircuit):
        res = engine.forward(model, x, want_tape=True)
        if np.any(res.root.sign <= 0.0):
            row = int(np.argmax(res.root.sign <= 0.0))
            raise NumericError(f"model value not positive at batch row {row}")
        engine.backward(res.tape, engine.log_grad_seed(res.root, np.full(b, 1.0 / b)))
        _, zres = inference.partition_function(model, want_tape=True)
        engine.backward(zres.tape, engine.log_grad_seed(zres.root, np.array([-1.0])))
    elif isinstance(model, CircuitMixture):
        _accumulate_mixture_gradients(model, x)
    else:
        raise ConfigError(f"cannot train a {type(model).__name__}")


def _accumulate_mixture_gradients(model: CircuitMixture, x):
    b = x.shape[0]
    k = len(model.components)
    lam = model.weights()
    logs = model.component_log_values(x)  # (b, k)
    with np.errstate(divide="ignore"):
        shifted = logs + np.log(lam)[None, :]
    shifted -= shifted.max(axis=1, keepdims=True)
    resp = np.exp(shifted)
    resp /= resp.sum(axis=1, keepdims=True)

    logz = model.component_log_partitions()
    with np.errstate(divide="ignore"):
        zsh = logz + np.log(lam)
    zsh -= zsh.max()
    rho = np.exp(zsh)
    rho /= rho.sum()
    model.partition()  # counts one normalizer evaluation for this step

    scale = 2.0 if model.squared else 1.0
    for i, comp in enumerate(model.components):
        graph = comp.source if isinstance(comp, SquaredCircuit) else comp
        res = engine.forward(graph, x, want_tape=True)
        coeff = scale * resp[:, i] / b
        engine.backward(res.tape, engine.log_grad_seed(res.root, coeff))
        _, zres = inference.partition_function(comp, want_tape=True)
        engine.backward(zres.tape, engine.log_grad_seed(zres.root, np.array([-rho[i]])))
    with np.errstate(divide="ignore"):
        eff = (resp.mean(axis=0) - rho) / lam
    model.store.accumulate_effective_grad(model.weight_block, eff)


def _mean_ll(model, x):
    if isinstance(model, CircuitMixture):
        return model.log_likelihood(x)
    return inference.log_likelihood(model, x)


def _model_z_count(model):
    if isinstance(model, CircuitMixture):
        return inference.z_eval_count(model.components[0])
    return inference.z_eval_count(model)


def train(model, dataset, config: TrainConfig) -> TrainReport:
    """Maximize mean log-likelihood on the train split with early stopping
    on the validation split; returns the trace and restores the best
    checkpoint."""
    config.check()
    train_x = dataset.split("train")
    val_x = dataset.split("val")
    if train_x.shape[0] == 0 or val_x.shape[0] == 0:
        raise ConfigError("train and val splits must be non-empty")
    if train_x.shape[1] != model.variable_count:
        raise ConfigError(
            f"dataset has {train_x.shape[1]} variables, model has {model.variable_count}"
        )
    stores = _stores(model)
    opt = (_Adam if config.optimizer == "adam" else _Sgd)(stores, config)
    report = TrainReport()
    best = [s.snapshot() for s in stores]
    bad_epochs = 0
    step_z_evals = 0
    total_steps = 0
    t_start = time.perf_counter()
    for epoch in range(config.max_epochs):
        t_epoch = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(train_x.shape[0])
        z_before = _model_z_count(model)
        steps = 0
        for lo in range(0, order.size, config.batch_size):
            batch = train_x[order[lo : lo + config.batch_size]]
            for s in stores:
                s.zero_grad()
            try:
                _accumulate_gradients(model, batch)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, step {steps}: {exc}") from exc
            opt.step()
            steps += 1
        step_z_evals += _model_z_count(model) - z_before
        total_steps += steps
        train_ll = _mean_ll(model, train_x)
        val_ll = _mean_ll(model, val_x)
        report.epochs.append((epoch, train_ll, val_ll, time.perf_counter() - t_epoch))
        if val_ll > report.best_val_ll:
            report.best_val_ll = val_ll
            report.best_epoch = epoch
            best = [s.snapshot() for s in stores]
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break
    for s, snap in zip(stores, best):
        s.restore(snap)
    report.wall_seconds = time.perf_counter() - t_start
    report.z_evals_per_step = step_z_evals / max(total_steps, 1)
    return report
