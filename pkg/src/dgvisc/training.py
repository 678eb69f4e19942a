"""Gradient-based training of the viscosity policy.

The epoch loop shuffles the problem list, accumulates loss gradients
over minibatches through full differentiable unrolls, and takes AdamW
steps.  Every ``n_test`` epochs the summed test loss is evaluated
without recording; improvements snapshot the parameters and a test loss
above the instability threshold restores the last snapshot and halves
the learning rate.

Multi-step pretraining grows the unroll length adaptively: the next
increment is the largest one that keeps the average per-step loss
within a factor ``alpha_e`` of the current one (probed by doubling then
bisection, no gradients), clipped to a configured range.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .losses import LossConfig, loss, training_dt
from .network import AdamWOptimizer, NetworkParams, PlateauScheduler
from .reference import build_reference

__all__ = ["TrainConfig", "TrainingProblem", "TrainingError", "clip",
           "train", "multistep_pretrain", "TrainingLog"]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


def clip(a, b, c):
    """max(min(b, c), a): b limited to [a, c] (a wins below, c above)."""
    return max(min(b, c), a)


class _CachedReference:
    """Step-indexed cache in front of a reference provider, shared
    across epochs and growing unroll lengths."""

    def __init__(self, provider, dt):
        self.provider = provider
        self.dt = dt
        self.cache = {}

    def at(self, t):
        n = int(round(t / self.dt))
        if n not in self.cache:
            self.cache[n] = self.provider.at(t)
        return self.cache[n]


class TrainingProblem:
    """A problem plus the fixed training step and its cached reference."""

    def __init__(self, problem, n_steps: int, dt: float | None = None,
                 c_max: float = 1.0):
        self.problem = problem
        self.n_steps = int(n_steps)
        self.dt = float(dt) if dt is not None else \
            training_dt(problem, c_max=c_max)
        self.c_max = c_max
        self._reference = None

    @property
    def name(self):
        return self.problem.name

    def reference(self):
        if self._reference is None:
            provider = build_reference(self.problem)
            if provider is None:
                raise TrainingError(
                    f"problem {self.problem.name!r} has no reference")
            self._reference = _CachedReference(provider, self.dt)
        return self._reference


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 2
    lr: float = 5e-2
    n_test: int = 1
    seed: int = 0
    c_max: float = 1.0
    checkpoint_steps: bool = False
    # multi-step pretraining
    n0: int = 10
    ne_min: int = 5
    ne_max: int = 50
    alpha_e: float = 1.1
    pretrain_epochs: int = 5
    # optimizer
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    patience: int = 30
    lr_factor: float = 0.5

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.n_test < 1:
            raise ValueError("n_test must be at least 1")


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    epoch0_loss: float | None = None
    best_loss: float = np.inf
    restarts: int = 0

    def add(self, **kw):
        kw.setdefault("wall", time.time())
        self.rows.append(kw)


def _problem_loss(tp: TrainingProblem, net, theta, cfg: LossConfig,
                  n_steps, tape=None, checkpoint=False):
    steps = min(n_steps, tp.n_steps) if n_steps is not None else tp.n_steps
    return loss(theta, tp.problem, net, cfg, tp.reference(), steps,
                tp.dt, c_max=tp.c_max, tape=tape, checkpoint=checkpoint)


def _eval_losses(problems, net, theta, cfg, n_steps, with_flags=False):
    out = []
    flags = []
    for tp in problems:
        total, bd = _problem_loss(tp, net, theta, cfg, n_steps)
        out.append(bd.total)
        flags.append(bd.blown)
    return (out, flags) if with_flags else out


def train(train_problems, test_problems, net: NetworkParams,
          train_cfg: TrainConfig, loss_cfg: LossConfig,
          n_steps: int | None = None, optimizer: AdamWOptimizer = None,
          scheduler: PlateauScheduler = None, tlog: TrainingLog = None,
          on_epoch=None):
    """The epoch/minibatch loop; returns (best theta, log).

    ``n_steps`` limits every problem's unroll (used by pretraining);
    ``optimizer``/``scheduler`` state can be threaded through successive
    calls.
    """
    theta = net.theta.copy()
    rng = np.random.default_rng(train_cfg.seed)
    opt = optimizer or AdamWOptimizer(
        lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
        eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    sched = scheduler or PlateauScheduler(patience=train_cfg.patience,
                                          factor=train_cfg.lr_factor)
    tlog = tlog if tlog is not None else TrainingLog()
    lr = opt.lr

    initial, blown = _eval_losses(train_problems, net, theta, loss_cfg,
                                  n_steps, with_flags=True)
    if all(blown):
        raise TrainingError(
            "every training problem blows up at the initial parameters; "
            f"losses: {initial}")
    if tlog.epoch0_loss is None:
        tlog.epoch0_loss = float(np.sum(initial))
    theta_star = theta.copy()
    best = tlog.best_loss

    n_p = len(train_problems)
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n_p)
        epoch_loss = 0.0
        for lo in range(0, n_p, train_cfg.batch_size):
            batch = order[lo:lo + train_cfg.batch_size]
            grad = np.zeros_like(theta)
            for j in batch:
                net_j = replace(net, theta=theta)
                tape = ad.Tape()
                th = tape.input(theta)
                total, bd = _problem_loss(
                    train_problems[j], net_j, th, loss_cfg, n_steps,
                    tape=tape, checkpoint=train_cfg.checkpoint_steps)
                epoch_loss += bd.total
                if bd.blown:
                    continue  # sentinel: no gradient from this member
                grad += tape.backward(total).wrt(th)
            opt.lr = lr
            theta = opt.step(theta, grad)

        row = {"epoch": epoch, "lr": lr, "train_loss": epoch_loss,
               "n_steps": n_steps}
        if (epoch + 1) % train_cfg.n_test == 0:
            test_vals = _eval_losses(test_problems, net,
                                     theta, loss_cfg, n_steps) \
                if test_problems else []
            l_test = float(np.sum(test_vals)) if test_vals else epoch_loss
            row["test_loss"] = l_test
            if l_test < best:
                best = l_test
                theta_star = theta.copy()
            elif l_test > loss_cfg.l_max:
                theta = theta_star.copy()
                lr = lr / 2.0
                tlog.restarts += 1
                row["restart"] = True
            lr = sched.update(l_test, lr)
        tlog.add(**row)
        if on_epoch is not None:
            on_epoch(epoch, row, theta)
    tlog.best_loss = best
    out_net = replace(net, theta=theta_star.copy())
    return out_net, opt, sched, tlog


def _avg_step_loss(problems, net, cfg, n_steps):
    vals = []
    for tp in problems:
        steps = min(n_steps, tp.n_steps)
        total, bd = _problem_loss(tp, net, net.theta, cfg, steps)
        vals.append(bd.total / max(steps, 1))
    return float(np.mean(vals))


def multistep_pretrain(train_problems, test_problems, net: NetworkParams,
                       train_cfg: TrainConfig, loss_cfg: LossConfig,
                       n_final: int | None = None,
                       tlog: TrainingLog = None):
    """Grow the unroll length from n0 to the final step count, training a
    few epochs per stage; returns (net, optimizer, scheduler, log)."""
    if n_final is None:
        n_final = max(tp.n_steps for tp in train_problems)
    tlog = tlog if tlog is not None else TrainingLog()
    opt = AdamWOptimizer(
        lr=train_cfg.lr, beta1=train_cfg.beta1, beta2=train_cfg.beta2,
        eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    sched = PlateauScheduler(patience=train_cfg.patience,
                             factor=train_cfg.lr_factor)
    n = min(train_cfg.n0, n_final)
    stage_cfg = replace(train_cfg, epochs=train_cfg.pretrain_epochs)
    while True:
        log.info("pretraining stage at %d steps", n)
        net, opt, sched, tlog = train(
            train_problems, test_problems, net, stage_cfg, loss_cfg,
            n_steps=n, optimizer=opt, scheduler=sched, tlog=tlog)
        if n >= n_final:
            break
        base = _avg_step_loss(train_problems, net, loss_cfg, n)
        ne_alpha = _largest_stable_increment(
            train_problems, net, loss_cfg, n, base,
            train_cfg.alpha_e, min(train_cfg.ne_max, n_final - n))
        ne = clip(train_cfg.ne_min, ne_alpha, train_cfg.ne_max)
        n = min(n + ne, n_final)
    return net, opt, sched, tlog


def _largest_stable_increment(problems, net, cfg, n, base, alpha, cap):
    """Doubling-then-bisection probe of the average per-step loss."""
    if cap < 1:
        return 0

    def ok(e):
        return _avg_step_loss(problems, net, cfg, n + e) <= alpha * base

    if not ok(1):
        return 0
    e = 1
    while 2 * e <= cap and ok(2 * e):
        e = 2 * e
    if 2 * e > cap:
        if e == cap or ok(cap):
            return cap
        lo, hi = e, cap           # ok(lo), not ok(hi)
    else:
        lo, hi = e, 2 * e
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
