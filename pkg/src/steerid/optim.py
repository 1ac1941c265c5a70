"""Optimizers: Adam/AdamW with L2 gradient clipping, a self-contained
CMA-ES with NaN-robust fitness handling, and validation early stopping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class GradientError(ValueError):
    """A gradient contained NaN/Inf; names the offending parameters."""


class Adam:
    """Adam with bias correction, L2 gradient clipping, and optional
    decoupled weight decay (AdamW when weight_decay > 0).
    """

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0,
                 clip_norm: float = math.inf,
                 names: Optional[Sequence[str]] = None):
        if lr <= 0.0:
            raise ValueError("lr must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.names = list(names) if names is not None else None
        self.m: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.step_count = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        grad = np.asarray(grad, dtype=float)
        if params.shape != grad.shape:
            raise ValueError("parameter/gradient shape mismatch")
        bad = ~np.isfinite(grad)
        if bad.any():
            names = (self.names if self.names is not None
                     else [f"p[{i}]" for i in range(len(grad))])
            offending = [names[i] for i in np.flatnonzero(bad)]
            raise GradientError(f"non-finite gradient for {offending}")

        norm = float(np.linalg.norm(grad))
        if math.isfinite(self.clip_norm) and norm > self.clip_norm:
            grad = grad * (self.clip_norm / norm)

        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.step_count += 1
        t = self.step_count
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** t)
        v_hat = self.v / (1.0 - self.beta2 ** t)

        out = params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if self.weight_decay > 0.0:
            out = out - self.lr * self.weight_decay * params
        return out


def adam_step(opt: Adam, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Functional wrapper; mutates the optimizer's moment state."""
    return opt.step(params, grad)


class CmaEs:
    """(mu/mu_w, lambda) covariance matrix adaptation evolution strategy.

    NaN fitness entries are ranked worst (the distribution moves away
    from infeasible regions); an all-NaN generation is skipped with the
    step size unchanged.  Box constraints are enforced by resampling each
    candidate up to 100 times, then coordinate clamping.  Identical seeds
    reproduce identical candidate sequences bit for bit.
    """

    def __init__(self, mean: Sequence[float], sigma: float,
                 population: Optional[int] = None, seed: int = 0,
                 bounds: Optional[Sequence[tuple[float, float]]] = None):
        self.mean = np.asarray(mean, dtype=float).copy()
        if sigma <= 0.0:
            raise ValueError("sigma must be positive")
        self.sigma = float(sigma)
        n = len(self.mean)
        self.n = n
        self.lam = population if population is not None else 4 + int(3 * math.log(n))
        if self.lam < 2:
            raise ValueError("population must be >= 2")
        self.rng = np.random.default_rng(seed)
        self.bounds = None
        if bounds is not None:
            lo = np.array([b[0] for b in bounds], dtype=float)
            hi = np.array([b[1] for b in bounds], dtype=float)
            if (lo >= hi).any():
                raise ValueError("invalid bounds")
            self.bounds = (lo, hi)

        self.mu = self.lam // 2
        w = np.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = w / w.sum()
        self.mueff = 1.0 / float((self.weights ** 2).sum())

        self.cc = (4.0 + self.mueff / n) / (n + 4.0 + 2.0 * self.mueff / n)
        self.cs = (self.mueff + 2.0) / (n + self.mueff + 5.0)
        self.c1 = 2.0 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1.0 - self.c1,
                       2.0 * (self.mueff - 2.0 + 1.0 / self.mueff)
                       / ((n + 2.0) ** 2 + self.mueff))
        self.damps = (1.0 + 2.0 * max(0.0, math.sqrt((self.mueff - 1.0) / (n + 1.0)) - 1.0)
                      + self.cs)
        self.chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))

        self.C = np.eye(n)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.generation = 0
        self._pending: Optional[np.ndarray] = None
        self._decomp = None
        self.best_x: Optional[np.ndarray] = None
        self.best_fitness = math.inf

    # -- sampling -------------------------------------------------------

    def _refresh_decomposition(self):
        C = (self.C + self.C.T) / 2.0
        eigvals, eigvecs = np.linalg.eigh(C)
        eigvals = np.maximum(eigvals, 1e-14)   # PD repair
        self.C = eigvecs @ np.diag(eigvals) @ eigvecs.T
        self._decomp = (eigvecs, np.sqrt(eigvals))

    def _in_box(self, x: np.ndarray) -> bool:
        if self.bounds is None:
            return True
        lo, hi = self.bounds
        return bool((x >= lo).all() and (x <= hi).all())

    def _sample_one(self, root_vecs, root_vals) -> np.ndarray:
        for _ in range(100):
            z = self.rng.standard_normal(self.n)
            x = self.mean + self.sigma * (root_vecs @ (root_vals * z))
            if self._in_box(x):
                return x
        lo, hi = self.bounds
        return np.clip(x, lo, hi)

    def ask(self) -> np.ndarray:
        """Sample the next generation, shape (lambda, n)."""
        self._refresh_decomposition()
        vecs, vals = self._decomp
        pop = np.stack([self._sample_one(vecs, vals) for _ in range(self.lam)])
        self._pending = pop
        return pop

    # -- update ---------------------------------------------------------

    def tell(self, fitness: Sequence[float]) -> None:
        if self._pending is None:
            raise RuntimeError("tell() called before ask()")
        fitness = np.asarray(fitness, dtype=float)
        if fitness.shape != (self.lam,):
            raise ValueError(f"need {self.lam} fitness values, got {fitness.shape}")
        pop = self._pending
        self._pending = None
        self.generation += 1

        finite = np.isfinite(fitness)
        if not finite.any():
            return  # skip the update; budget is spent, sigma unchanged
        ranked = fitness.copy()
        worst = fitness[finite].max()
        ranked[~finite] = worst + 1.0 + abs(worst)   # worst rank + margin

        order = np.argsort(ranked, kind="stable")
        if ranked[order[0]] < self.best_fitness:
            self.best_fitness = float(ranked[order[0]])
            self.best_x = pop[order[0]].copy()

        elite = pop[order[: self.mu]]
        old_mean = self.mean.copy()
        self.mean = self.weights @ elite

        y = (self.mean - old_mean) / self.sigma
        vecs, vals = self._decomp
        inv_sqrt = vecs @ np.diag(1.0 / vals) @ vecs.T
        self.ps = ((1.0 - self.cs) * self.ps
                   + math.sqrt(self.cs * (2.0 - self.cs) * self.mueff) * (inv_sqrt @ y))
        denom = math.sqrt(1.0 - (1.0 - self.cs) ** (2.0 * self.generation))
        hsig = (np.linalg.norm(self.ps) / denom / self.chi_n
                < 1.4 + 2.0 / (self.n + 1.0))
        self.pc = ((1.0 - self.cc) * self.pc
                   + hsig * math.sqrt(self.cc * (2.0 - self.cc) * self.mueff) * y)

        artmp = (elite - old_mean) / self.sigma
        rank_mu = (self.weights[:, None, None] * np.einsum("ki,kj->kij", artmp, artmp)).sum(0)
        delta_hsig = (1.0 - hsig) * self.cc * (2.0 - self.cc)
        self.C = ((1.0 - self.c1 - self.cmu) * self.C
                  + self.c1 * (np.outer(self.pc, self.pc) + delta_hsig * self.C)
                  + self.cmu * rank_mu)

        self.sigma *= math.exp((self.cs / self.damps)
                               * (np.linalg.norm(self.ps) / self.chi_n - 1.0))


@dataclass
class EarlyStopping:
    """Stop when validation loss fails to improve for `patience` checks.

    ``update`` is meant to be called on validation epochs only (every
    ``val_every`` training epochs); NaN losses count as no improvement.
    """

    patience: int = 5
    val_every: int = 4
    best_val: float = math.inf
    stalled: int = 0
    improved_ever: bool = field(default=False)

    def __post_init__(self):
        if self.patience < 1 or self.val_every < 1:
            raise ValueError("patience and val_every must be >= 1")

    def update(self, val_loss: float) -> bool:
        """Record a validation loss; returns True when training should stop.

        The first observation only sets the baseline (it is not an
        improvement over anything), so a flat loss sequence stops at the
        patience-th validation.
        """
        if math.isfinite(val_loss) and val_loss < self.best_val:
            had_baseline = math.isfinite(self.best_val)
            self.best_val = val_loss
            if had_baseline:
                self.improved_ever = True
                self.stalled = 0
                return False
        self.stalled += 1
        return self.stalled >= self.patience
