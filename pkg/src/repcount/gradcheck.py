"""Finite-difference gradient checks over every op, loss and the full model.

Each check builds a random instance from a seed, reduces the output to a
scalar through a fixed random projection and compares the tape gradient
with central differences via :func:`autodiff.grad_check`. Inputs are drawn
from [-2, 2]; ops with kinks (relu, amax, amin) draw inputs bounded away
from the kink.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import model as M
from . import priors as P
from .autodiff import Tensor
from .data import CycleSpan, IntervalSpan

OP_TOL = 1e-4
MODEL_TOL = 1e-3
SEEDS = 10
# coordinates per parameter tensor for the sampled end-to-end seeds
E2E_SAMPLE = 12

REDUCED_MODEL = dict(L=8, D_in=4, d_model=16, heads=4, fusion_channels=4, head_hidden=16, ff_hidden=16)


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float
    tol: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error < self.tol)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name} seed={self.seed} err={self.error:.3e} tol={self.tol:.0e}"


def _u(rng, *shape):
    return rng.uniform(-2.0, 2.0, shape)


def _away(rng, *shape, gap=0.1):
    """Uniform on [-2, -gap] U [gap, 2]."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(gap, 2.0, shape)


def _distinct(rng, *shape):
    """Entries spaced at least 0.1 apart along the last axis, shuffled."""
    n = shape[-1]
    base = np.linspace(-2.0, 2.0, n) if n > 1 else np.zeros(1)
    out = np.broadcast_to(base, shape).copy()
    flat = out.reshape(-1, n)
    for row in flat:
        rng.shuffle(row)
    return out + rng.uniform(-0.02, 0.02, shape)


def _proj(rng, y):
    """Scalar ``sum(y * W)`` with a fixed random ``W``."""
    return ad.tsum(y * Tensor(rng.uniform(-1.0, 1.0, y.shape)))


def _check(f, theta):
    return ad.grad_check(f, theta)


def _unary(op, sample=_u):
    def run(rng):
        x = sample(rng, 3, 4)
        W = rng.uniform(-1, 1, (3, 4))
        return _check(lambda t: ad.tsum(op(t) * Tensor(W)), x)
    return run


def _binary(op, second=_u):
    def run(rng):
        a, b = _u(rng, 3, 4), second(rng, 4)
        W = rng.uniform(-1, 1, (3, 4))
        e1 = _check(lambda t: ad.tsum(op(t, Tensor(b)) * Tensor(W)), a)
        e2 = _check(lambda t: ad.tsum(op(Tensor(a), t) * Tensor(W)), b)
        return max(e1, e2)
    return run


def _matmul(rng):
    a, b = _u(rng, 2, 3, 4), _u(rng, 4, 5)
    W = rng.uniform(-1, 1, (2, 3, 5))
    return max(
        _check(lambda t: ad.tsum(ad.matmul(t, Tensor(b)) * Tensor(W)), a),
        _check(lambda t: ad.tsum(ad.matmul(Tensor(a), t) * Tensor(W)), b),
    )


def _linear(rng):
    x, w, b = _u(rng, 2, 3, 4), _u(rng, 4, 5), _u(rng, 5)
    W = rng.uniform(-1, 1, (2, 3, 5))
    f = lambda x_, w_, b_: ad.tsum(ad.linear(x_, w_, b_) * Tensor(W))  # noqa: E731
    return max(
        _check(lambda t: f(t, Tensor(w), Tensor(b)), x),
        _check(lambda t: f(Tensor(x), t, Tensor(b)), w),
        _check(lambda t: f(Tensor(x), Tensor(w), t), b),
    )


def _reductions(rng):
    x = _u(rng, 3, 4)
    W0 = rng.uniform(-1, 1, 4)
    return max(
        _check(lambda t: ad.tsum(t), x),
        _check(lambda t: ad.tsum(ad.tsum(t, axis=0) * Tensor(W0)), x),
        _check(lambda t: ad.mean(t), x),
        _check(lambda t: ad.tsum(ad.mean(t, axis=0) * Tensor(W0)), x),
    )


def _extremum(op):
    def run(rng):
        x = _distinct(rng, 3, 5)
        W = rng.uniform(-1, 1, 3)
        return _check(lambda t: ad.tsum(op(t, axis=1) * Tensor(W)), x)
    return run


def _shape_ops(rng):
    x = _u(rng, 2, 3, 4)
    other = _u(rng, 2, 3, 4)
    checks = [
        lambda t: _proj(np.random.default_rng(1), ad.reshape(t, (6, 4))),
        lambda t: _proj(np.random.default_rng(2), ad.transpose(t, (2, 0, 1))),
        lambda t: _proj(np.random.default_rng(3), ad.swap_last(t)),
        lambda t: _proj(np.random.default_rng(4), t[:, 1:, ::2]),
        lambda t: _proj(np.random.default_rng(5), t[np.array([0, 1, 0])]),
        lambda t: _proj(np.random.default_rng(6), ad.concat([t, Tensor(other)], axis=1)),
        lambda t: _proj(np.random.default_rng(7), ad.stack([t, Tensor(other), t], axis=0)),
    ]
    return max(_check(f, x) for f in checks)


def _softmax(rng):
    x = _u(rng, 2, 3, 5)
    W = rng.uniform(-1, 1, (2, 3, 5))
    return max(
        _check(lambda t: ad.tsum(ad.softmax(t, axis=-1) * Tensor(W)), x),
        _check(lambda t: ad.tsum(ad.softmax(t, axis=1) * Tensor(W)), x),
        _check(lambda t: ad.tsum(ad.softmax_rows(t) * Tensor(W)), x),
    )


def _logsumexp(rng):
    x = _u(rng, 3, 5)
    W = rng.uniform(-1, 1, 3)
    return _check(lambda t: ad.tsum(ad.logsumexp(t, axis=-1) * Tensor(W)), x)


def _layer_norm(rng):
    x, g, b = _u(rng, 3, 6), _u(rng, 6), _u(rng, 6)
    W = rng.uniform(-1, 1, (3, 6))
    f = lambda x_, g_, b_: ad.tsum(ad.layer_norm(x_, g_, b_) * Tensor(W))  # noqa: E731
    return max(
        _check(lambda t: f(t, Tensor(g), Tensor(b)), x),
        _check(lambda t: f(Tensor(x), t, Tensor(b)), g),
        _check(lambda t: f(Tensor(x), Tensor(g), t), b),
    )


def _cosine(rng):
    a, b = _u(rng, 3, 5), _u(rng, 5)
    W = rng.uniform(-1, 1, 3)
    return max(
        _check(lambda t: ad.tsum(ad.cosine_sim(t, Tensor(b)) * Tensor(W)), a),
        _check(lambda t: ad.tsum(ad.cosine_sim(Tensor(a), t) * Tensor(W)), b),
    )


def _conv1d(rng):
    x, w, b = _u(rng, 2, 7, 3), _u(rng, 3, 3, 4), _u(rng, 4)
    W = rng.uniform(-1, 1, (2, 7, 4))
    f = lambda x_, w_, b_: ad.tsum(ad.conv1d_temporal(x_, w_, b_) * Tensor(W))  # noqa: E731
    return max(
        _check(lambda t: f(t, Tensor(w), Tensor(b)), x),
        _check(lambda t: f(Tensor(x), t, Tensor(b)), w),
        _check(lambda t: f(Tensor(x), Tensor(w), t), b),
    )


def _conv2d(rng):
    x, w, b = _u(rng, 2, 3, 5, 5), _u(rng, 4, 3, 3, 3), _u(rng, 4)
    W = rng.uniform(-1, 1, (2, 4, 5, 5))
    f = lambda x_, w_, b_: ad.tsum(ad.conv2d(x_, w_, b_) * Tensor(W))  # noqa: E731
    return max(
        _check(lambda t: f(t, Tensor(w), Tensor(b)), x),
        _check(lambda t: f(Tensor(x), t, Tensor(b)), w),
        _check(lambda t: f(Tensor(x), Tensor(w), t), b),
    )


def _context_pool(rng):
    x = _u(rng, 8, 3)
    W = rng.uniform(-1, 1, (8, 3))
    return max(_check(lambda t: ad.tsum(M.context_pool(t, s) * Tensor(W)), x) for s in (1, 4, 8))


def _similarity(rng):
    F, wq, wk = _u(rng, 8, 16), 0.3 * _u(rng, 4, 16, 4), 0.3 * _u(rng, 4, 16, 4)
    W = rng.uniform(-1, 1, (4, 8, 8))
    f = lambda F_, q_, k_: ad.tsum(M.similarity_maps(F_, q_, k_) * Tensor(W))  # noqa: E731
    return max(
        _check(lambda t: f(t, Tensor(wq), Tensor(wk)), F),
        _check(lambda t: f(Tensor(F), t, Tensor(wk)), wq),
        _check(lambda t: f(Tensor(F), Tensor(wq), t), wk),
    )


def _fusion(rng):
    S = rng.dirichlet(np.ones(8), size=(12, 8))
    cw, cb = 0.3 * _u(rng, 4, 12, 3, 3), _u(rng, 4)
    pw, pb = 0.3 * _u(rng, 32, 16), _u(rng, 16)
    W = rng.uniform(-1, 1, (8, 16))
    args = [S, cw, cb, pw, pb]

    def f_at(i):
        def f(t):
            xs = [Tensor(a) for a in args]
            xs[i] = t
            return ad.tsum(M.fuse_similarities(*xs) * Tensor(W))
        return f

    return max(_check(f_at(i), args[i]) for i in range(len(args)))


# --- losses ---------------------------------------------------------------

CYCLES = (CycleSpan(1, 3), CycleSpan(6, 8), CycleSpan(11, 13))
INTERVALS = (IntervalSpan(0, 0), IntervalSpan(4, 5), IntervalSpan(9, 10), IntervalSpan(14, 15))


def _refs(E, phases=1):
    return P.reference_embeddings(E, CYCLES, INTERVALS, phases)


def _pull(rng):
    return _check(lambda t: P.pull_loss(_refs(t)), _u(rng, 16, 6))


def _push(rng):
    return _check(lambda t: P.push_loss(_refs(t)), _u(rng, 16, 6))


def _phase_pull(rng):
    return max(_check(lambda t: P.phase_pull_loss(_refs(t, m), m), _u(rng, 16, 6)) for m in (2, 3))


def _regression(rng):
    p, g = _u(rng, 16), rng.uniform(0, 1, 16)
    return _check(lambda t: P.regression_loss(t, g), p)


def _combined(rng):
    E, p, g = _u(rng, 16, 6), _u(rng, 16), rng.uniform(0, 1, 16)
    w = P.LossWeights(*rng.uniform(0.5, 1.5, 3))
    return max(
        _check(lambda t: P.combined_loss(t, g, _refs(Tensor(E)), w), p),
        _check(lambda t: P.combined_loss(Tensor(p), g, _refs(t), w), E),
    )


def _contrastive(rng):
    return _check(lambda t: P.contrastive_loss(_refs(t), 0.07), _u(rng, 16, 6))


def _triplet(rng):
    # a cosine gap never exceeds 2, so with margin 2 the hinge stays active
    return _check(lambda t: P.triplet_loss(_refs(t), 2.0), _u(rng, 16, 6))


# --- end to end -----------------------------------------------------------

def _e2e_instance(seed):
    rng = np.random.default_rng(seed)
    cfg = M.ModelConfig(**REDUCED_MODEL)
    params = M.init_params(cfg, seed)
    # random biases and gains keep every relu unit and fusion channel alive
    for k, v in params.items():
        if k.endswith((".b", ".bo")):
            params[k] = rng.uniform(0.05, 0.3, v.shape)
        elif k.endswith(".g"):
            params[k] = rng.uniform(0.5, 1.5, v.shape)
    x = _u(rng, cfg.L, cfg.D_in)
    g = rng.uniform(0, 1, cfg.L)
    cycles = (CycleSpan(1, 3), CycleSpan(5, 6))
    intervals = (IntervalSpan(0, 0), IntervalSpan(4, 4), IntervalSpan(7, 7))
    return cfg, params, x, g, cycles, intervals, rng


def end_to_end_error(seed, sample=None):
    """Max relative error of d combined_loss / d params on the reduced model.

    ``sample=None`` differences every coordinate; an integer checks that
    many seeded coordinates per parameter tensor.
    """
    cfg, params, x, g, cycles, intervals, rng = _e2e_instance(seed)

    def loss(ps):
        E, p = M.forward(x, ps, cfg)
        return P.combined_loss(p, g, P.reference_embeddings(E, cycles, intervals))

    pt = M.as_param_tensors(params, requires_grad=True)
    loss(pt).backward()
    analytic = {k: t.grad_or_zeros() for k, t in pt.items()}

    worst = 0.0
    eps = 1e-5
    for name in sorted(params):
        base = params[name]
        n = base.size
        coords = range(n) if sample is None or sample >= n else rng.choice(n, size=sample, replace=False)
        for c in coords:
            vals = []
            for sgn in (1.0, -1.0):
                pert = base.copy()
                pert.reshape(-1)[c] += sgn * eps
                with ad.no_grad():
                    vals.append(loss({**params, name: pert}).item())
            num = (vals[0] - vals[1]) / (2 * eps)
            err = abs(analytic[name].reshape(-1)[c] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return worst


OP_CHECKS = {
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "div": _binary(ad.div, second=lambda rng, *s: _away(rng, *s, gap=0.5)),
    "scale": _unary(lambda t: ad.scale(t, -1.7)),
    "neg": _unary(lambda t: -t),
    "exp": _unary(ad.exp),
    "log": _unary(ad.log, sample=lambda rng, *s: rng.uniform(0.2, 2.0, s)),
    "relu": _unary(ad.relu, sample=_away),
    "sum_mean": _reductions,
    "amax": _extremum(ad.amax),
    "amin": _extremum(ad.amin),
    "shape_ops": _shape_ops,
    "matmul": _matmul,
    "linear": _linear,
    "softmax": _softmax,
    "logsumexp": _logsumexp,
    "layer_norm": _layer_norm,
    "cosine_sim": _cosine,
    "conv1d_temporal": _conv1d,
    "conv2d": _conv2d,
    "context_pool": _context_pool,
    "similarity_maps": _similarity,
    "fuse_similarities": _fusion,
}

LOSS_CHECKS = {
    "pull_loss": _pull,
    "push_loss": _push,
    "regression_loss": _regression,
    "combined_loss": _combined,
    "phase_pull_loss": _phase_pull,
    "contrastive_loss": _contrastive,
    "triplet_loss": _triplet,
}


def run_checks(seeds=SEEDS, e2e=True, e2e_sample=E2E_SAMPLE, report=None):
    """Run the whole suite; returns ``(results, seconds)``.

    The end-to-end check differences every coordinate on the first seed and
    ``e2e_sample`` coordinates per tensor on the others (``None`` = all).
    """
    t0 = time.perf_counter()
    results = []

    def emit(r):
        results.append(r)
        if report:
            report(r)

    for group in (OP_CHECKS, LOSS_CHECKS):
        for name, fn in group.items():
            for seed in range(seeds):
                err = fn(np.random.default_rng([seed, sum(map(ord, name))]))
                emit(CheckResult(name, seed, float(err), OP_TOL))
    if e2e:
        for seed in range(seeds):
            sample = None if seed == 0 else e2e_sample
            emit(CheckResult("end_to_end", seed, end_to_end_error(seed, sample), MODEL_TOL))
    return results, time.perf_counter() - t0
