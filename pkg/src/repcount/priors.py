"""Segment reference embeddings and the losses built on them.

Cycle and interval embeddings are mean-pooled rows of the frame embedding
matrix ``E``. The pull loss draws each cycle embedding towards the mean of
all cycles, the push loss drives interval embeddings away from it, and the
regression loss fits the density map. Contrastive (InfoNCE-style) and
triplet variants act on the same embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, InapplicableLossError, ShapeError, ValidationError

# keeps the diagonal out of the min over positive pairs
_SELF_PAIR_OFFSET = 1e6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        w = (self.alpha, self.beta, self.gamma)
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ConfigError(f"loss weights must be nonnegative with one positive, got {w}")


@dataclass(frozen=True)
class VariantParams:
    temperature: float = 0.07
    margin: float = 2.0
    phases: int = 1

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if int(self.phases) < 1:
            raise ConfigError(f"phases must be >= 1, got {self.phases}")


@dataclass
class ReferenceEmbeddings:
    """Stacked segment embeddings; ``None`` where a segment family is empty.

    ``per_cycle`` is ``(C, d)``, ``collective`` ``(d,)``, ``per_interval``
    ``(N, d)``. With phases, ``per_phase`` is ``(C, M, d)`` and
    ``phase_collective`` ``(M, d)``.
    """

    per_cycle: Tensor | None
    collective: Tensor | None
    per_interval: Tensor | None
    per_phase: Tensor | None = None
    phase_collective: Tensor | None = None

    @property
    def C(self):
        return 0 if self.per_cycle is None else self.per_cycle.shape[0]

    @property
    def N(self):
        return 0 if self.per_interval is None else self.per_interval.shape[0]

    @property
    def M(self):
        return 1 if self.per_phase is None else self.per_phase.shape[1]

    @property
    def cycle_free(self):
        return self.C == 0


def pooling_matrix(spans, L):
    """Row ``r`` averages frames ``spans[r].start..end`` of an ``L``-frame sequence."""
    P = np.zeros((len(spans), L))
    for r, sp in enumerate(spans):
        s, e = sp if isinstance(sp, tuple) else (sp.start, sp.end)
        if not 0 <= s <= e < L:
            raise ValidationError(f"span [{s}, {e}] out of range for length {L}")
        P[r, s:e + 1] = 1.0 / (e - s + 1)
    return P


def phase_blocks(span, M):
    """Split a cycle into ``M`` contiguous blocks; earlier blocks take the remainder."""
    n = span.end - span.start + 1
    if n < M:
        raise ValidationError(f"cycle [{span.start}, {span.end}] has fewer than {M} frames")
    parts = np.array_split(np.arange(span.start, span.end + 1), M)
    return [(int(p[0]), int(p[-1])) for p in parts]


def reference_embeddings(E, cycles, intervals, phases=1):
    E = ad.as_tensor(E)
    if E.ndim != 2:
        raise ShapeError(f"E must be (L, d), got {E.shape}")
    L, d = E.shape
    per_cycle = collective = per_interval = per_phase = phase_coll = None
    if cycles:
        per_cycle = ad.matmul(Tensor(pooling_matrix(cycles, L)), E)
        collective = ad.mean(per_cycle, axis=0)
        if phases > 1:
            blocks = [b for c in cycles for b in phase_blocks(c, phases)]
            flat = ad.matmul(Tensor(pooling_matrix(blocks, L)), E)
            per_phase = ad.reshape(flat, (len(cycles), phases, d))
            phase_coll = ad.mean(per_phase, axis=0)
    if intervals:
        per_interval = ad.matmul(Tensor(pooling_matrix(intervals, L)), E)
    return ReferenceEmbeddings(per_cycle, collective, per_interval, per_phase, phase_coll)


def _zero():
    return Tensor(0.0)


def pull_loss(refs):
    """Mean of ``1 - cos(R_h, R)`` over cycles; 0 for cycle-free sequences."""
    if refs.cycle_free:
        return _zero()
    return ad.mean(1.0 - ad.cosine_sim(refs.per_cycle, refs.collective))


def phase_pull_loss(refs, phases=None):
    """Phase-wise pull: ``(1/C) sum_h sum_j (1 - cos(R_hj, R^j))``."""
    if refs.cycle_free:
        return _zero()
    if phases == 1 or (phases is None and refs.per_phase is None):
        return pull_loss(refs)
    if refs.per_phase is None or (phases is not None and refs.M != phases):
        raise ValidationError("phase embeddings missing; build them with reference_embeddings(..., phases=M)")
    dist = 1.0 - ad.cosine_sim(refs.per_phase, refs.phase_collective)  # (C, M)
    return ad.tsum(dist) / refs.C


def push_loss(refs):
    """Mean of ``exp(-(1 - cos(R~_k, R)))`` over intervals; 0 when N == 0."""
    if refs.cycle_free or refs.N == 0:
        return _zero()
    cos = ad.cosine_sim(refs.per_interval, refs.collective)
    return ad.mean(ad.exp(cos - 1.0))


def regression_loss(p, g):
    p = ad.as_tensor(p)
    g = np.asarray(g.values if hasattr(g, "values") else g, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeError(f"density maps differ in shape: {p.shape} vs {g.shape}")
    diff = p - Tensor(g)
    return ad.mean(diff * diff)


def combined_loss(p, g, refs, weights=LossWeights()):
    """``alpha*pull + beta*push + gamma*regression``; terms with zero weight are skipped."""
    total = ad.scale(regression_loss(p, g), weights.gamma) if weights.gamma else _zero()
    if refs is None or refs.cycle_free:
        return total
    if weights.alpha:
        total = total + ad.scale(phase_pull_loss(refs), weights.alpha)
    if weights.beta:
        total = total + ad.scale(push_loss(refs), weights.beta)
    return total


def _pairwise_cos(a, b):
    """``(n, d)`` x ``(m, d)`` -> ``(n, m)`` cosine matrix."""
    n, d = a.shape
    m = b.shape[0]
    return ad.cosine_sim(ad.reshape(a, (n, 1, d)), ad.reshape(b, (1, m, d)))


def contrastive_loss(refs, temperature=0.07):
    """InfoNCE over candidates ``{R_h} U {R~_k}`` with ``cos(R_h, R)`` as the positive.

    The anchor's own ``R_h`` stays in the denominator.
    """
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if refs.cycle_free:
        return _zero()
    cands = refs.per_cycle if refs.N == 0 else ad.concat([refs.per_cycle, refs.per_interval], axis=0)
    logits = ad.scale(_pairwise_cos(refs.per_cycle, cands), 1.0 / temperature)
    pos = ad.scale(ad.cosine_sim(refs.per_cycle, refs.collective), 1.0 / temperature)
    return ad.mean(ad.logsumexp(logits, axis=-1) - pos)


def triplet_loss(refs, margin=2.0):
    """Hardest-pair hinge: mean over cycles of ``max(0, margin - Phi_h)``.

    ``Phi_h`` is the least similar other cycle minus the most similar
    interval. Needs at least two cycles and one interval.
    """
    if refs.C < 2 or refs.N == 0:
        raise InapplicableLossError(f"triplet loss needs C >= 2 and N >= 1, got C={refs.C}, N={refs.N}")
    C = refs.C
    pos = _pairwise_cos(refs.per_cycle, refs.per_cycle) + Tensor(np.eye(C) * _SELF_PAIR_OFFSET)
    neg = _pairwise_cos(refs.per_cycle, refs.per_interval)
    phi = ad.amin(pos, axis=1) - ad.amax(neg, axis=1)
    return ad.mean(ad.relu(margin - phi))


def variant_loss(kind, p, g, refs, weights=LossWeights(), variant=VariantParams()):
    """Training objective for a loss selection key.

    ``p2l`` and ``regression_only`` use :func:`combined_loss` (the latter
    with pull/push switched off); ``contrastive`` and ``triplet`` replace
    pull + push by the variant, weighted by ``alpha``. A triplet term that
    does not apply to this sequence is dropped.
    """
    if kind == "regression_only":
        return ad.scale(regression_loss(p, g), weights.gamma)
    if kind == "p2l":
        return combined_loss(p, g, refs, weights)
    reg = ad.scale(regression_loss(p, g), weights.gamma)
    if refs is None or refs.cycle_free or not weights.alpha:
        return reg
    if kind == "contrastive":
        return reg + ad.scale(contrastive_loss(refs, variant.temperature), weights.alpha)
    if kind == "triplet":
        try:
            return reg + ad.scale(triplet_loss(refs, variant.margin), weights.alpha)
        except InapplicableLossError:
            return reg
    raise ConfigError(f"unknown loss selection {kind!r}")
