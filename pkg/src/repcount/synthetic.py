"""Deterministic generator of irregular repetitive feature sequences.

Every sequence is a function of ``(cfg.seed, index)`` alone. The pair is
mixed with SplitMix64 into a 64-bit key that seeds numpy's PCG64, so two
calls with the same pair produce the same bytes on any platform.

Cycles replay one smooth motif (a constant offset plus three Fourier
harmonics per dimension) under a random monotone time warp and amplitude
jitter. Intervals are slow drift around a different base vector, or, with
probability ``distractor_prob``, one period of an unrelated motif.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import CycleSpan, FeatureSequence
from .errors import ConfigError, GenerationError

MASK64 = (1 << 64) - 1
N_HARMONICS = 3
MAX_PLACEMENT_ATTEMPTS = 100


def splitmix64(x):
    """One SplitMix64 output for state ``x`` (after the golden-ratio increment)."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed, index):
    return splitmix64(splitmix64(seed & MASK64) ^ (index & MASK64))


def make_rng(seed, index=0):
    return np.random.Generator(np.random.PCG64(stream_key(seed, index)))


@dataclass(frozen=True)
class GenConfig:
    L: int = 64
    D: int = 16
    count_range: tuple = (1, 6)
    cycle_len_range: tuple = (5, 10)
    interval_len_range: tuple = (2, 6)
    noise_std: float = 0.1
    warp_strength: float = 0.3
    distractor_prob: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name in ("count_range", "cycle_len_range", "interval_len_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (int(lo), int(hi)))
            if lo > hi or lo < 0:
                raise ConfigError(f"{name} must be a nonempty nonnegative range, got {(lo, hi)}")
        if self.L < 1 or self.D < 1:
            raise ConfigError("L and D must be positive")
        if self.cycle_len_range[0] < 1:
            raise ConfigError("cycles need at least one frame")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        for name in ("warp_strength", "distractor_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        cmax = self.count_range[1]
        need = cmax * self.cycle_len_range[0] + max(cmax - 1, 0) * self.interval_len_range[0]
        if need > self.L:
            raise ConfigError(f"layout infeasible: {cmax} cycles need at least {need} > L={self.L} frames")

    def to_dict(self):
        d = asdict(self)
        for k in ("count_range", "cycle_len_range", "interval_len_range"):
            d[k] = list(d[k])
        return d


@dataclass
class GenDataset:
    sequences: list
    config: GenConfig

    def __len__(self):
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)


def _motif(rng, D):
    offset = rng.normal(size=D)
    coef = rng.normal(size=(2, N_HARMONICS, D)) / np.arange(1, N_HARMONICS + 1)[:, None]

    def at(phase):
        k = np.arange(1, N_HARMONICS + 1)
        ang = 2 * np.pi * np.outer(phase, k)  # (T, H)
        return offset + np.cos(ang) @ coef[0] + np.sin(ang) @ coef[1]

    at.rest = offset  # mean pose over one period
    return at


def _layout(cfg, rng, count):
    lo, hi = cfg.cycle_len_range
    ilo, ihi = cfg.interval_len_range
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        lens = rng.integers(lo, hi + 1, size=count)
        gaps = rng.integers(ilo, ihi + 1, size=max(count - 1, 0))
        slack = cfg.L - lens.sum() - gaps.sum()
        if slack >= 0:
            lead = int(rng.integers(0, slack + 1))
            spans = []
            pos = lead
            for h, n in enumerate(lens):
                spans.append((pos, pos + int(n) - 1))
                pos += int(n) + (int(gaps[h]) if h < count - 1 else 0)
            return spans
    raise GenerationError(f"could not place {count} cycles in {cfg.L} frames")


def gen_sequence(cfg, index):
    rng = make_rng(cfg.seed, index)
    D = cfg.D
    count = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    motif = _motif(rng, D)
    distractor = _motif(rng, D)
    spans = _layout(cfg, rng, count) if count else []

    feats = np.empty((cfg.L, D))
    covered = np.zeros(cfg.L, dtype=bool)
    for s, e in spans:
        n = e - s + 1
        u = np.arange(n) / n
        bend = rng.uniform(-1.0, 1.0)
        phase = u + 0.9 * cfg.warp_strength * bend * np.sin(np.pi * u) / np.pi
        amp = rng.uniform(0.8, 1.2)
        feats[s:e + 1] = amp * motif(phase)
        covered[s:e + 1] = True

    # intervals: maximal uncovered runs
    edges = np.flatnonzero(np.diff(np.concatenate([[0], (~covered).astype(int), [0]])))
    for s, e in zip(edges[::2], edges[1::2] - 1):
        n = e - s + 1
        u = np.arange(n) / n
        if rng.random() < cfg.distractor_prob:
            feats[s:e + 1] = distractor(u)
        else:
            direction = rng.normal(size=D)
            shift = rng.uniform(0, np.pi)
            # a pause: slow drift around the action's mean pose
            feats[s:e + 1] = motif.rest + 0.5 * np.outer(np.sin(np.pi * u + shift), direction)

    if cfg.noise_std > 0:
        feats = feats + rng.normal(scale=cfg.noise_std, size=feats.shape)
    # round through float32 so in-memory and on-disk sequences agree exactly
    feats = feats.astype("<f4").astype(np.float64)
    return FeatureSequence(f"seq{index:05d}", feats, tuple(CycleSpan(s, e) for s, e in spans), count)


def split_sizes(n, fractions):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be three nonnegative numbers summing to 1, got {fractions}")
    n_train = int(round(n * fractions[0]))
    n_val = min(int(round(n * fractions[1])), n - n_train)
    return n_train, n_val, n - n_train - n_val


def gen_dataset(cfg, n, split=(0.8, 0.1, 0.1)):
    """Generate ``n`` sequences and partition them by index into train/val/test."""
    n_train, n_val, _ = split_sizes(n, split)
    seqs = [gen_sequence(cfg, i) for i in range(n)]
    return (
        GenDataset(seqs[:n_train], cfg),
        GenDataset(seqs[n_train:n_train + n_val], cfg),
        GenDataset(seqs[n_train + n_val:], cfg),
    )
