"""Random Count Augmentation.

Sequences whose count reaches the threshold ``tau`` are, with probability
``prob``, cut down to a uniformly drawn smaller count. The cut keeps the
first ``T_new`` cycles plus half of the gap that follows the last kept one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import FeatureSequence
from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class RcaConfig:
    tau: float = 15.0
    prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.tau >= 1:
            raise ConfigError(f"RCA tau must be >= 1, got {self.tau}")
        if not 0.0 <= self.prob <= 1.0:
            raise ConfigError(f"RCA prob must lie in [0, 1], got {self.prob}")


def compute_tau(dataset):
    counts = [seq.count for seq in dataset]
    if not counts:
        raise ValidationError("cannot compute tau over an empty dataset")
    return float(np.mean(counts))


def crop_to_count(seq, new_count):
    """Keep the first ``new_count`` cycles and the frames up to the crop point."""
    last = seq.cycles[new_count - 1]
    nxt = seq.cycles[new_count].start if new_count < len(seq.cycles) else seq.length
    gap = nxt - last.end - 1
    stop = min(seq.length - 1, last.end + gap // 2)
    return FeatureSequence(seq.id, seq.features[: stop + 1], seq.cycles[:new_count], new_count)


def rca_apply(seq, cfg, rng):
    """Augment one sequence; ``rng`` is a numpy Generator.

    An unmodified sequence is returned as the same object. Ineligible
    sequences consume no randomness.
    """
    if seq.count < cfg.tau:
        return seq
    if rng.random() >= cfg.prob:
        return seq
    new_count = min(int(rng.integers(1, math.floor(cfg.tau) + 1)), seq.count)
    return crop_to_count(seq, new_count)
