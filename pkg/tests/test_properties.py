"""Randomised invariants over the data, augmentation and metric layers."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from repcount import train as T
from repcount.data import FeatureSequence, derive_intervals, gaussianize, resample
from repcount.rca import RcaConfig, rca_apply


@st.composite
def annotated(draw, max_cycles=8):
    count = draw(st.integers(0, max_cycles))
    lens = draw(st.lists(st.integers(1, 6), min_size=count, max_size=count))
    gaps = draw(st.lists(st.integers(0, 4), min_size=count + 1, max_size=count + 1))
    spans, pos = [], gaps[0]
    for n, g in zip(lens, gaps[1:]):
        spans.append((pos, pos + n - 1))
        pos += n + g
    L = max(pos, 1)
    return FeatureSequence("h", np.zeros((L, 2)), tuple(spans), count)


@given(annotated())
def test_cycles_and_intervals_tile_the_sequence(seq):
    covered = np.zeros(seq.length, dtype=int)
    for span in list(seq.cycles) + derive_intervals(seq):
        covered[span.start:span.end + 1] += 1
    assert np.all(covered == 1)


@given(annotated())
def test_gaussianize_sums_to_count(seq):
    assert abs(gaussianize(seq).count - seq.count) <= 1e-6


@given(annotated(), st.integers(8, 96))
def test_resample_keeps_count_when_feasible(seq, L):
    if seq.count > L:
        return
    out = resample(seq, L)
    assert out.length == L and out.count == seq.count
    assert all(a.end < b.start for a, b in zip(out.cycles, out.cycles[1:]))
    assert abs(gaussianize(out).count - seq.count) <= 1e-6


@settings(max_examples=50)
@given(annotated(max_cycles=20), st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_rca_never_increases_count(seq, seed, tau):
    out = rca_apply(seq, RcaConfig(tau=tau, prob=0.5), np.random.default_rng(seed))
    assert out.count <= seq.count
    if out is not seq:
        assert 1 <= out.count <= tau and out.cycles == seq.cycles[:out.count]
        assert out.length <= seq.length


@given(st.lists(st.tuples(st.floats(0, 40, allow_nan=False), st.integers(1, 30)), min_size=1, max_size=30))
def test_metrics_match_brute_force(pairs):
    preds, gts = zip(*pairs)
    rounded = [round(p) for p in preds]  # Python rounds half to even
    expect_mae = sum(abs(r - g) / g for r, g in zip(rounded, gts)) / len(gts)
    expect_obo = sum(abs(r - g) <= 1 for r, g in zip(rounded, gts)) / len(gts)
    assert math.isclose(T.mae(preds, gts), expect_mae, rel_tol=1e-12, abs_tol=1e-15)
    assert T.obo(preds, gts) == expect_obo
