"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
Criterion 5 trains 20 desk-scale models and takes roughly 11 minutes on one core.
"""

import json
import math
import sys
import time

import numpy as np
import pytest

from repcount import ablation as A
from repcount import autodiff as ad
from repcount import cli
from repcount import config as C
from repcount import model as M
from repcount import train as T
from repcount.data import FeatureSequence, derive_intervals, gaussianize
from repcount.gradcheck import LOSS_CHECKS, OP_CHECKS, run_checks
from repcount.priors import (
    ReferenceEmbeddings,
    contrastive_loss,
    pull_loss,
    push_loss,
    reference_embeddings,
    triplet_loss,
)
from repcount.rca import RcaConfig, rca_apply
from repcount.synthetic import GenConfig, gen_dataset, gen_sequence

# desk-scale model for the ablation run; architecture as the full model, narrower
DESK_TRAIN = {
    "epochs": 30,
    "learning_rate": 1e-3,
    "model": {"d_model": 32, "fusion_channels": 8, "head_hidden": 32, "ff_hidden": 32},
}
TINY_TRAIN = {"epochs": 1, "batch_size": 4, "learning_rate": 1e-3, "L": 32,
              "model": {"d_model": 16, "fusion_channels": 4, "head_hidden": 16, "ff_hidden": 16}}
TINY_GEN = {"n": 12, "L": 32, "count_range": [1, 3], "cycle_len_range": [4, 7], "interval_len_range": [2, 4],
            "split": [0.5, 0.25, 0.25]}


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line per criterion past pytest's output capture."""

    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}", flush=True)

    return emit


def _refs(cycles, intervals=()):
    pc = ad.Tensor(np.array(cycles, dtype=float))
    pi = ad.Tensor(np.array(intervals, dtype=float)) if len(intervals) else None
    return ReferenceEmbeddings(pc, ad.mean(pc, axis=0), pi)


def _random_annotations(rng, max_cycles=12):
    count = int(rng.integers(0, max_cycles + 1))
    spans, pos = [], int(rng.integers(0, 5))
    for _ in range(count):
        n = int(rng.integers(1, 9))
        spans.append((pos, pos + n - 1))
        pos += n + int(rng.integers(0, 5))
    return FeatureSequence("a", np.zeros((max(pos, 1), 1)), tuple(spans), count)


# 1 ------------------------------------------------------------------------

def test_criterion_1_gradient_oracle(report):
    results, seconds = run_checks()
    failed = [r for r in results if not r.passed]
    names = {r.name for r in results}
    worst_op = max(r.error for r in results if r.name != "end_to_end")
    worst_e2e = max(r.error for r in results if r.name == "end_to_end")
    covered = set(LOSS_CHECKS) | set(OP_CHECKS) | {"end_to_end"}
    ok = not failed and seconds < 120 and names == covered and len(results) == 10 * len(covered)
    report(1, ok, f"{len(results)} checks over {len(names)} ops/losses x 10 seeds, worst op {worst_op:.1e}, "
                  f"worst end-to-end {worst_e2e:.1e}, {seconds:.0f}s")
    assert not failed, [r.line() for r in failed]
    assert names == covered and len(results) == 10 * len(covered)
    assert seconds < 120


# 2 ------------------------------------------------------------------------

def test_criterion_2_loss_value_oracles(report):
    pull = pull_loss(_refs([[0.3, -1.0, 2.0]] * 3)).item()
    pushes = [push_loss(_refs([[1.0, 2.0]], [iv])).item() for iv in ([2.0, 4.0], [-2.0, 1.0], [-1.0, -2.0])]
    contrastive = contrastive_loss(_refs([[0.4, 1.0]]), 0.07).item()
    triplet = triplet_loss(_refs([[1.0, 0.0], [2.0, 0.0]], [[0.0, 1.0]]), 2.0).item()

    rng = np.random.default_rng(2)
    exact = True
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        gts = rng.integers(1, 30, n)
        preds = rng.uniform(0, 35, n)
        half = rng.random(n) < 0.2  # exact ties exercise round-half-to-even
        preds[half] = np.floor(preds[half]) + 0.5
        rounded = [round(float(p)) for p in preds]
        mae = math.fsum(abs(r - int(g)) / int(g) for r, g in zip(rounded, gts)) / n
        obo = sum(abs(r - int(g)) <= 1 for r, g in zip(rounded, gts)) / n
        exact &= T.mae(preds, gts) == mae and T.obo(preds, gts) == obo

    checks = [
        pull == 0 or abs(pull) <= 1e-12,
        abs(pushes[0] - 1) <= 1e-9,
        abs(pushes[1] - math.exp(-1)) <= 1e-9,
        abs(pushes[2] - math.exp(-2)) <= 1e-9,
        abs(contrastive) <= 1e-12,
        abs(triplet - 1) <= 1e-9,
        exact,
    ]
    report(2, all(checks), f"pull {pull:.1e}, push {[round(p, 9) for p in pushes]}, contrastive {contrastive:.1e}, "
                           f"triplet {triplet:.9f}, 1000 metric cases exact={exact}")
    assert all(checks)


# 3 ------------------------------------------------------------------------

def test_criterion_3_density_conservation(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        seq = _random_annotations(rng)
        g = gaussianize(seq)
        worst = max(worst, abs(g.count - seq.count), abs(M.count_readout(g.values) - seq.count))
    ok = worst <= 1e-6
    report(3, ok, f"100 annotation sets, worst |sum g - count| = {worst:.1e}")
    assert ok


# 4 ------------------------------------------------------------------------

def test_criterion_4_rca_statistics(report):
    spans = tuple((3 * h, 3 * h + 1) for h in range(25))
    seq = FeatureSequence("rca", np.zeros((76, 2)), spans, 25)
    cfg = RcaConfig(tau=15, prob=0.5, seed=0)
    rng = np.random.default_rng(4)
    outs = [rca_apply(seq, cfg, rng) for _ in range(10_000)]
    changed = [o for o in outs if o is not seq]
    frac = len(changed) / len(outs)
    counts = {o.count for o in changed}
    ok = 0.48 <= frac <= 0.52 and min(counts) >= 1 and max(counts) <= 15 and all(o.count <= seq.count for o in outs)
    report(4, ok, f"modified fraction {frac:.4f}, new counts in [{min(counts)}, {max(counts)}]")
    assert ok


# 5 ------------------------------------------------------------------------

def test_criterion_5_pull_push_ablation_direction(tmp_path, report):
    base = C.resolve({**DESK_TRAIN, "seeds": 5}, "ablate")
    assert base["gen"]["n"] == 200 and base["gen"]["L"] == 64 and base["gen"]["D"] == 16
    t0 = time.perf_counter()
    rows = A.run_suite("losses", base, tmp_path)
    seconds = time.perf_counter() - t0
    table = {r["config"]: r for r in rows}
    full, reg = table["pull=on,push=on"]["median_MAE"], table["pull=off,push=off"]["median_MAE"]
    cells = ", ".join(f"{r['config']} {r['median_MAE']:.4f}" for r in rows)
    # training-loss sanity on the same runs: epoch 20 below epoch 1, median over seeds
    logs = [[json.loads(line) for line in A.train_log_path(tmp_path, "losses", "pull=on,push=on", k).open()]
            for k in range(5)]
    loss1, loss20 = np.median([h[0]["train_loss"] for h in logs]), np.median([h[19]["train_loss"] for h in logs])
    ok = full < reg and seconds < 900 and loss20 < loss1
    report(5, ok, f"median test MAE over 5 seeds: {cells}; P2L train loss epoch 1 {loss1:.3f} -> "
                  f"epoch 20 {loss20:.3f}; {seconds / 60:.1f} min")
    assert seconds < 900
    assert loss20 < loss1
    assert full < reg


# 6 ------------------------------------------------------------------------

def test_criterion_6_ablation_table_structure(tmp_path, report):
    cfg = tmp_path / "ablate.json"
    cfg.write_text(json.dumps({**TINY_TRAIN, "gen": TINY_GEN}))
    code = cli.main(["ablate", "--suite", "all", "--config", str(cfg), "--out", str(tmp_path / "out")])
    want = {"phases": 3, "losses": 4, "variants": 3, "rca": 2, "sampling_rate": 2}
    shape, recomputed = {}, True
    for suite, n in want.items():
        rows = A.read_table(tmp_path / "out" / f"{suite}.csv")
        shape[suite] = len(rows)
        again = A.table_from_reports(suite, tmp_path / "out", 5)
        recomputed &= again == rows and all(r["seed_count"] == 5 for r in rows)
    ok = code == 0 and shape == want and recomputed
    report(6, ok, f"rows per table {shape}, every cell recomputed from per-seed reports={recomputed}")
    assert ok


# 7 ------------------------------------------------------------------------

def test_criterion_7_determinism_and_persistence(tmp_path, report):
    tr, va, _ = gen_dataset(GenConfig(**{k: v for k, v in TINY_GEN.items() if k not in ("n", "split")}), 12,
                            (0.5, 0.25, 0.25))
    cfg = C.train_config(C.resolve({**TINY_TRAIN, "epochs": 2, "rca": True, "tau": 2}, "train"))
    a, b = T.train(tr, va, cfg), T.train(tr, va, cfg)
    train_same = json.dumps(a[2]) == json.dumps(b[2]) and all(a[0][k].tobytes() == b[0][k].tobytes() for k in a[0])

    p1 = M.save_checkpoint(tmp_path / "a.ckpt", a[0], a[1])
    mcfg, params, meta = M.load_checkpoint(p1)
    p2 = M.save_checkpoint(tmp_path / "b.ckpt", params, mcfg, meta)
    ckpt_same = p1.read_bytes() == p2.read_bytes()

    g = GenConfig(seed=123)
    gen_same = all(gen_sequence(g, i).features.tobytes() == gen_sequence(g, i).features.tobytes() for i in range(20))
    full, _, _ = gen_dataset(g, 20, (1.0, 0.0, 0.0))
    gen_same &= all(s.features.tobytes() == gen_sequence(g, i).features.tobytes() for i, s in enumerate(full))

    ok = train_same and ckpt_same and gen_same
    report(7, ok, f"train bit-identical={train_same}, checkpoint round-trip byte-identical={ckpt_same}, "
                  f"generation byte-identical={gen_same}")
    assert ok


# 8 ------------------------------------------------------------------------

def _interval_similarity(cfg, n=100):
    sims = []
    for i in range(n):
        s = gen_sequence(cfg, i)
        refs = reference_embeddings(ad.Tensor(s.features), s.cycles, derive_intervals(s))
        if refs.per_interval is not None:
            sims.extend(ad.cosine_sim(refs.per_interval, refs.collective.data).data.tolist())
    return float(np.mean(sims))


def test_criterion_8_separability_premise(report):
    noiseless = GenConfig(noise_std=0.0, warp_strength=0.0, cycle_len_range=(7, 7), count_range=(2, 5))
    worst = 0.0
    for i in range(100):
        s = gen_sequence(noiseless, i)
        refs = reference_embeddings(ad.Tensor(s.features), s.cycles, derive_intervals(s))
        cos = ad.cosine_sim(refs.per_cycle, refs.per_cycle.data[0]).data
        worst = max(worst, float(np.max(np.abs(cos - 1))))
    plain = _interval_similarity(GenConfig(**{**noiseless.to_dict(), "distractor_prob": 0.0}))
    distract = _interval_similarity(GenConfig(**{**noiseless.to_dict(), "distractor_prob": 1.0}))
    ok = worst <= 1e-9 and distract < plain
    report(8, ok, f"worst |cos(R_h, R_1) - 1| = {worst:.1e}; mean cycle-interval cos {plain:.3f} without "
                  f"distractors, {distract:.3f} with")
    assert ok


# --------------------------------------------------------------------------

def test_cli_gen_then_train_smoke(tmp_path):
    train_cfg = tmp_path / "train.json"
    train_cfg.write_text(json.dumps({**DESK_TRAIN, "epochs": 1}))
    assert cli.main(["gen", "--out", str(tmp_path / "data")]) == 0
    assert cli.main(["train", "--data", str(tmp_path / "data"), "--config", str(train_cfg),
                     "--out", str(tmp_path / "ckpt")]) == 0
    assert (tmp_path / "ckpt" / "model.ckpt").is_file()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
