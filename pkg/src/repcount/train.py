"""Adam training loop, MAE/OBO metrics, evaluation reports and embedding export."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as M
from .data import derive_intervals, gaussianize, resample
from .errors import ConfigError, DegenerateInputError, DivergenceError, ValidationError
from .priors import LossWeights, VariantParams, reference_embeddings, variant_loss
from .rca import RcaConfig, compute_tau, rca_apply
from .synthetic import make_rng

log = logging.getLogger(__name__)

LOSS_KINDS = ("p2l", "contrastive", "triplet", "regression_only")
EVAL_CHUNK = 32


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-4
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    loss: str = "p2l"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    temperature: float = 0.07
    margin: float = 2.0
    phases: int = 1
    rca: bool = False
    tau: float | None = None
    prob: float = 0.5
    L: int = 64
    seed: int = 0
    min_interval_len: int = 1
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.epochs) < 1 or int(self.batch_size) < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if int(self.L) < 1:
            raise ConfigError("L must be positive")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1) or self.adam_eps <= 0:
            raise ConfigError("adam betas must lie in [0, 1) and epsilon be positive")
        if self.tau is not None and self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if not 0.0 <= self.prob <= 1.0:
            raise ConfigError("prob must lie in [0, 1]")
        object.__setattr__(self, "betas", (float(b1), float(b2)))
        self.weights  # validates
        self.variant
        unknown = set(self.model) - {f.name for f in fields(M.ModelConfig)} - {"L", "D_in"}
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        if "L" in self.model or "D_in" in self.model:
            raise ConfigError("model.L and model.D_in are derived from L and the data")

    @property
    def weights(self):
        if self.loss == "regression_only":
            return LossWeights(0.0, 0.0, self.gamma)
        return LossWeights(self.alpha, self.beta, self.gamma)

    @property
    def variant(self):
        return VariantParams(self.temperature, self.margin, self.phases)

    def model_config(self, D_in):
        return M.ModelConfig(L=self.L, D_in=D_in, **self.model)

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _rounded(preds):
    return np.rint(np.asarray(preds, dtype=np.float64))


def mae(preds, gts):
    """Mean of ``|round(T) - T_gt| / T_gt``; zero-count ground truths are dropped."""
    preds, gts = _rounded(preds), np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise ValidationError(f"{preds.size} predictions for {gts.size} ground truths")
    keep = gts > 0
    if not keep.all():
        warnings.warn(f"MAE skips {int((~keep).sum())} zero-count sequence(s)", stacklevel=2)
    if not keep.any():
        return float("nan")
    # fsum is correctly rounded, so any recomputation order agrees bit for bit
    return math.fsum(np.abs(preds[keep] - gts[keep]) / gts[keep]) / int(keep.sum())


def obo(preds, gts):
    """Fraction of sequences with ``|round(T) - T_gt| <= 1``."""
    preds, gts = _rounded(preds), np.asarray(gts, dtype=np.float64)
    if preds.shape != gts.shape:
        raise ValidationError(f"{preds.size} predictions for {gts.size} ground truths")
    if not preds.size:
        return float("nan")
    return int(np.count_nonzero(np.abs(preds - gts) <= 1)) / preds.size


@dataclass
class EvalReport:
    split: str
    records: list  # dicts with id, count, predicted, rounded
    mae: float
    obo: float

    @classmethod
    def from_predictions(cls, split, ids, gts, preds):
        recs = [
            {"id": i, "count": int(g), "predicted": float(p), "rounded": M.rounded_count(p)}
            for i, g, p in zip(ids, gts, preds)
        ]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(split, recs, mae(preds, gts), obo(preds, gts))

    def recompute(self):
        preds = [r["predicted"] for r in self.records]
        gts = [r["count"] for r in self.records]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return mae(preds, gts), obo(preds, gts)

    def summary(self):
        return {"type": "summary", "split": self.split, "K": len(self.records), "mae": self.mae, "obo": self.obo}

    def to_jsonl(self):
        lines = [json.dumps({"type": "sequence", **r}) for r in self.records]
        lines.append(json.dumps(self.summary()))
        return "\n".join(lines) + "\n"

    def save(self, path):
        Path(path).write_text(self.to_jsonl())

    @classmethod
    def load(cls, path):
        records, summary = [], None
        for line in Path(path).read_text().splitlines():
            obj = json.loads(line)
            if obj.pop("type") == "summary":
                summary = obj
            else:
                records.append(obj)
        return cls(summary["split"], records, summary["mae"], summary["obo"])


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    """A sequence resampled to the model length with its targets."""

    id: str
    x: np.ndarray
    g: np.ndarray
    cycles: tuple
    intervals: list
    count: int


def prepare(seq, L, min_interval_len=1):
    seq = resample(seq, L)
    return Prepared(
        seq.id,
        seq.features,
        gaussianize(seq, L).values,
        seq.cycles,
        derive_intervals(seq, min_interval_len),
        seq.count,
    )


# ---------------------------------------------------------------------------
# optimiser
# ---------------------------------------------------------------------------

class Adam:
    """Adam with bias correction; updates a dict of numpy arrays in place."""

    def __init__(self, params, lr=1e-4, betas=(0.9, 0.999), eps=1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------------------
# training and evaluation
# ---------------------------------------------------------------------------

def batch_loss(batch, E, p, cfg):
    """Mean per-sequence objective over a forward pass of ``batch``."""
    kind, w, var = cfg.loss, cfg.weights, cfg.variant
    needs_refs = kind != "regression_only" and (w.alpha or w.beta)
    total = None
    for b, item in enumerate(batch):
        refs = None
        if needs_refs and item.cycles:
            phases = var.phases if kind == "p2l" else 1
            refs = reference_embeddings(E[b], item.cycles, item.intervals, phases)
        term = variant_loss(kind, p[b], item.g, refs, w, var)
        total = term if total is None else total + term
    return total / len(batch)


def predict_counts(items, params, mcfg):
    preds = []
    with ad.no_grad():
        for i in range(0, len(items), EVAL_CHUNK):
            chunk = items[i:i + EVAL_CHUNK]
            _, p = M.forward(np.stack([it.x for it in chunk]), params, mcfg)
            preds.extend(M.count_readout(p).tolist())
    return preds


def evaluate(dataset, params, mcfg, split="test", min_interval_len=1):
    """Forward every sequence and aggregate MAE/OBO."""
    if not len(dataset):
        raise ValidationError(f"cannot evaluate an empty {split} split")
    M.check_params(params, mcfg)
    items = [prepare(s, mcfg.L, min_interval_len) for s in dataset]
    if items[0].x.shape[1] != mcfg.D_in:
        raise ValidationError(f"data feature_dim {items[0].x.shape[1]} != model D_in {mcfg.D_in}")
    preds = predict_counts(items, params, mcfg)
    return EvalReport.from_predictions(split, [it.id for it in items], [it.count for it in items], preds)


def train(train_set, val_set, cfg, params=None, on_epoch=None):
    """Train a counting model.

    Returns ``(params, model_config, log)`` where ``params`` are the ones
    with the best validation MAE (the final ones without a validation set)
    and ``log`` holds one dict per epoch.
    """
    train_set, val_set = list(train_set), list(val_set or [])
    if not train_set:
        raise ValidationError("training split is empty")
    dims = {s.feature_dim for s in train_set + val_set}
    if len(dims) != 1:
        raise ValidationError(f"sequences disagree on feature_dim: {sorted(dims)}")
    mcfg = cfg.model_config(dims.pop())
    params = M.init_params(mcfg, cfg.seed) if params is None else {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    M.check_params(params, mcfg)
    opt = Adam(params, cfg.learning_rate, cfg.betas, cfg.adam_eps)

    rca_cfg = None
    if cfg.rca:
        tau = cfg.tau if cfg.tau is not None else max(1.0, compute_tau(train_set))
        rca_cfg = RcaConfig(tau=tau, prob=cfg.prob, seed=cfg.seed)
    static = None if rca_cfg else [prepare(s, cfg.L, cfg.min_interval_len) for s in train_set]
    val_items = [prepare(s, cfg.L, cfg.min_interval_len) for s in val_set]

    best, best_mae, history = None, math.inf, []
    for epoch in range(cfg.epochs):
        rng = make_rng(cfg.seed, 1 + epoch)
        order = rng.permutation(len(train_set))
        if rca_cfg:
            items = [prepare(rca_apply(train_set[i], rca_cfg, rng), cfg.L, cfg.min_interval_len) for i in order]
        else:
            items = [static[i] for i in order]
        losses = []
        for start in range(0, len(items), cfg.batch_size):
            batch = items[start:start + cfg.batch_size]
            P = M.as_param_tensors(params, requires_grad=True)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    E, p = M.forward(np.stack([it.x for it in batch]), P, mcfg)
                    loss = batch_loss(batch, E, p, cfg)
            except DegenerateInputError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch + 1}, batch {start // cfg.batch_size}") from exc
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch + 1}, batch {start // cfg.batch_size}")
            loss.backward()
            opt.step(params, {k: t.grad_or_zeros() for k, t in P.items()})
            bad = [k for k, v in params.items() if not np.isfinite(v).all()]
            if bad:
                raise DivergenceError(f"non-finite parameters {bad[:3]} after epoch {epoch + 1}, batch {start // cfg.batch_size}")
            losses.append(value)
        entry = {"epoch": epoch + 1, "train_loss": float(np.mean(losses))}
        if val_items:
            preds = predict_counts(val_items, params, mcfg)
            gts = [it.count for it in val_items]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                entry["val_mae"], entry["val_obo"] = mae(preds, gts), obo(preds, gts)
            score = entry["val_mae"] if math.isfinite(entry["val_mae"]) else -entry["val_obo"]
            if best is None or score < best_mae:
                best_mae, best = score, copy.deepcopy(params)
        history.append(entry)
        log.info("epoch %d: %s", epoch + 1, entry)
        if on_epoch:
            on_epoch(entry)
    return (best if best is not None else params), mcfg, history


def write_log(history, path):
    Path(path).write_text("".join(json.dumps(e) + "\n" for e in history))


# ---------------------------------------------------------------------------
# embedding export
# ---------------------------------------------------------------------------

def export_embeddings(dataset, params, mcfg, min_interval_len=1):
    """One row ``(id, kind, f0..f{d-1})`` per cycle and interval segment."""
    rows = []
    with ad.no_grad():
        for seq in dataset:
            item = prepare(seq, mcfg.L, min_interval_len)
            E, _ = M.forward(item.x, params, mcfg)
            refs = reference_embeddings(E, item.cycles, item.intervals)
            if refs.per_cycle is not None:
                rows += [(item.id, "cycle", *r) for r in refs.per_cycle.data.tolist()]
            if refs.per_interval is not None:
                rows += [(item.id, "interval", *r) for r in refs.per_interval.data.tolist()]
    return rows


def write_embeddings(rows, path, d_model):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "kind"] + [f"f{i}" for i in range(d_model)])
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])
