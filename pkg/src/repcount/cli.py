"""Command-line entry point: ``repcount <command> [flags]``.

Exit status is 0 on success, 1 for validation errors (bad flags, configs,
data, shapes) and 2 for runtime failures. Errors are also written to stderr
as one JSON line. Every command first prints its resolved config as JSON.
"""

from __future__ import annotations

import os
import sys


def _apply_threads():
    """Cap BLAS threads from REPCOUNT_THREADS; must run before numpy loads."""
    raw = os.environ.get("REPCOUNT_THREADS")
    if raw is None:
        return None
    if not raw.isdigit() or int(raw) < 1:
        return f"REPCOUNT_THREADS must be a positive integer, got {raw!r}"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = raw
    return None


_THREAD_ERROR = _apply_threads()

import argparse  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
from pathlib import Path  # noqa: E402

from . import ablation, gradcheck  # noqa: E402
from . import config as C  # noqa: E402
from . import model as M  # noqa: E402
from . import train as T  # noqa: E402
from .data import load_dataset, save_dataset  # noqa: E402
from .errors import ConfigError, ValidationError  # noqa: E402
from .synthetic import gen_dataset  # noqa: E402

CKPT_NAME = "model.ckpt"
SPLITS = ("train", "val", "test")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _echo(command, resolved):
    print(json.dumps({"command": command, "config": resolved}, sort_keys=True), flush=True)


def _override_seed(resolved, seed):
    if seed is not None:
        resolved["seed"] = seed
    return resolved


def _split_dir(data, split):
    """``data/<split>`` when present, else ``data`` itself."""
    data = Path(data)
    return data / split if (data / split / "manifest.json").is_file() else data


def _ckpt_path(ckpt):
    p = Path(ckpt)
    return p / CKPT_NAME if p.is_dir() else p


# --- commands -------------------------------------------------------------

def cmd_gen(args):
    resolved = _override_seed(C.load_config(args.config, "gen"), args.seed)
    resolved = C.resolve_gen(resolved)
    _echo("gen", resolved)
    splits = gen_dataset(C.gen_config(resolved), resolved["n"], tuple(resolved["split"]))
    out = Path(args.out)
    for name, ds in zip(SPLITS, splits):
        save_dataset(ds.sequences, out / name)
    (out / "gen_config.json").write_text(C.dump(resolved) + "\n")
    print(json.dumps({name: len(ds) for name, ds in zip(SPLITS, splits)}))


def cmd_train(args):
    resolved = _override_seed(C.load_config(args.config, "train"), args.seed)
    resolved = C.resolve_train(resolved)
    _echo("train", resolved)
    cfg = C.train_config(resolved)
    data = Path(args.data)
    if not (data / "train" / "manifest.json").is_file():
        raise ValidationError(f"{data} has no train/ split")
    train_set = load_dataset(data / "train")
    val_set = load_dataset(data / "val") if (data / "val" / "manifest.json").is_file() else []

    def progress(entry):
        print(json.dumps(entry), flush=True)

    params, mcfg, history = T.train(train_set, val_set, cfg, on_epoch=progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    M.save_checkpoint(out / CKPT_NAME, params, mcfg, {"min_interval_len": cfg.min_interval_len})
    T.write_log(history, out / "train_log.jsonl")
    (out / "train_config.json").write_text(C.dump(resolved) + "\n")


def _load_model(args):
    mcfg, params, meta = M.load_checkpoint(_ckpt_path(args.ckpt))
    return mcfg, params, int(meta.get("min_interval_len", 1))


def cmd_eval(args):
    mcfg, params, mil = _load_model(args)
    _echo("eval", {"ckpt": str(args.ckpt), "data": str(args.data), "split": args.split, "model": mcfg.to_dict()})
    ds = load_dataset(_split_dir(args.data, args.split))
    report = T.evaluate(ds, params, mcfg, args.split, mil)
    out = Path(args.out) if args.out else _ckpt_path(args.ckpt).parent / f"eval_{args.split}.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    print(json.dumps(report.summary()))


def cmd_export(args):
    mcfg, params, mil = _load_model(args)
    _echo("export-embeddings", {"ckpt": str(args.ckpt), "data": str(args.data), "split": args.split,
                                "model": mcfg.to_dict()})
    ds = load_dataset(_split_dir(args.data, args.split))
    dims = {s.feature_dim for s in ds}
    if dims != {mcfg.D_in}:
        raise ValidationError(f"data feature_dim {sorted(dims)} != model D_in {mcfg.D_in}")
    rows = T.export_embeddings(ds, params, mcfg, mil)
    out = Path(args.out) if args.out else _ckpt_path(args.ckpt).parent / f"embeddings_{args.split}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    T.write_embeddings(rows, out, mcfg.d_model)
    print(json.dumps({"rows": len(rows), "out": str(out)}))


def cmd_ablate(args):
    resolved = _override_seed(C.load_config(args.config, "ablate"), args.seed)
    resolved = C.resolve_ablate(resolved)
    _echo("ablate", {"suite": args.suite, **resolved})
    suites = sorted(ablation.SUITES) if args.suite == "all" else [args.suite]
    data = None
    if args.data:
        data = tuple(load_dataset(_split_dir(args.data, s)) for s in SPLITS)
    out = Path(args.out)
    for suite in suites:
        ablation.write_manifest(resolved, suite, out)
        rows = ablation.run_suite(suite, resolved, out, data, on_run=lambda info: print(json.dumps(info), flush=True))
        for r in rows:
            print(json.dumps(r))


def cmd_grad_check(args):
    seeds = gradcheck.SEEDS if args.seeds is None else args.seeds
    sample = None if args.full else gradcheck.E2E_SAMPLE
    _echo("grad-check", {"seeds": seeds, "op_tol": gradcheck.OP_TOL, "model_tol": gradcheck.MODEL_TOL,
                         "e2e_sample": sample, "reduced_model": gradcheck.REDUCED_MODEL})
    lines = []

    def report(r):
        lines.append(r.line())
        print(lines[-1], flush=True)

    results, seconds = gradcheck.run_checks(seeds, e2e_sample=sample, report=report)
    failed = [r for r in results if not r.passed]
    summary = f"{len(results) - len(failed)}/{len(results)} checks passed in {seconds:.1f}s"
    print(summary)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(lines + [summary]) + "\n")
    if failed:
        raise GradCheckFailed(f"{len(failed)} gradient checks failed, first: {failed[0].line()}")


class GradCheckFailed(RuntimeError):
    pass


# --- parser ---------------------------------------------------------------

def build_parser():
    p = _Parser(prog="repcount", description="Repetition counting with pull-push priors.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=SPLITS)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation suite")
    a.add_argument("--suite", required=True, choices=sorted(ablation.SUITES) + ["all"])
    a.add_argument("--config")
    a.add_argument("--data", help="use this dataset instead of generating one")
    a.add_argument("--out", required=True)
    a.add_argument("--seed", type=int)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("grad-check", help="finite-difference gradient checks")
    c.add_argument("--seeds", type=int)
    c.add_argument("--full", action="store_true", help="difference every end-to-end coordinate on all seeds")
    c.add_argument("--out")
    c.set_defaults(func=cmd_grad_check)

    x = sub.add_parser("export-embeddings", help="write segment reference embeddings as CSV")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--split", default="test", choices=SPLITS)
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)
    return p


def _fail(exc, code):
    record = {"error": type(exc).__name__, "message": str(exc), "exit": code}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    try:
        if _THREAD_ERROR:
            raise ConfigError(_THREAD_ERROR)
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except ValidationError as exc:
        return _fail(exc, 1)
    except FileNotFoundError as exc:
        return _fail(exc, 1)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
