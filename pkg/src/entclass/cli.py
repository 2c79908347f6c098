"""Command-line entry point: ``entclass <command> ...``.

Commands: gen, train, eval, sweep, noise-sweep, gradcheck, inspect.

Exit codes: 0 success, 2 usage, 3 schema/metadata mismatch, 4 numeric
failure, 5 I/O or file-integrity error. Set ``ENTCLASS_FLOAT64=1`` for
64-bit network arithmetic.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__, dataset, models, nn, qsim, traineval
from ._binfmt import FormatError, atomic_write
from .models import ModelConfig
from .traineval import TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5

log = logging.getLogger("entclass")
_argv: list = []  # argv of the running invocation, echoed into manifests


class UsageError(Exception):
    pass


class SchemaError(Exception):
    pass


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_path, command, config, seeds, inputs, outputs, started):
    manifest = {
        "command": command,
        "argv": list(_argv),
        "config": config,
        "seeds": seeds,
        "inputs": [os.fspath(p) for p in inputs],
        "outputs": [os.fspath(p) for p in outputs],
        "tool_version": __version__,
        "numeric_mode": "float64" if os.environ.get("ENTCLASS_FLOAT64") else "float32",
        "started": started,
        "finished": _now(),
    }
    atomic_write(os.fspath(out_path) + ".manifest.json",
                 json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True, default=traineval._jsonable) + "\n")


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _shots_list(text):
    out = []
    for v in text.split(","):
        v = v.strip().lower()
        if v in ("exact", "-1"):
            out.append(qsim.EXACT)
        elif v:
            out.append(int(v))
    return out


def _shots(text):
    return _shots_list(text)[0]


# ---------------------------------------------------------------------------
# config resolution


def _load_config_file(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise SchemaError(f"config file has unknown sections {sorted(unknown)}")
    return cfg


def resolve_configs(args, n_qubits, K, arch):
    file_cfg = _load_config_file(getattr(args, "config", None))
    mcfg = ModelConfig.for_qubits(arch, n_qubits, K=K, **file_cfg.get("model", {}))
    if getattr(args, "model_seed", None) is not None:
        mcfg = mcfg.with_(seed=args.model_seed)
    if getattr(args, "hidden", None):
        mcfg = mcfg.with_(lstm_hidden=args.hidden)
    tcfg = TrainConfig.default(**file_cfg.get("train", {}))
    over = {}
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"),
                      ("batch_size", "batch_size"), ("seed", "seed"), ("eval_every", "eval_every")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    if over:
        tcfg = TrainConfig(**{**tcfg.to_dict(), **over})
    return mcfg, tcfg


def _check_compat(ds, mcfg, what):
    if ds.M != mcfg.M:
        raise SchemaError(f"{what}: M={ds.M} but model expects M={mcfg.M}")
    if ds.n_classes != mcfg.K:
        raise SchemaError(f"{what}: {ds.n_classes} classes but model expects K={mcfg.K}")


def _check_same_schema(a, b):
    for key in ("n_qubits", "n_classes", "scheme", "roster"):
        if a.metadata.get(key) != b.metadata.get(key):
            raise SchemaError(f"train/test metadata disagree on {key!r}: "
                              f"{a.metadata.get(key)!r} vs {b.metadata.get(key)!r}")
    if a.M != b.M:
        raise SchemaError(f"train/test feature lengths differ ({a.M} vs {b.M})")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args):
    started = _now()
    if args.roster:
        names = [s.strip() for s in args.roster.split(",") if s.strip()]
        roster = qsim.make_roster(names)
        if roster[0].n_qubits != args.qubits:
            raise UsageError(f"roster is for {roster[0].n_qubits} qubits, --qubits is {args.qubits}")
    else:
        if args.qubits not in qsim.DEFAULT_ROSTERS:
            raise UsageError(f"unsupported qubit count {args.qubits}: default rosters exist for 3 and 4")
        roster = qsim.default_roster(args.qubits)
    if args.samples < len(roster):
        raise UsageError(f"--samples must be at least the class count ({len(roster)})")
    try:
        noise = qsim.NoiseConfig(args.epsilon, args.shots)
        bases = qsim.build_basis_set(args.qubits, args.scheme)
    except ValueError as exc:
        raise UsageError(str(exc))
    ds = dataset.generate(args.samples, roster, bases, noise, args.seed, workers=args.workers)
    dataset.write(ds, args.out)
    outputs = [args.out]
    if args.csv:
        dataset.to_csv(ds, args.csv)
        outputs.append(args.csv)
    write_manifest(args.out, "gen", {**ds.metadata, "samples": args.samples, "workers": args.workers},
                   {"root_seed": args.seed}, [], outputs, started)
    print(f"wrote {len(ds)} samples (M={ds.M}, K={len(roster)}) to {args.out}")
    return EXIT_OK


def _metrics_payload(m, ds, mcfg, tcfg, extra=None):
    payload = {
        "metrics": m.to_dict(),
        "classes": ds.metadata.get("roster"),
        "n_samples": len(ds),
        "model_config": mcfg.to_dict(),
        "train_config": tcfg.to_dict() if tcfg else None,
        "tool_version": __version__,
    }
    payload.update(extra or {})
    return payload


def cmd_train(args):
    started = _now()
    train_ds = dataset.read(args.data)
    test_ds = dataset.read(args.test_data) if args.test_data else None
    if test_ds is not None:
        _check_same_schema(train_ds, test_ds)
    mcfg, tcfg = resolve_configs(args, train_ds.metadata.get("n_qubits", 3), train_ds.n_classes,
                                 args.arch.upper())
    _check_compat(train_ds, mcfg, args.data)
    model = models.build(mcfg)
    t0 = time.perf_counter()
    _, hist = traineval.train(model, train_ds, test_ds, tcfg)
    seconds = time.perf_counter() - t0
    models.save_checkpoint(model, args.out)
    outputs = [args.out]
    loss_path = args.loss_out or os.fspath(args.out) + ".loss.csv"
    hist.write_csv(loss_path)
    outputs.append(loss_path)
    eval_ds = test_ds if test_ds is not None else train_ds
    m = traineval.evaluate(model, eval_ds)
    if args.metrics_out:
        _write_json(args.metrics_out, _metrics_payload(
            m, eval_ds, mcfg, tcfg,
            {"evaluated_on": os.fspath(args.test_data or args.data),
             "final_loss": hist.loss[-1] if hist.loss else None,
             "seeds": {"model": mcfg.seed, "train": tcfg.seed,
                       "data": train_ds.metadata.get("root_seed")},
             "timing": {"wall_clock_seconds": seconds,
                        "epoch_seconds": hist.epoch_seconds}}))
        outputs.append(args.metrics_out)
    if args.confusion_out:
        m.write_confusion_csv(args.confusion_out, eval_ds.metadata.get("roster"))
        outputs.append(args.confusion_out)
    write_manifest(args.out, "train", {"model": mcfg.to_dict(), "train": tcfg.to_dict()},
                   {"model": mcfg.seed, "train": tcfg.seed}, [args.data] + (
                       [args.test_data] if args.test_data else []), outputs, started)
    print(f"{mcfg.architecture}: accuracy {m.accuracy:.4f} on {len(eval_ds)} samples; "
          f"final loss {hist.loss[-1] if hist.loss else float('nan'):.4f}")
    return EXIT_OK


def cmd_eval(args):
    started = _now()
    model = models.load_checkpoint(args.checkpoint)
    ds = dataset.read(args.data)
    _check_compat(ds, model.config, args.data)
    m = traineval.evaluate(model, ds)
    outputs = []
    if args.metrics_out:
        _write_json(args.metrics_out, _metrics_payload(m, ds, model.config, None,
                                                       {"evaluated_on": os.fspath(args.data)}))
        outputs.append(args.metrics_out)
        write_manifest(args.metrics_out, "eval", {"model": model.config.to_dict()}, {},
                       [args.checkpoint, args.data], outputs, started)
    if args.confusion_out:
        m.write_confusion_csv(args.confusion_out, ds.metadata.get("roster"))
    print(f"accuracy {m.accuracy:.4f} on {len(ds)} samples")
    print("F1 per class: " + ", ".join(f"{v:.3f}" for v in m.f1))
    return EXIT_OK


def _archs(text):
    archs = [a.strip().upper() for a in text.split(",") if a.strip()]
    bad = [a for a in archs if a not in models.ARCHITECTURES]
    if bad:
        raise UsageError(f"unknown architecture(s) {bad}; choose from {models.ARCHITECTURES}")
    return archs


def _write_sweep(args, rows, config, seeds, inputs, started):
    traineval.write_rows_csv(rows, args.out)
    summary = {"rows": len(rows), "summary": traineval.summarize(rows), "config": config,
               "tool_version": __version__}
    outputs = [args.out]
    summary_path = args.summary_out or os.fspath(args.out) + ".summary.json"
    _write_json(summary_path, summary)
    outputs.append(summary_path)
    write_manifest(args.out, args.command, config, seeds, inputs, outputs, started)
    for s in summary["summary"]:
        print(f"{s['arch']:>7} eps={s['noise_epsilon']:<5} shots={s['noise_shots']:<6} "
              f"N={s['size']:<6} acc={s['accuracy_mean']:.4f} +- {s['accuracy_std']:.4f}")


def cmd_sweep(args):
    started = _now()
    archs = _archs(args.arch)
    train_ds = dataset.read(args.data)
    test_ds = dataset.read(args.test_data)
    _check_same_schema(train_ds, test_ds)
    if max(args.sizes) > len(train_ds):
        raise UsageError(f"largest size {max(args.sizes)} exceeds the training file ({len(train_ds)})")
    rows, configs = [], {}
    for arch in archs:
        mcfg, tcfg = resolve_configs(args, train_ds.metadata.get("n_qubits", 3),
                                     train_ds.n_classes, arch)
        _check_compat(train_ds, mcfg, args.data)
        configs[arch] = {"model": mcfg.to_dict(), "train": tcfg.to_dict()}
        rows += traineval.sweep_sample_size(args.sizes, train_ds, test_ds, mcfg, tcfg,
                                            args.repeats, seed=args.sweep_seed)
    config = {"sizes": args.sizes, "repeats": args.repeats, "archs": configs}
    _write_sweep(args, rows, config, {"sweep": args.sweep_seed}, [args.data, args.test_data], started)
    return EXIT_OK


def cmd_noise_sweep(args):
    started = _now()
    archs = _archs(args.arch)
    if args.qubits not in qsim.DEFAULT_ROSTERS:
        raise UsageError(f"unsupported qubit count {args.qubits}")
    roster = qsim.default_roster(args.qubits)
    bases = qsim.build_basis_set(args.qubits)
    try:
        noises = [qsim.NoiseConfig(e, s) for e in args.epsilons for s in args.shots]
    except ValueError as exc:
        raise UsageError(str(exc))
    rows, configs = [], {}
    for arch in archs:
        mcfg, tcfg = resolve_configs(args, args.qubits, len(roster), arch)
        configs[arch] = {"model": mcfg.to_dict(), "train": tcfg.to_dict()}
        rows += traineval.sweep_noise(noises, args.sizes, roster, bases, mcfg, tcfg,
                                      repeats=args.repeats, train_seed=args.train_seed,
                                      test_seed=args.test_seed, n_test=args.n_test,
                                      noisy_train=not args.clean_train,
                                      noisy_test=not args.clean_test,
                                      workers=args.workers, seed=args.sweep_seed)
    config = {"sizes": args.sizes, "repeats": args.repeats, "epsilons": args.epsilons,
              "shots": args.shots, "n_test": args.n_test, "noisy_train": not args.clean_train,
              "noisy_test": not args.clean_test, "archs": configs}
    seeds = {"train": args.train_seed, "test": args.test_seed, "sweep": args.sweep_seed}
    _write_sweep(args, rows, config, seeds, [], started)
    return EXIT_OK


class _SignFlippedDense(nn.Dense):
    """Deliberately wrong backward pass, for checking the harness itself."""

    def backward(self, dy):
        dx = super().backward(dy)
        self.grads["W"] = -self.grads["W"]
        return dx


def cmd_gradcheck(args):
    results = nn.run_battery(args.seeds)
    if args.inject_fault:
        r = np.random.default_rng(0)
        rep = nn.grad_check(_SignFlippedDense(4, 3, rng=r), r.standard_normal((2, 4)))
        tol = nn.BATTERY_TOLERANCES["dense"]
        results.append({"layer": "broken_dense", "tolerance": tol, "max_rel_error": rep["max"],
                        "passed": rep["max"] < tol, "cases": 1})
    ok = all(r["passed"] for r in results)
    for r in results:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['layer']:<24} "
              f"max rel err {r['max_rel_error']:.3e} (tol {r['tolerance']:.0e}, {r['cases']} cases)")
    if args.json_out:
        _write_json(args.json_out, {"passed": ok, "results": results})
    return EXIT_OK if ok else EXIT_NUMERIC


def inspect_file(path) -> dict:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] == models.CKPT_MAGIC:
        model = models.load_checkpoint_bytes(buf)
        return {"kind": "checkpoint", "path": os.fspath(path),
                "config": model.config.to_dict(), "param_count": model.param_count(),
                "tensors": {k: list(v.shape) for k, v in model.named_params()},
                "layers": [t[0] for t in model.trace], "warnings": []}
    ds = dataset.from_bytes(buf)
    warnings = []
    lo, hi = (float(ds.features.min()), float(ds.features.max())) if len(ds) else (0.0, 0.0)
    if lo < 0 or hi > 1 or not np.isfinite(ds.features).all():
        bad = int(((ds.features < 0) | (ds.features > 1) | ~np.isfinite(ds.features)).sum())
        warnings.append(f"{bad} feature value(s) outside [0, 1]")
    n_out = 2 ** int(ds.metadata.get("n_qubits", 0))
    if n_out and ds.M % n_out == 0 and len(ds):
        sums = ds.features.astype(np.float64).reshape(len(ds), -1, n_out).sum(axis=2)
        dev = float(np.abs(sums - 1).max())
        if dev > 1e-5:
            warnings.append(f"measurement block sums deviate from 1 by up to {dev:.3g}")
    if len(ds) and ds.labels.max() >= ds.n_classes:
        warnings.append("labels outside the roster")
    hist = np.bincount(ds.labels, minlength=ds.n_classes).tolist()
    return {"kind": "dataset", "path": os.fspath(path), "metadata": ds.metadata,
            "n_samples": len(ds), "M": ds.M, "class_histogram": hist,
            "feature_min": lo, "feature_max": hi, "warnings": warnings}


def cmd_inspect(args):
    info = inspect_file(args.path)
    if args.json:
        print(json.dumps(info, sort_keys=True))
        return EXIT_OK
    if info["kind"] == "checkpoint":
        print(f"checkpoint {info['path']}: {info['config']['architecture']}, "
              f"{info['param_count']} parameters")
        for name in info["layers"]:
            print(f"  {name}")
    else:
        md = info["metadata"]
        print(f"dataset {info['path']}: {info['n_samples']} samples, M={info['M']}, "
              f"{md.get('n_qubits')} qubits, scheme {md.get('scheme')}")
        print(f"  noise: epsilon={md.get('dephasing_epsilon')} shots={md.get('shots')}  "
              f"seed={md.get('root_seed')}")
        names = md.get("roster") or [str(i) for i in range(len(info["class_histogram"]))]
        for name, count in zip(names, info["class_histogram"]):
            print(f"  {name:<14} {count}")
        print(f"  feature range [{info['feature_min']:.4g}, {info['feature_max']:.4g}]")
    for w in info["warnings"]:
        print(f"WARNING: {w}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file with optional 'model' and 'train' sections")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int, help="training shuffle seed")
    p.add_argument("--model-seed", type=int, help="parameter initialization seed")
    p.add_argument("--hidden", type=int, help="LSTM hidden size")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="entclass",
        description="Classify SLOCC entanglement families from simulated measurement data.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled dataset (.entd)")
    p.add_argument("--qubits", type=int, required=True)
    p.add_argument("--roster", help="comma-separated family names (default roster otherwise)")
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--scheme", default="LOCAL_PAULI")
    p.add_argument("--epsilon", type=float, default=0.0, help="dephasing strength")
    p.add_argument("--shots", type=_shots, default=qsim.EXACT, help="shots per setting or 'exact'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export CSV here")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--arch", default="ARCHI2")
    p.add_argument("--data", required=True)
    p.add_argument("--test-data")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics-out")
    p.add_argument("--loss-out")
    p.add_argument("--confusion-out")
    p.add_argument("--eval-every", type=int)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics-out")
    p.add_argument("--confusion-out")
    p.set_defaults(func=cmd_eval)

    for name, func, text in (("sweep", cmd_sweep, "accuracy versus training-set size"),
                             ("noise-sweep", cmd_noise_sweep, "accuracy under dephasing and shot noise")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--arch", default="ARCHI1,ARCHI2")
        p.add_argument("--sizes", type=_int_list, required=True)
        p.add_argument("--repeats", type=int, default=1)
        p.add_argument("--sweep-seed", type=int, default=0)
        p.add_argument("--out", required=True, help="CSV path")
        p.add_argument("--summary-out")
        _add_train_flags(p)
        if name == "sweep":
            p.add_argument("--data", required=True)
            p.add_argument("--test-data", required=True)
        else:
            p.add_argument("--qubits", type=int, default=3)
            p.add_argument("--epsilons", type=_float_list, default=[0.0])
            p.add_argument("--shots", type=_shots_list, default=[qsim.EXACT])
            p.add_argument("--n-test", type=int, default=2000)
            p.add_argument("--train-seed", type=int, default=1)
            p.add_argument("--test-seed", type=int, default=2)
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--clean-train", action="store_true", help="no noise on training data")
            p.add_argument("--clean-test", action="store_true", help="no noise on test data")
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--json-out")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="summarize a dataset or checkpoint")
    p.add_argument("path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None):
    global _argv
    _argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, qsim.RosterError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (traineval.NumericDivergenceError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
