"""Command-line entry point: gen, train, report, ood, sweep.

Exit codes: 0 success, 2 configuration error, 3 numerical abort during
training, 4 missing checkpoint or dataset.
"""
import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from evidentia import nig
from evidentia.errors import MissingArtifact, TrainingAborted
from evidentia.model.checkpoint import load_checkpoint, save_checkpoint
from evidentia.model.network import ModelConfig
from evidentia.model.synthetic import SyntheticSpec, generate_dataset, load_split, save_dataset
from evidentia.model.training import TrainConfig, attention_arrays, predict, records_for, train
from evidentia.seeding import derive_seed
from evidentia.trust.ood import corrupted_sets, noise_trend, ood_report
from evidentia.trust.records import CostParams, RecordSet
from evidentia.trust.report import OOD_COLUMNS, trust_report, write_attention, write_csv, write_json
from evidentia.trust.utility import REFERRAL_GRID, cost_profile

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_MISSING = 0, 2, 3, 4
CHECKPOINT_NAME = "checkpoint.bin"
HISTORY_COLUMNS = ("epoch", "lr", "total", "nll", "kl", "align", "val_qwk", "val_acc")
DEFAULT_LAMBDA_GRID = (0.0, 0.01, 0.1)


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    seed: int = 7
    out: Path = None
    data: Path = None
    ckpt: Path = None
    force: bool = False
    spec: SyntheticSpec = field(default_factory=SyntheticSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    costs: CostParams = field(default_factory=CostParams)
    n_boot: int = 1000
    records: Path = None
    parameter: str = None
    values: tuple = None


def build_parser():
    parser = argparse.ArgumentParser(prog="evidentia", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="base seed; every random stream derives from it")
    common.add_argument("--config", type=Path, help="JSON file with spec/model/train/costs/prior sections")
    common.add_argument("--force", action="store_true", help="allow writing into a nonempty output directory")
    common.add_argument("--out", type=Path, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")
    gen.add_argument("--flip", type=float, help="label flip probability")

    tr = sub.add_parser("train", parents=[common], help="train and write checkpoint.bin + history.csv")
    tr.add_argument("--data", type=Path, help="dataset directory from gen")
    _add_training_flags(tr)

    rep = sub.add_parser("report", aliases=["trust-report"], parents=[common], help="full trust report bundle")
    rep.add_argument("--data", type=Path)
    rep.add_argument("--ckpt", type=Path, help="checkpoint file or training run directory")
    rep.add_argument("--bootstrap", type=int, help="bootstrap resamples for ROC/PR bands")
    rep.add_argument("--records", type=Path, help="evaluate a records CSV instead of a checkpoint")

    ood = sub.add_parser("ood", parents=[common], help="epistemic uncertainty under corruption")
    ood.add_argument("--data", type=Path)
    ood.add_argument("--ckpt", type=Path)

    sw = sub.add_parser("sweep", parents=[common], help="lambda-kl or referral-grid sweep")
    sw.add_argument("parameter", choices=("lambda-kl", "referral-grid"))
    sw.add_argument("--data", type=Path)
    sw.add_argument("--ckpt", type=Path)
    sw.add_argument("--values", type=float, nargs="+", help="grid values (default depends on parameter)")
    _add_training_flags(sw)
    return parser


def _add_training_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda-kl", type=float)
    p.add_argument("--lambda-proto", type=float)
    p.add_argument("--loss-mode", choices=nig.LOSS_MODES)


def _section(cfg, name):
    value = cfg.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(value)


def resolve(args):
    """Layer defaults < config file < command-line flags into a RunConfig."""
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}")
        unknown = set(cfg) - {"seed", "spec", "model", "train", "costs", "prior", "bootstrap"}
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
    spec_d, model_d = _section(cfg, "spec"), _section(cfg, "model")
    train_d, costs_d = _section(cfg, "train"), _section(cfg, "costs")
    if "prior" in cfg:
        model_d["prior"] = _section(cfg, "prior")

    seed = args.seed if args.seed is not None else cfg.get("seed", 7)
    spec_d["seed"] = seed
    train_d["seed"] = seed
    if getattr(args, "flip", None) is not None:
        spec_d["p_flip"] = args.flip
    for flag, key, target in (("epochs", "epochs", train_d), ("loss_mode", "loss_mode", train_d),
                              ("lambda_kl", "lambda_kl", model_d), ("lambda_proto", "lambda_proto", model_d)):
        value = getattr(args, flag, None)
        if value is not None:
            target[key] = value
    n_boot = args.bootstrap if getattr(args, "bootstrap", None) is not None else cfg.get("bootstrap", 1000)
    try:
        return RunConfig(
            command=args.command,
            seed=seed,
            out=args.out,
            data=getattr(args, "data", None),
            ckpt=getattr(args, "ckpt", None),
            force=args.force,
            spec=SyntheticSpec(**spec_d),
            model=ModelConfig(**model_d),
            train=TrainConfig(**train_d),
            costs=CostParams(**costs_d),
            n_boot=int(n_boot),
            records=getattr(args, "records", None),
            parameter=getattr(args, "parameter", None),
            values=tuple(args.values) if getattr(args, "values", None) else None,
        )
    except TypeError as exc:
        raise ConfigError(f"unknown configuration key: {exc}")


def _require(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    return value


def prepare_out(rc):
    out = Path(_require(rc.out, "--out"))
    if out.exists() and not out.is_dir():
        raise ConfigError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not rc.force:
        raise ConfigError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(path):
    path = Path(_require(path, "--ckpt"))
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    if not path.is_file():
        raise MissingArtifact(f"checkpoint {path} not found")
    return path


def _print_row(row):
    print(" ".join(f"{k}={row[k]:.6g}" if isinstance(row[k], float) else f"{k}={row[k]}"
                   for k in HISTORY_COLUMNS), flush=True)


def cmd_gen(rc):
    out = prepare_out(rc)
    save_dataset(generate_dataset(rc.spec), out)
    print(f"wrote dataset to {out}")


def _train(rc, model_config, log=None):
    data = Path(_require(rc.data, "--data"))
    train_split, _ = load_split(data, "train")
    val_split, _ = load_split(data, "val")
    return train(model_config, rc.train, train_split, val_split, log=log)


def cmd_train(rc):
    out = prepare_out(rc)
    ckpt = _train(rc, rc.model, log=_print_row)
    save_checkpoint(ckpt, out / CHECKPOINT_NAME)
    write_csv(out / "history.csv", HISTORY_COLUMNS, ([row[c] for c in HISTORY_COLUMNS] for row in ckpt.history))
    print(f"best epoch {ckpt.best_epoch}; checkpoint written to {out / CHECKPOINT_NAME}")


def _ood_rows(ckpt, images, seed):
    sets = corrupted_sets(images, seed=derive_seed(seed, "ood"))
    return ood_report(ckpt, images, sets)


def cmd_report(rc):
    if rc.records is not None:
        if not Path(rc.records).is_file():
            raise MissingArtifact(f"records file {rc.records} not found")
        out = prepare_out(rc)
        records = RecordSet.from_csv(rc.records)
        ood_rows = None
    else:
        path = _checkpoint_path(rc.ckpt)
        test, _ = load_split(Path(_require(rc.data, "--data")), "test")
        out = prepare_out(rc)
        ckpt = load_checkpoint(path)
        records = records_for(ckpt, test.images, test.grades)
        records.to_csv(out / "records.csv")
        alpha_m, alpha_lat = attention_arrays(ckpt.model(), test.images)
        write_attention(out / "attention.csv", test.ids, alpha_m, alpha_lat)
        ood_rows = _ood_rows(ckpt, test.images, rc.seed)
    report = trust_report(records, out, n_boot=rc.n_boot, seed=derive_seed(rc.seed, "bootstrap"),
                          costs=rc.costs, ood_rows=ood_rows)
    m = report["metrics"]
    print(f"accuracy={m['accuracy']} qwk={m['qwk']} auroc={m['auroc']} ece={m['ece']}")


def cmd_ood(rc):
    path = _checkpoint_path(rc.ckpt)
    test, _ = load_split(Path(_require(rc.data, "--data")), "test")
    out = prepare_out(rc)
    rows = _ood_rows(load_checkpoint(path), test.images, rc.seed)
    write_csv(out / "ood.csv", OOD_COLUMNS, ([r[c] for c in OOD_COLUMNS] for r in rows))
    print(f"noise trend nondecreasing: {noise_trend(rows)}")
    for r in rows:
        print(f"{r['kind']:>15} {r['severity']:>5} mean_epistemic={r['mean_epistemic']:.6g} p={r['p_value']:.3g}")


def cmd_sweep(rc):
    if rc.parameter == "lambda-kl":
        values = rc.values or DEFAULT_LAMBDA_GRID
        test, _ = load_split(Path(_require(rc.data, "--data")), "test")
        out = prepare_out(rc)
        rows = []
        for lam in values:
            config = ModelConfig.from_dict({**rc.model.to_dict(), "lambda_kl": lam})
            ckpt = _train(rc, config)
            pred = predict(ckpt, test.images)
            evidence = pred["nu"] + 2.0 * pred["alpha"]
            acc = float(np.mean(pred["grade"] == test.grades))
            rows.append((lam, float(evidence.mean()), float(pred["epistemic"].mean()), acc, ckpt.best_epoch))
            print(f"lambda_kl={lam:g} mean_evidence={rows[-1][1]:.6g} accuracy={acc:.4f}", flush=True)
        write_csv(out / "sweep.csv", ["lambda_kl", "mean_evidence", "mean_epistemic", "test_accuracy", "best_epoch"],
                  rows)
    else:
        grid = np.asarray(rc.values, dtype=np.float64) if rc.values else REFERRAL_GRID
        path = _checkpoint_path(rc.ckpt)
        test, _ = load_split(Path(_require(rc.data, "--data")), "test")
        out = prepare_out(rc)
        records = records_for(load_checkpoint(path), test.images, test.grades)
        curve = cost_profile(records, rc.costs, grid)
        write_csv(out / "sweep.csv", ["referral_rate", "cost_per_patient"], zip(curve.x, curve.y))
        print(f"cost r=0 {curve.y[0]:.6g}, min {curve.y.min():.6g} at r={curve.x[np.argmin(curve.y)]:g}")
    write_json(out / "sweep_config.json", {"parameter": rc.parameter, "seed": rc.seed})


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "report": cmd_report, "trust-report": cmd_report,
            "ood": cmd_ood, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        rc = resolve(args)
        COMMANDS[args.command](rc)
    except (ConfigError, ValueError) as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"evidentia: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"evidentia: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (MissingArtifact, FileNotFoundError) as exc:
        print(f"evidentia: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
