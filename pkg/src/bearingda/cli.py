"""Command line entry point: ``bearingda <command> [options]``.

Commands: demo-data, generate, preprocess, train, eval, sweep.

Settings come from a YAML/JSON config (``--config``), then environment
variables ``BEARINGDA_<KEY>`` (e.g. ``BEARINGDA_SEED=3``), then command-line
flags, in increasing priority.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import adapt, datastore as ds, demo, metrics as M, pipeline
from .errors import BearingDAError
from .model import DiagnosisNet
from .segment import FaultClass
from .siggen import CWRU_DRIVE_END, BearingGeometry, DefectSpec

log = logging.getLogger("bearingda")

ENV_PREFIX = "BEARINGDA_"

DEFAULTS: dict[str, Any] = {
    "recordings": None,
    "output": "runs/default",
    "seed": None,
    "per_class": 1200,
    "seg_len": 4096,
    "geometry": {"n_elements": CWRU_DRIVE_END.n_elements, "ball_diameter": CWRU_DRIVE_END.ball_diameter,
                 "pitch_diameter": CWRU_DRIVE_END.pitch_diameter,
                 "contact_angle": CWRU_DRIVE_END.contact_angle},
    "defects": {},
    "imbalance": None,
    # 0 = transductive evaluation; a fraction reserves that share of the target for evaluation only
    "held_out": 0.0,
    "train": {"method": "proposed", "epochs": 100, "batch_size": 128, "lr": 0.001, "lambda_d": 1.0,
              "lambda_schedule": "constant", "mixup_alpha": 1.0, "dropout_rate": 0.5},
    "sweep": {"levels": [0.20, 0.15, 0.10, 0.05, 0.01], "seeds": 10,
              "methods": ["source-only", "dann", "conditional", "proposed"]},
}

# top-level scalar keys that may come from the environment, with their types
ENV_KEYS = {"SEED": ("seed", int), "OUTPUT": ("output", str), "RECORDINGS": ("recordings", str),
            "PER_CLASS": ("per_class", int), "METHOD": ("train.method", str),
            "EPOCHS": ("train.epochs", int), "BATCH_SIZE": ("train.batch_size", int)}


class ConfigError(BearingDAError):
    pass


def _set(cfg: dict, dotted: str, value):
    node = cfg
    *parents, leaf = dotted.split(".")
    for p in parents:
        node = node.setdefault(p, {})
    node[leaf] = value


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args: argparse.Namespace, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        loaded = yaml.safe_load(path.read_text()) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        cfg = _merge(cfg, loaded)
    for env, (key, typ) in ENV_KEYS.items():
        if ENV_PREFIX + env in environ:
            _set(cfg, key, typ(environ[ENV_PREFIX + env]))
    for flag, key in (("seed", "seed"), ("output", "output"), ("recordings", "recordings"),
                      ("per_class", "per_class"), ("method", "train.method"), ("epochs", "train.epochs"),
                      ("batch_size", "train.batch_size")):
        value = getattr(args, flag, None)
        if value is not None:
            _set(cfg, key, value)
    if getattr(args, "imbalance", None):
        cfg["imbalance"] = parse_imbalance(args.imbalance)
    if cfg.get("seed") is None:
        raise ConfigError("a seed is mandatory (--seed, BEARINGDA_SEED or 'seed' in the config)")
    return cfg


def parse_imbalance(text: str) -> dict:
    """``"RollingElement=0.01,OuterRace=0.1"`` or ``"table3"``."""
    if text.strip().lower() == "table3":
        return {c.name: f for c, f in ds.ImbalanceSpec.table3().items()}
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        out[FaultClass.parse(name).name] = float(value)
    return out


def geometry(cfg: dict) -> BearingGeometry:
    return BearingGeometry(**cfg["geometry"])


def defect_specs(cfg: dict) -> dict[FaultClass, DefectSpec]:
    out = {}
    for name, overrides in (cfg.get("defects") or {}).items():
        c = FaultClass.parse(name)
        out[c] = DefectSpec(c, **overrides)
    return out


def imbalance_spec(cfg: dict) -> Optional[ds.ImbalanceSpec]:
    return None if not cfg.get("imbalance") else ds.ImbalanceSpec(cfg["imbalance"])


def train_config(cfg: dict) -> adapt.TrainConfig:
    return adapt.TrainConfig(seed=int(cfg["seed"]), **cfg["train"])


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(cfg: dict) -> str:
    """Comment line carrying the resolved config, prepended to text artifacts."""
    return f"# config={json.dumps(cfg, sort_keys=True, default=str)}\n"


def _write_config(cfg: dict, out: Path):
    (out / "config.resolved.json").write_text(json.dumps(cfg, indent=1, sort_keys=True, default=str) + "\n")


# ------------------------------------------------------------------ commands

def cmd_demo_data(cfg: dict, args) -> int:
    out = _outdir(cfg)
    recs = demo.demo_recordings(seconds=args.seconds, seed=int(cfg["seed"]))
    sidecar = ds.write_recordings(recs, out)
    print(f"wrote {len(recs)} recordings, sidecar {sidecar}")
    return 0


def cmd_generate(cfg: dict, args) -> int:
    if not cfg.get("recordings"):
        raise ConfigError("no recordings sidecar given (--recordings or 'recordings' in the config)")
    rec_path = Path(cfg["recordings"])
    if not rec_path.exists():
        raise ConfigError(f"recordings sidecar {rec_path} does not exist")
    out = _outdir(cfg)
    recordings = ds.load_recordings(rec_path)
    source, target = pipeline.build_waveform_domains(recordings, int(cfg["per_class"]), int(cfg["seed"]),
                                                     geometry(cfg), defect_specs(cfg), int(cfg["seg_len"]))
    for d in (source, target):
        d.provenance["config"] = cfg
    ds.save_dataset(source, out / "source")
    ds.save_dataset(target, out / "target")
    _write_config(cfg, out)
    print(f"source: {ds.describe(source)}")
    print(f"target: {ds.describe(target)}")
    return 0


def _require(path: Path, hint: str) -> Path:
    if not path.with_name(path.name + ".manifest").exists():
        raise ConfigError(f"{path}.manifest not found; run '{hint}' first")
    return path


def cmd_preprocess(cfg: dict, args) -> int:
    out = _outdir(cfg)
    source = ds.load_dataset(_require(out / "source", "generate"))
    target = ds.load_dataset(_require(out / "target", "generate"))
    domains = pipeline.make_domains(source, target, int(cfg["seed"]), imbalance_spec(cfg),
                                     float(cfg["held_out"]))
    for name, d in zip(("source_spec", "target_train_spec", "target_eval_spec"), domains):
        d.provenance["config"] = cfg
        ds.save_dataset(d, out / name)
        print(f"{name}: {ds.describe(d)}")
    _write_config(cfg, out)
    if args.csv:
        _write_mean_spectra(domains, out / "mean_spectra.tsv", cfg)
    return 0


def _write_mean_spectra(domains: pipeline.Domains, path: Path, cfg: dict):
    from .dsp import ORDER_AXIS

    cols = {"order": ORDER_AXIS}
    for tag, d in (("source", domains.source), ("target", domains.target_eval)):
        x, y = d.array(np.float64), d.labels()
        for i, c in enumerate(d.classes):
            if np.any(y == i):
                cols[f"{tag}_{c.name}"] = x[y == i].mean(axis=0)
    rows = [{k: float(v[j]) for k, v in cols.items()} for j in range(ORDER_AXIS.size)]
    path.write_text(_stamp(cfg) + M.format_table(rows, list(cols)))


def _load_domains(cfg: dict, out: Path) -> pipeline.Domains:
    names = ("source_spec", "target_train_spec", "target_eval_spec")
    if not (out / "source_spec.manifest").exists() and (out / "source.manifest").exists():
        log.info("no spectra in %s yet; preprocessing first", out)
        cmd_preprocess(cfg, argparse.Namespace(csv=False))
    return pipeline.Domains(*(ds.load_dataset(_require(out / n, "preprocess")) for n in names))


def cmd_train(cfg: dict, args) -> int:
    out = _outdir(cfg)
    domains = _load_domains(cfg, out)
    tc = train_config(cfg)
    log_path = out / f"train_{tc.method.value}.log"
    with open(log_path, "w") as fh:
        fh.write(_stamp(cfg))

        def write(entry: adapt.EpochLog):
            fh.write(entry.format() + "\n")
            fh.flush()
            log.info("epoch %d clf=%.4f disc=%.4f", entry.epoch, entry.clf_loss, entry.disc_loss)

        outcome = pipeline.run(domains, tc, log_fn=write)
    ckpt = out / f"model_{tc.method.value}.ckpt"
    outcome.result.net.save(ckpt, {"config": cfg, "classes": [c.name for c in domains.source.classes]})
    report = M.format_report(outcome.metrics, method=tc.method.value, seed=tc.seed)
    (out / f"metrics_{tc.method.value}.txt").write_text(_stamp(cfg) + report + "\n")
    print(report)
    return 0


def cmd_eval(cfg: dict, args) -> int:
    out = _outdir(cfg)
    tc = train_config(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / f"model_{tc.method.value}.ckpt"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} does not exist")
    net, header = DiagnosisNet.load(ckpt)
    data = ds.load_dataset(Path(args.data) if args.data else _require(out / "target_eval_spec", "preprocess"))
    y = data.labels()
    if np.any(y < 0):
        raise ConfigError("evaluation data must be labeled")
    pred = net.predict(data.array())
    cm = M.confusion_matrix(y, pred, net.n_classes)
    scores = M.summarize(cm)
    report = M.format_report(scores, checkpoint=ckpt.name)
    print(report)
    rows = [{"truth": c.name, **{p.name: int(cm[i, j]) for j, p in enumerate(data.classes)}}
            for i, c in enumerate(data.classes)]
    columns = ["truth"] + [c.name for c in data.classes]
    (out / f"confusion_{ckpt.stem}.tsv").write_text(_stamp(cfg) + M.format_table(rows, columns))
    (out / f"eval_{ckpt.stem}.txt").write_text(_stamp(cfg) + report + "\n")
    return 0


def cmd_sweep(cfg: dict, args) -> int:
    out = _outdir(cfg)
    source = ds.load_dataset(_require(out / "source", "generate"))
    target = ds.load_dataset(_require(out / "target", "generate"))
    sw = cfg["sweep"]
    levels = [float(v) for v in (args.levels.split(",") if args.levels else sw["levels"])]
    seeds_n = args.seeds if args.seeds is not None else sw["seeds"]
    seeds = list(range(int(cfg["seed"]), int(cfg["seed"]) + int(seeds_n)))
    methods = args.methods.split(",") if args.methods else sw["methods"]
    if args.method:
        methods = [args.method]
    base = train_config(cfg)

    def domains_for(level: float, seed: int) -> pipeline.Domains:
        spec = None if level >= 1 else ds.ImbalanceSpec.rolling_element(level)
        return pipeline.make_domains(source, target, seed, spec, float(cfg["held_out"]))

    table = out / "sweep.tsv"
    columns = ["level", "method", "seeds", "status", "balanced_accuracy", "f1_macro", "f1_micro",
               "kappa", "accuracy", "error"]

    def on_cell(row):
        print(M.format_report({k: v for k, v in row.items() if isinstance(v, float) and k != "level"},
                              level=row["level"], method=row["method"], status=row["status"]))

    rows = pipeline.sweep(domains_for, levels, methods, seeds, base, on_cell)
    with open(table, "w") as fh:
        fh.write(_stamp(cfg))
        fh.write(M.format_table(rows, columns))
    _write_config(cfg, out)
    return 0 if all(r["status"] == "ok" for r in rows) else 1


COMMANDS = {"demo-data": cmd_demo_data, "generate": cmd_generate, "preprocess": cmd_preprocess,
            "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON experiment config")
    common.add_argument("--seed", type=int)
    common.add_argument("--output", help="run directory")
    common.add_argument("--method", choices=[m.value for m in adapt.Method])
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bearingda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("demo-data", parents=[common], help="write simulated recordings")
    p.add_argument("--seconds", type=float, default=10.0)
    p = sub.add_parser("generate", parents=[common], help="segment recordings, synthesize source faults")
    p.add_argument("--recordings", help="recordings.json sidecar")
    p.add_argument("--per-class", dest="per_class", type=int)
    p = sub.add_parser("preprocess", parents=[common], help="envelope spectra + target imbalance")
    p.add_argument("--imbalance", help="e.g. RollingElement=0.01 or table3")
    p.add_argument("--csv", action="store_true", help="also write class-mean spectra as TSV")
    sub.add_parser("train", parents=[common], help="train one adaptation method")
    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on labeled target data")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="labeled spectrum container (default: target_eval_spec)")
    p = sub.add_parser("sweep", parents=[common], help="balance-level x method grid")
    p.add_argument("--levels", help="comma-separated rolling-element keep fractions")
    p.add_argument("--seeds", type=int, help="number of seeds per cell")
    p.add_argument("--methods", help="comma-separated methods")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (BearingDAError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
