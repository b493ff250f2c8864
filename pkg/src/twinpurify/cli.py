"""Batch command line: ``twinpurify <command> [--config FILE] [--out DIR] [--set KEY=VALUE]``.

Every command starts from a complete default configuration, overlays the
JSON config file and any ``--set`` overrides, and writes ``manifest.json``
next to its outputs. The manifest holds the fully resolved configuration,
so ``--config manifest.json`` repeats a run. Exit codes: 0 success, 1 bad
input, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import platform
import sys
import warnings
from pathlib import Path

import numpy as np

from twinpurify import __version__, kernels
from twinpurify.augment import DilutionSpec, dilute_matrix
from twinpurify.classify import dilution_eval, write_dilution_csv, write_trajectories_csv
from twinpurify.data import NORMAL, TUMOR, ExpressionMatrix, load_matrix, save_matrix, split_cohort
from twinpurify.errors import NumericalError, ValidationError
from twinpurify.interpret import (
    dim_gene_correlation,
    export_rnk,
    signature_genes,
    uniqueness_permutation_test,
    write_uniqueness_csv,
)
from twinpurify.models import TrainConfig, encode, load_model, save_model
from twinpurify.models.barlow import tp_gradient_check
from twinpurify.benchmark import fit_family
from twinpurify.survival import survival_pipeline, write_km_csv, write_survival_summary
from twinpurify.synth import SynthConfig, generate_cohort
from twinpurify.tune import ALPHA_RANGE, LAMBDA_RANGE, tune, write_trials_csv

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
COMMANDS = ("synth", "train", "tune", "embed", "dilute", "classify", "rank", "uniqueness", "survival", "gradcheck")


def _train_defaults() -> dict:
    d = TrainConfig().to_dict()
    d.pop("seed")
    return d


def _synth_defaults() -> dict:
    d = SynthConfig(hazard_weights=(0.7, 0.0, -0.7)).to_dict()
    d.pop("seed")
    return d


_INPUT = {"input": None, "metadata": None, "format": "TSV"}
_SPLIT = {"split": {"fraction": 0.8, "stratify": "subtype"}}


def default_config(command: str) -> dict:
    """Complete default configuration of ``command``; every key is echoed in the manifest."""
    base = {"seed": 0, "out_dir": f"{command}_out"}
    if command == "synth":
        return {**base, "prefix": "cohort", "synth": _synth_defaults()}
    if command == "train":
        return {**base, **_INPUT, **_SPLIT, "model": "TP", "train": _train_defaults()}
    if command == "tune":
        return {
            **base, **_INPUT, **_SPLIT,
            "n_trials": 20, "val_fraction": 0.2, "label_field": "subtype",
            "alpha_range": list(ALPHA_RANGE), "lambda_range": list(LAMBDA_RANGE),
            "train": _train_defaults(),
        }
    if command == "embed":
        return {**base, **_INPUT, "model": None, "kind": "all"}
    if command == "dilute":
        return {
            **base, **_INPUT, "pool": None, "pool_metadata": None, "kind": TUMOR,
            "rates": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0], "m_normals": 5, "linear_space": False,
        }
    if command == "classify":
        return {
            **base, **_INPUT, **_SPLIT, "models": {}, "label_field": "subtype",
            "rates": [round(r, 10) for r in np.linspace(0.0, 1.0, 11).tolist()],
            "m_normals": 5, "linear_space": False, "k": 5,
        }
    if command == "rank":
        return {**base, **_INPUT, "model": None, "kind": TUMOR}
    if command == "uniqueness":
        return {**base, **_INPUT, "models": {}, "kind": TUMOR, "top_n": 1000, "n_perm": 1000}
    if command == "survival":
        return {**base, **_INPUT, "models": {}, "kind": TUMOR, "n_top": 20, "n_bottom": 20}
    if command == "gradcheck":
        return {**base, "n_samples": 4, "n_genes": 8, "h": 1e-6, "max_coords": 50, "tolerance": 1e-4, "train": _train_defaults()}
    raise ValidationError(f"unknown command {command!r}")


# ---------------------------------------------------------------------------
# Config resolution and manifests
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise ValidationError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and base[key] and isinstance(val, dict):
            out[key] = _merge(base[key], val, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_set(items) -> dict:
    over: dict = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = over
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return over


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return data


def resolve_config(command: str, config_path=None, out_dir=None, overrides=None) -> dict:
    """Defaults, then the config file (or a manifest's config), then overrides."""
    cfg = default_config(command)
    if config_path is not None:
        data = _read_json(config_path)
        if "manifest_version" in data:
            if data.get("command") != command:
                raise ValidationError(f"manifest is for {data.get('command')!r}, not {command!r}")
            data = data["config"]
        cfg = _merge(cfg, data)
    cfg = _merge(cfg, _parse_set(overrides))
    if out_dir is not None:
        cfg["out_dir"] = str(out_dir)
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(command: str, cfg: dict, outputs, out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "manifest_version": 1,
        "tool": "twinpurify",
        "version": __version__,
        "command": command,
        "seed": cfg.get("seed"),
        "config": cfg,
        "environment": {
            "threads": {v: os.environ.get(v) for v in THREAD_VARS},
            "kernel_backend": kernels.BACKEND,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "outputs": {str(Path(p).relative_to(out_dir)): _sha256(Path(p)) for p in outputs},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _load_input(cfg: dict) -> ExpressionMatrix:
    if not cfg.get("input"):
        raise ValidationError("config needs 'input'")
    return load_matrix(cfg["input"], cfg.get("format", "TSV"), cfg.get("metadata"))


def _select(m: ExpressionMatrix, kind: str) -> ExpressionMatrix:
    if kind == "all":
        return m
    if kind not in (TUMOR, NORMAL):
        raise ValidationError(f"kind must be 'all', {TUMOR!r} or {NORMAL!r}")
    out = m.select_kind(kind)
    if not out.samples:
        raise ValidationError(f"no {kind} samples in input")
    return out


def _split(m: ExpressionMatrix, cfg: dict):
    sp = cfg["split"]
    split = split_cohort(m, sp["fraction"], sp["stratify"], cfg["seed"])
    return split, m.take(split.train_indices), m.take(split.test_indices)


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig.from_dict({**cfg["train"], "seed": cfg["seed"]})


def _models(cfg: dict) -> dict:
    if not cfg["models"]:
        raise ValidationError("config needs 'models' (name -> checkpoint path)")
    return {name: load_model(path) for name, path in sorted(cfg["models"].items())}


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt_rate(r: float) -> str:
    return repr(float(r))


def cmd_synth(cfg, out: Path) -> list:
    sc = SynthConfig.from_dict({**cfg["synth"], "seed": cfg["seed"]})
    m, _ = generate_cohort(sc)
    return list(save_matrix(m, out / f"{cfg['prefix']}.tsv"))


def cmd_train(cfg, out: Path) -> list:
    m = _load_input(cfg)
    split, train, _ = _split(m, cfg)
    model = fit_family(cfg["model"], train, _train_config(cfg))
    outputs = [save_model(model, out / "model.npz")]
    ids = m.sample_ids
    side = {i: "train" for i in split.train_indices.tolist()}
    outputs.append(_write_csv(out / "split.csv", ["sample_id", "side"], [[ids[i], side.get(i, "test")] for i in range(len(ids))]))
    trace = getattr(model, "loss_trace", [])
    outputs.append(_write_csv(out / "loss_trace.csv", ["epoch", "loss"], [[e, repr(float(v))] for e, v in enumerate(trace)]))
    return outputs


def cmd_tune(cfg, out: Path) -> list:
    m = _load_input(cfg)
    _, train, _ = _split(m, cfg)
    trials, best = tune(
        train, _train_config(cfg), cfg["n_trials"], cfg["seed"], cfg["val_fraction"], cfg["label_field"],
        tuple(cfg["alpha_range"]), tuple(cfg["lambda_range"]),
    )
    best_cfg = {**cfg["train"], "alpha": best.alpha, "lam": best.lam}
    path = out / "best_config.json"
    path.write_text(json.dumps({"trial": best.trial, "val_macro_f1": best.val_macro_f1, "train": best_cfg}, indent=2, sort_keys=True) + "\n")
    print(f"best trial {best.trial}: alpha={best.alpha!r} lambda={best.lam!r} val_macro_f1={best.val_macro_f1!r}")
    return [write_trials_csv(trials, out / "trials.csv"), path]


def cmd_embed(cfg, out: Path) -> list:
    if not cfg["model"]:
        raise ValidationError("config needs 'model'")
    model = load_model(cfg["model"])
    m = _select(_load_input(cfg), cfg["kind"])
    E = encode(model, m)
    rows = [[sid] + [repr(float(v)) for v in e] for sid, e in zip(m.sample_ids, E)]
    return [_write_csv(out / "embedding.csv", ["sample_id"] + [f"dim_{k}" for k in range(E.shape[1])], rows)]


def cmd_dilute(cfg, out: Path) -> list:
    m = _load_input(cfg)
    if cfg["pool"]:
        pool = load_matrix(cfg["pool"], cfg["format"], cfg["pool_metadata"])
        if pool.genes != m.genes:
            raise ValidationError("pool genes differ from input genes")
    else:
        pool = _select(m, NORMAL)
    target = _select(m, cfg["kind"])
    spec = DilutionSpec(tuple(cfg["rates"]), cfg["seed"], cfg["m_normals"], cfg["linear_space"])
    diluted = dilute_matrix(target.values, pool.values, spec)
    outputs = []
    for r in spec.rates:
        outputs.extend(save_matrix(target.with_values(diluted[r]), out / f"diluted_{_fmt_rate(r)}.tsv"))
    return outputs


def cmd_classify(cfg, out: Path) -> list:
    m = _load_input(cfg)
    _, train, test = _split(m, cfg)
    pool = _select(test, NORMAL)
    spec = DilutionSpec(tuple(cfg["rates"]), cfg["seed"], cfg["m_normals"], cfg["linear_space"])
    reports, outputs = [], []
    for name, model in _models(cfg).items():
        rep = dilution_eval(model, train, test, pool, spec, cfg["label_field"], name, cfg["k"])
        reports.append(rep)
        outputs.append(write_trajectories_csv(rep, out / f"trajectories_{name}.csv"))
    outputs.insert(0, write_dilution_csv(reports, out / "dilution.csv"))
    return outputs


def _rankings(model, m: ExpressionMatrix):
    return dim_gene_correlation(encode(model, m), m)


def cmd_rank(cfg, out: Path) -> list:
    if not cfg["model"]:
        raise ValidationError("config needs 'model'")
    model = load_model(cfg["model"])
    m = _select(_load_input(cfg), cfg["kind"])
    return [export_rnk(lst, out / f"dim_{lst.dimension}.rnk") for lst in _rankings(model, m)]


def cmd_uniqueness(cfg, out: Path) -> list:
    m = _select(_load_input(cfg), cfg["kind"])
    results = {
        name: uniqueness_permutation_test(_rankings(model, m), cfg["top_n"], cfg["n_perm"], cfg["seed"])
        for name, model in _models(cfg).items()
    }
    return [write_uniqueness_csv(results, out / "uniqueness.csv")]


def cmd_survival(cfg, out: Path) -> list:
    m = _select(_load_input(cfg), cfg["kind"])
    signatures = {
        name: [signature_genes(lst, cfg["n_top"], cfg["n_bottom"]) for lst in _rankings(model, m)]
        for name, model in _models(cfg).items()
    }
    results = survival_pipeline(signatures, m)
    return [write_survival_summary(results, out / "survival_summary.csv"), write_km_csv(results, out / "km_curves.csv")]


def cmd_gradcheck(cfg, out: Path) -> list:
    report = tp_gradient_check(_train_config(cfg), cfg["n_samples"], cfg["n_genes"], cfg["seed"], cfg["h"], cfg["max_coords"])
    err = report.max_rel_error
    print(f"max relative error {err:.3e}")
    path = _write_csv(out / "gradcheck.csv", ["block", "max_rel_error"], [[k, repr(float(v))] for k, v in sorted(report.per_block.items())])
    if not err < cfg["tolerance"]:
        raise NumericalError(f"gradient check failed: max relative error {err:.3e} >= {cfg['tolerance']:g}")
    return [path]


_HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def run(command: str, cfg: dict) -> Path:
    """Execute one resolved configuration; returns the manifest path."""
    if command not in _HANDLERS:
        raise ValidationError(f"unknown command {command!r}")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = _HANDLERS[command](cfg, out)
    return write_manifest(command, cfg, outputs, out)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="twinpurify", description="Tumor-purifying embeddings: training, benchmarks and interpretation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON config or a previous run's manifest.json")
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one key; dotted keys reach nested sections")
        s.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args.config, args.out, args.set)
        if args.print_config:
            print(json.dumps(cfg, indent=2, sort_keys=True))
            return 0
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            manifest = run(args.command, cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
