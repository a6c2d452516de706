"""Command-line entry point: ``mmbeam {generate,train,evaluate,report}``.

Exit codes: 0 success, 2 I/O failure, 3 validation failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from .channel import ScenarioConfig, generate_dataset
from .data import GpsNormalizer, load_manifest, split_dataset
from .errors import NumericError, ValidationError
from .fusion import load_checkpoint, save_checkpoint
from .metrics import MetricsReport, compute_report
from .training import TrainConfig, evaluate, train

log = logging.getLogger("mmbeam")

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3, 4

MANIFEST = "manifest.jsonl"
CHECKPOINT = "checkpoint.bin"
TRAINLOG = "trainlog.csv"
METRICS_JSON = "metrics.json"
METRICS_CSV = "metrics.csv"
REPORT_TXT = "report.txt"
REPORT_CSV = "report.csv"


def default_run_config() -> dict:
    return {
        "scenario": asdict(ScenarioConfig()),
        "n_samples": 2000,
        "train": asdict(TrainConfig()),
        "k_max": 15,
        "split": "test",
        "paths": {"manifest": MANIFEST, "checkpoint": CHECKPOINT},
    }


def _deep_merge(base: dict, override: dict, where: str = "") -> dict:
    for key, value in override.items():
        if key not in base:
            raise ValidationError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            _deep_merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value
    return base


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ValidationError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ValidationError(f"unknown config key {key}")
        node = node[p]
    if parts[-1] not in node:
        raise ValidationError(f"unknown config key {key}")
    node[parts[-1]] = _parse_value(raw)


def resolve_run_config(config_path: str | None, overrides: list[str], seed: int | None) -> dict:
    cfg = default_run_config()
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            try:
                _deep_merge(cfg, json.load(fh))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{config_path}: invalid JSON ({exc.msg})") from exc
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg["scenario"]["seed"] = seed
        cfg["train"]["seed"] = seed
    # round-trip through the dataclasses so bad values fail before any work starts
    try:
        cfg["scenario"] = asdict(ScenarioConfig(**cfg["scenario"]))
        cfg["train"] = asdict(TrainConfig(**cfg["train"]))
    except TypeError as exc:
        raise ValidationError(f"bad config: {exc}") from exc
    return cfg


def _path(out: str, name: str) -> str:
    return name if os.path.isabs(name) else os.path.join(out, name)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: dict, out: str) -> int:
    os.makedirs(out, exist_ok=True)
    scenario = ScenarioConfig(**cfg["scenario"])
    samples, manifest = generate_dataset(scenario, int(cfg["n_samples"]), out,
                                         provenance={"command": "generate", "run_config": cfg})
    hist = np.bincount([s.label for s in samples], minlength=scenario.n_beams)
    print(f"wrote {len(samples)} samples to {_path(out, MANIFEST)} (K={scenario.n_beams})")
    print("label histogram: " + " ".join(str(int(c)) for c in hist))
    return EXIT_OK


def cmd_train(cfg: dict, out: str) -> int:
    os.makedirs(out, exist_ok=True)
    tcfg = TrainConfig(**cfg["train"])
    needs_images = tcfg.variant in ("fusion", "vision-only")
    manifest = load_manifest(_path(out, cfg["paths"]["manifest"]), check_images=needs_images)
    splits = split_dataset(manifest, tcfg.seed)
    if tcfg.epochs == 0:
        log.warning("epochs=0: writing the initial weights")
    result = train(manifest, splits, tcfg)
    save_checkpoint(_path(out, cfg["paths"]["checkpoint"]), result.predictor, {
        "K": manifest.n_beams,
        "normalizer": result.normalizer.to_dict(),
        "split_seed": splits.seed,
        "best_epoch": result.best_epoch,
        "run_config": cfg,
    })
    with open(_path(out, TRAINLOG), "w", encoding="utf-8") as fh:
        fh.write(result.log.to_csv())
    print(f"best validation epoch: {result.best_epoch}")
    return EXIT_OK


def cmd_evaluate(cfg: dict, out: str) -> int:
    os.makedirs(out, exist_ok=True)
    predictor, meta = load_checkpoint(_path(out, cfg["paths"]["checkpoint"]))
    manifest = load_manifest(_path(out, cfg["paths"]["manifest"]), check_images=predictor.config.uses_vision)
    if int(meta["K"]) != manifest.n_beams:
        raise ValidationError(f"checkpoint K={meta['K']} but manifest K={manifest.n_beams}")
    if "noise_floor" not in manifest.metadata:
        raise ValidationError("manifest metadata lacks noise_floor (p_o), required for power loss")
    splits = split_dataset(manifest, int(meta["split_seed"]))
    indices = splits.get(cfg["split"])
    bundle = evaluate(predictor, manifest, indices, GpsNormalizer.from_dict(meta["normalizer"]))
    report = compute_report(bundle.logits, bundle.labels, bundle.powers, float(manifest.metadata["noise_floor"]),
                            int(cfg["k_max"]), variant=predictor.variant,
                            provenance={"command": "evaluate", "run_config": cfg,
                                        "seed": cfg["train"]["seed"],
                                        "trained_with": meta["run_config"]})
    with open(_path(out, METRICS_JSON), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
    with open(_path(out, METRICS_CSV), "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    for k, acc, apl, red in zip(report.ks, report.accuracy, report.apl_db, report.reduction):
        print(f"top-{k:<2d} acc={100 * acc:6.2f}%  APL={apl:6.3f} dB  reduction={100 * red:.2f}%")
    return EXIT_OK


def comparison_table(reports: list[MetricsReport], names: list[str] | None = None) -> tuple[list[str], list[list]]:
    """Header and rows (k ascending) with accuracy and APL per report."""
    if len({r.n_beams for r in reports}) > 1:
        raise ValidationError(f"reports mix codebook sizes {sorted({r.n_beams for r in reports})}")
    names = names or [r.variant or f"report{i}" for i, r in enumerate(reports)]
    header = ["k"] + [f"{n}_{m}" for n in names for m in ("accuracy", "apl_db")] + ["reduction"]
    ks = sorted(set().union(*(r.ks for r in reports)))
    rows = []
    for k in ks:
        row = [k]
        for r in reports:
            if k in r.ks:
                i = r.ks.index(k)
                row += [r.accuracy[i], r.apl_db[i]]
            else:
                row += [None, None]
        row.append((reports[0].n_beams - k) / reports[0].n_beams)
        rows.append(row)
    return header, rows


def cmd_report(paths: list[str], out: str) -> int:
    reports = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            reports.append(MetricsReport.from_json(fh.read()))
    names = [r.variant or os.path.basename(os.path.dirname(os.path.abspath(p))) for r, p in zip(reports, paths)]
    if len(set(names)) < len(names):
        names = [f"{n}#{i}" for i, n in enumerate(names)]
    header, rows = comparison_table(reports, names)

    def fmt(v, col):
        if v is None:
            return "-"
        if col == 0:
            return str(v)
        return f"{100 * v:.2f}" if header[col].endswith(("accuracy", "reduction")) else f"{v:.3f}"

    cells = [header] + [[fmt(v, c) for c, v in enumerate(row)] for row in rows]
    widths = [max(len(r[c]) for r in cells) for c in range(len(header))]
    text = "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in cells) + "\n"
    print(text, end="")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, REPORT_TXT), "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(os.path.join(out, REPORT_CSV), "w", encoding="utf-8") as fh:
        fh.write("\n".join(",".join(r) for r in cells) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmbeam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("generate", "train", "evaluate", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-key override, e.g. train.epochs=5 (repeatable)")
        p.add_argument("--seed", type=int, help="seed for both data generation and training")
        p.add_argument("--out", default=".", help="output directory")
        if name == "report":
            p.add_argument("reports", nargs="+", help="metrics.json files to compare")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.reports, args.out)
        cfg = resolve_run_config(args.config, args.set, args.seed)
        handler = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate}[args.command]
        return handler(copy.deepcopy(cfg), args.out)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
