"""Command line driver for the full experiment matrix.

Run directory layout::

    <out>/config.json               resolved run configuration
    <out>/manifest.json             run id, seed, datasets, ensembles, files
    <out>/data/<system>/train.csv   forward-difference pairs
    <out>/data/<system>/split.json  validation hold-out
    <out>/data/<system>/test.csv    ground-truth test trajectory
    <out>/models/<system>/<cfg>/member_<seed>.json, loss_<seed>.csv
    <out>/forecasts/<system>/<cfg>.csv, <cfg>_rfmse.json
    <out>/report.csv
    <out>/plots/*.svg
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .errors import BlowUpError, ConfigError, PGNNError
from .forecast import (
    Z_95,
    ensemble_forecast,
    read_forecast_csv,
    read_report_csv,
    relative_rfmse,
    write_forecast_csv,
    write_report_csv,
)
from .integrator import DEFAULT_ATOL, DEFAULT_RTOL, simulate
from .network import BASELINE, DEFAULT_ACTIVATION, InjectionConfig, load_model, save_model
from .plots import forecast_chart, loss_chart
from .systems import SYSTEM_IDS, TERMS, get_system
from .trainer import TrainConfig, ema_smooth, read_loss_csv, train_ensemble, write_loss_csv

log = logging.getLogger("pgnn")

INJECTION_LAYERS = (1, 2, 3)


@dataclass
class RunConfig:
    systems: list[str] = field(default_factory=lambda: list(SYSTEM_IDS))
    out_dir: str = "runs/default"
    seed: int = 0
    epochs: int = 100
    ensemble_size: int = 10
    batch_size: int = 32
    val_fraction: float = 0.2
    rtol: float = DEFAULT_RTOL
    atol: float = DEFAULT_ATOL
    activation: str = DEFAULT_ACTIVATION
    workers: int = 1

    def validate(self) -> "RunConfig":
        bad = [s for s in self.systems if s not in SYSTEM_IDS]
        if bad or not self.systems:
            raise ConfigError(f"unknown or empty systems {bad}; choose from {SYSTEM_IDS}")
        if self.epochs < 1 or self.ensemble_size < 1 or self.batch_size < 1 or self.workers < 1:
            raise ConfigError("epochs, ensemble_size, batch_size and workers must be >= 1")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be >= 2 for ensemble statistics")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("rtol and atol must be positive")
        return self

    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
                           ensemble_size=self.ensemble_size, activation=self.activation)

    def run_id(self) -> str:
        d = asdict(self)
        d.pop("out_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        return cls(**d)


def configurations(system: str) -> list[InjectionConfig]:
    """Baseline plus every (term, layer) pair of ``system``."""
    spec = get_system(system)
    return [BASELINE] + [InjectionConfig(t, l) for t in spec.terms for l in INJECTION_LAYERS]


# -- manifest ------------------------------------------------------------------

def _manifest_path(cfg: RunConfig) -> Path:
    return cfg.out / "manifest.json"


def load_manifest(cfg: RunConfig) -> dict:
    path = _manifest_path(cfg)
    if path.exists():
        return json.loads(path.read_text())
    return {"run_id": cfg.run_id(), "seed": cfg.seed, "config": asdict(cfg),
            "datasets": {}, "ensembles": []}


def save_manifest(cfg: RunConfig, manifest: dict) -> None:
    manifest["run_id"] = cfg.run_id()
    manifest["seed"] = cfg.seed
    manifest["config"] = asdict(cfg)
    manifest["ensembles"].sort(key=lambda e: (SYSTEM_IDS.index(e["system"]), e["term"] != "none",
                                              e["term"], e["layer"]))
    _manifest_path(cfg).write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _rel(cfg: RunConfig, path: Path) -> str:
    return str(path.relative_to(cfg.out))


def _ensemble_entry(manifest: dict, system: str, inj: InjectionConfig) -> dict:
    term = inj.term or "none"
    for e in manifest["ensembles"]:
        if e["system"] == system and e["term"] == term and e["layer"] == inj.layer:
            return e
    e = {"system": system, "term": term, "layer": inj.layer, "seeds": [], "files": {},
         "diverged_members": []}
    manifest["ensembles"].append(e)
    return e


# -- subcommands ---------------------------------------------------------------

def cmd_generate(cfg: RunConfig, manifest: dict | None = None) -> dict:
    """Simulate training and test trajectories, write datasets and splits."""
    owned = manifest is None
    manifest = load_manifest(cfg) if owned else manifest
    for system in cfg.systems:
        spec = get_system(system)
        dd = spec.defaults
        d = cfg.out / "data" / system
        d.mkdir(parents=True, exist_ok=True)
        trajs, errors = [], []
        for i, ic in enumerate(dd.train_ics):
            try:
                trajs.append(simulate(spec.rhs, ic, 0.0, dd.h, dd.T, cfg.rtol, cfg.atol))
            except BlowUpError as exc:
                errors.append({"ic": list(ic), "error": str(exc)})
                log.warning("%s: training IC %d failed: %s", system, i, exc)
        entry = {"errors": errors, "files": {}}
        try:
            test = simulate(spec.rhs, dd.test_ic, 0.0, dd.h, dd.T, cfg.rtol, cfg.atol)
            ds_mod.write_trajectory_csv(test, d / "test.csv")
            entry["files"]["test"] = _rel(cfg, d / "test.csv")
        except BlowUpError as exc:
            errors.append({"ic": list(dd.test_ic), "error": str(exc), "test": True})
        if trajs:
            data = ds_mod.build_dataset(spec, trajs)
            sp = ds_mod.split(data, cfg.val_fraction, cfg.seed)
            ds_mod.write_dataset_csv(data, d / "train.csv")
            ds_mod.write_split_json(sp, d / "split.json", cfg.seed, cfg.val_fraction)
            entry["files"].update(train=_rel(cfg, d / "train.csv"), split=_rel(cfg, d / "split.json"))
            entry["n_pairs"] = len(data)
            entry["n_trajectories"] = len(trajs)
            entry["points_per_trajectory"] = [len(t) for t in trajs]
        manifest["datasets"][system] = entry
        log.info("%s: %d trajectories, %d errors", system, len(trajs), len(errors))
    if owned:
        save_manifest(cfg, manifest)
    return manifest


def _load_data(cfg: RunConfig, system: str):
    spec = get_system(system)
    d = cfg.out / "data" / system
    missing = [p for p in (d / "train.csv", d / "split.json", d / "test.csv") if not p.exists()]
    if missing:
        raise FileNotFoundError("missing inputs: " + ", ".join(map(str, missing)))
    data = ds_mod.read_dataset_csv(d / "train.csv", system, spec.defaults.h)
    sp = ds_mod.read_split_json(d / "split.json")
    test = ds_mod.read_trajectory_csv(d / "test.csv", spec.defaults.h)
    return spec, data, sp, test


def cmd_train(cfg: RunConfig, manifest: dict | None = None) -> dict:
    """Train one ensemble per configuration of every selected system."""
    owned = manifest is None
    manifest = load_manifest(cfg) if owned else manifest
    tc = cfg.train_config()
    for system in cfg.systems:
        spec, data, sp, _ = _load_data(cfg, system)
        for inj in configurations(system):
            mdir = cfg.out / "models" / system / inj.label
            mdir.mkdir(parents=True, exist_ok=True)
            members = train_ensemble(data, sp, spec, inj, tc, workers=cfg.workers)
            entry = _ensemble_entry(manifest, system, inj)
            entry["seeds"] = tc.member_seeds()
            entry["files"]["models"] = []
            entry["files"]["losses"] = []
            entry["diverged_members"] = []
            for seed, (params, hist) in zip(tc.member_seeds(), members):
                mp, lp = mdir / f"member_{seed}.json", mdir / f"loss_{seed}.csv"
                save_model(params, mp)
                write_loss_csv(hist, lp)
                entry["files"]["models"].append(_rel(cfg, mp))
                entry["files"]["losses"].append(_rel(cfg, lp))
                if hist.diverged:
                    entry["diverged_members"].append(seed)
            log.info("%s %s: trained %d members", system, inj.label, len(members))
    if owned:
        save_manifest(cfg, manifest)
    return manifest


def cmd_evaluate(cfg: RunConfig, manifest: dict | None = None) -> dict:
    """Rolling forecasts of every trained ensemble on the test trajectory."""
    owned = manifest is None
    manifest = load_manifest(cfg) if owned else manifest
    for e in manifest["ensembles"]:
        if e["system"] not in cfg.systems:
            continue
        spec, _, _, test = _load_data(cfg, e["system"])
        models = [load_model(cfg.out / p) for p in e["files"]["models"]]
        res = ensemble_forecast(models, spec, test, z=Z_95)
        inj = InjectionConfig(None if e["term"] == "none" else e["term"], e["layer"])
        fdir = cfg.out / "forecasts" / e["system"]
        fdir.mkdir(parents=True, exist_ok=True)
        fp, sp = fdir / f"{inj.label}.csv", fdir / f"{inj.label}_rfmse.json"
        write_forecast_csv(res, fp)
        sp.write_text(json.dumps({
            "window": res.window,
            "rfmse_per_member": [_json_float(r) for r in res.rfmse_per_member],
            "diverged_at": res.diverged,
            "rfmse_mean": _json_float(res.rfmse_mean),
            "rfmse_std": _json_float(res.rfmse_std),
            "n_diverged": res.n_diverged,
        }))
        e["files"]["forecast"] = _rel(cfg, fp)
        e["files"]["rfmse"] = _rel(cfg, sp)
    if owned:
        save_manifest(cfg, manifest)
    return manifest


def _json_float(x: float):
    return x if math.isfinite(x) else str(x)


def _unjson_float(x) -> float:
    return float(x)


def cmd_report(cfg: RunConfig, manifest: dict | None = None) -> list[dict]:
    """Aggregate RFMSE summaries into ``report.csv`` with per-system relative RFMSE."""
    owned = manifest is None
    manifest = load_manifest(cfg) if owned else manifest
    rows = []
    for e in manifest["ensembles"]:
        if e["system"] not in cfg.systems or "rfmse" not in e["files"]:
            continue
        s = json.loads((cfg.out / e["files"]["rfmse"]).read_text())
        rows.append({"system": e["system"], "term": e["term"], "layer": e["layer"],
                     "rfmse_mean": _unjson_float(s["rfmse_mean"]),
                     "rfmse_std": _unjson_float(s["rfmse_std"]),
                     "n_diverged": s["n_diverged"]})
    table = {(r["system"], r["term"], r["layer"]): r["rfmse_mean"] for r in rows}
    rel = relative_rfmse(table)
    for r in rows:
        r["relative_rfmse"] = rel[(r["system"], r["term"], r["layer"])]
    write_report_csv(rows, cfg.out / "report.csv")
    manifest["report"] = "report.csv"
    if owned:
        save_manifest(cfg, manifest)
    return rows


def smoothed_mean_curve(histories, key: str, alpha: float = 0.2) -> np.ndarray:
    """EMA-smooth each member's curve, then average across members epoch by epoch."""
    curves = [ema_smooth(getattr(h, key), alpha) for h in histories if getattr(h, key)]
    n = min(len(c) for c in curves)
    return np.mean([c[:n] for c in curves], axis=0)


def cmd_plot(cfg: RunConfig, manifest: dict | None = None) -> list[Path]:
    """Loss comparison and forecast band SVGs for every system in the manifest."""
    owned = manifest is None
    manifest = load_manifest(cfg) if owned else manifest
    pdir = cfg.out / "plots"
    missing = []
    for e in manifest["ensembles"]:
        for p in e["files"].get("losses", []) + [e["files"].get("forecast", "")]:
            if p and not (cfg.out / p).exists():
                missing.append(str(cfg.out / p))
    if not manifest["ensembles"]:
        missing.append(str(_manifest_path(cfg)) + " (no ensembles)")
    if missing:
        raise FileNotFoundError("missing inputs: " + ", ".join(missing))
    pdir.mkdir(parents=True, exist_ok=True)
    written = []
    by_system: dict[str, list[dict]] = {}
    for e in manifest["ensembles"]:
        by_system.setdefault(e["system"], []).append(e)
    for system, entries in by_system.items():
        for key, name in (("train", "training loss"), ("val", "validation loss")):
            curves = {}
            for e in entries:
                hists = [read_loss_csv(cfg.out / p) for p in e["files"].get("losses", [])]
                if hists and all(getattr(h, key) for h in hists):
                    label = "no injection" if e["term"] == "none" else \
                        f"{TERMS[e['term']].label} layer {e['layer']}"
                    curves[label] = smoothed_mean_curve(hists, key)
            if curves:
                path = pdir / f"{system}_loss_{key}.svg"
                loss_chart(curves, f"{system}: {name}", "MSE").save(path)
                written.append(path)
        for e in entries:
            if "forecast" not in e["files"]:
                continue
            f = read_forecast_csv(cfg.out / e["files"]["forecast"])
            label = "none" if e["term"] == "none" else f"{e['term']}_L{e['layer']}"
            path = pdir / f"{system}_{label}_forecast.svg"
            forecast_chart(f["t"], f["truth"], f["mean"], f["lo"], f["hi"],
                           f"{system}: {label}").save(path)
            written.append(path)
    return written


def cmd_matrix(cfg: RunConfig) -> list[dict]:
    """Generate, train, evaluate, report and plot; the manifest is written once at the end."""
    manifest = load_manifest(cfg)
    cmd_generate(cfg, manifest)
    cmd_train(cfg, manifest)
    cmd_evaluate(cfg, manifest)
    rows = cmd_report(cfg, manifest)
    cmd_plot(cfg, manifest)
    save_manifest(cfg, manifest)
    return rows


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "matrix": cmd_matrix,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--systems", help="comma separated system ids")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="run directory")
    common.add_argument("--epochs", type=int, help="override training epochs")
    common.add_argument("--ensemble", type=int, help="override ensemble size")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="pgnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).splitlines()[0])
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    d = {}
    if args.config:
        try:
            d = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
    cfg = RunConfig.from_dict(d)
    if args.systems:
        cfg.systems = [s.strip() for s in args.systems.split(",") if s.strip()]
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out_dir = args.out
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.ensemble is not None:
        cfg.ensemble_size = args.ensemble
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "config.json").write_text(json.dumps(asdict(cfg), indent=1, sort_keys=True))
        COMMANDS[args.command](cfg)
    except (PGNNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
