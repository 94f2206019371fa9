"""End-to-end command line: ingest, train, calibrate, evaluate, score, bench.

Configuration lives in a declarative JSON file (hundreds of campaigns make
flag-only interfaces impractical); common options can be overridden per
invocation.  Outputs are byte-stable for fixed seeds: one model JSON per
campaign, exploration reports, a manifest with content hashes, metric CSVs
and rendered figures.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import hashlib
import json
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click

from . import calibration, dataset, engine, features, polytomous, report, synth
from .irls import FitConfig
from .model_core import adjust_intercept_ex_ante, model_from_json, model_to_json


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SplitSettings:
    method: str = "random"
    ratio: float = 3.0
    fraction: float = 0.75
    seed: int = 0


@dataclass(frozen=True)
class SamplingSettings:
    tau_pos: float = 1.0
    tau_neg: float = 1.0
    per_campaign: dict = field(default_factory=dict)

    def rates_for(self, campaign: str) -> tuple[float, float]:
        entry = self.per_campaign.get(campaign)
        if entry:
            return float(entry["tau_pos"]), float(entry["tau_neg"])
        return self.tau_pos, self.tau_neg


@dataclass(frozen=True)
class PolicySettings:
    kind: str = "top"
    seed: int = 0
    credit_any_acceptor: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    input: str | None = None
    format: str = "jsonl"
    output_dir: str = "out"
    window: tuple[int | None, int | None] = (None, None)
    split: SplitSettings = SplitSettings()
    fit: FitConfig = FitConfig()
    ladder_k: tuple[int, ...] = features.LADDER_K
    sampling: SamplingSettings = SamplingSettings()
    policy: PolicySettings = PolicySettings()
    workers: int = 1


def _check_keys(doc: dict, allowed: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {sorted(unknown)}")


def load_config(path: str | None, **overrides) -> PipelineConfig:
    """Parse and validate the JSON config; unknown keys are rejected outright."""
    doc: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fp:
            doc = json.load(fp)
        if not isinstance(doc, dict):
            raise ConfigError("config root must be an object")
    _check_keys(doc, {"input", "format", "output_dir", "window", "split", "fit",
                      "ladder_k", "sampling", "policy", "workers"}, "config")

    win = doc.get("window", {})
    _check_keys(win, {"start", "end"}, "window")
    split_doc = doc.get("split", {})
    _check_keys(split_doc, {"method", "ratio", "fraction", "seed"}, "split")
    fit_doc = doc.get("fit", {})
    _check_keys(fit_doc, {"max_iterations", "tolerance", "ridge",
                          "separation_eta_bound", "reuse_qr"}, "fit")
    sampling_doc = doc.get("sampling", {})
    _check_keys(sampling_doc, {"tau_pos", "tau_neg", "per_campaign"}, "sampling")
    for cid, entry in sampling_doc.get("per_campaign", {}).items():
        _check_keys(entry, {"tau_pos", "tau_neg"}, f"sampling.per_campaign[{cid}]")
    policy_doc = doc.get("policy", {})
    _check_keys(policy_doc, {"kind", "seed", "credit_any_acceptor"}, "policy")

    try:
        cfg = PipelineConfig(
            input=doc.get("input"),
            format=doc.get("format", "jsonl"),
            output_dir=doc.get("output_dir", "out"),
            window=(win.get("start"), win.get("end")),
            split=SplitSettings(**split_doc),
            fit=FitConfig(**fit_doc),
            ladder_k=tuple(doc.get("ladder_k", features.LADDER_K)),
            sampling=SamplingSettings(**sampling_doc),
            policy=PolicySettings(**policy_doc),
            workers=int(doc.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    for key, value in overrides.items():
        if value is None:
            continue
        if key in ("input", "format", "output_dir", "workers"):
            cfg = dataclasses.replace(cfg, **{key: value})
        elif key == "seed":
            cfg = dataclasses.replace(cfg, split=dataclasses.replace(cfg.split, seed=value))
        elif key == "split_method":
            cfg = dataclasses.replace(cfg, split=dataclasses.replace(cfg.split, method=value))
        elif key == "policy_kind":
            cfg = dataclasses.replace(cfg, policy=dataclasses.replace(cfg.policy, kind=value))
        else:
            raise ConfigError(f"unsupported override {key!r}")
    if cfg.format not in ("jsonl", "csv"):
        raise ConfigError(f"format must be jsonl or csv: {cfg.format!r}")
    if cfg.split.method not in ("random", "time"):
        raise ConfigError(f"split.method must be random or time: {cfg.split.method!r}")
    if cfg.policy.kind not in polytomous.POLICIES:
        raise ConfigError(f"policy.kind must be top or set: {cfg.policy.kind!r}")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def _log(event: str, **fields) -> None:
    print(json.dumps({"event": event, **fields}, ensure_ascii=False), file=sys.stderr)


def _safe_name(campaign: str) -> str:
    clean = re.sub(r"[^A-Za-z0-9._-]", "_", campaign)
    if clean != campaign or not clean:
        digest = hashlib.sha1(campaign.encode("utf-8")).hexdigest()[:8]
        clean = f"{clean or 'campaign'}-{digest}"
    return clean


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@click.group()
def main() -> None:
    """Per-campaign click-response models and the polytomous scoring ensemble."""


def _train_one(campaign: str, pool, cfg: PipelineConfig, out: Path) -> dict:
    window = None
    if cfg.window != (None, None):
        lo = cfg.window[0] if cfg.window[0] is not None else pool.window[0]
        hi = cfg.window[1] if cfg.window[1] is not None else pool.window[1]
        window = (lo, hi)
    labeled = dataset.build_labeled_set(pool, campaign, window)
    if cfg.split.method == "random":
        split = dataset.split_random(labeled, cfg.split.ratio, cfg.split.seed)
    else:
        split = dataset.split_time(labeled, cfg.split.fraction)
    exploration = features.explore(split, fit_config=cfg.fit, ks=cfg.ladder_k)
    model = exploration.fitted_model
    tau_pos, tau_neg = cfg.sampling.rates_for(campaign)
    if (tau_pos, tau_neg) != (1.0, 1.0):
        model = adjust_intercept_ex_ante(model, tau_pos, tau_neg)
    name = _safe_name(campaign)
    model_path = out / "models" / f"{name}.model.json"
    _atomic_write(model_path, model_to_json(model))
    _atomic_write(out / "reports" / f"{name}.report.json", exploration.to_json())
    return {
        "campaign": campaign,
        "file": str(model_path.relative_to(out)),
        "sha256": _sha256(model_path),
        "auc": model.auc,
        "candidate": exploration.best.name,
    }


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--input", "input_path", type=click.Path(exists=True), default=None)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default=None)
@click.option("--output-dir", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None, help="Override the split seed.")
@click.option("--split-method", type=click.Choice(["random", "time"]), default=None)
@click.option("--workers", type=int, default=None)
def train(config_path, input_path, fmt, output_dir, seed, split_method, workers):
    """Fit one model per campaign: ladder exploration, calibration, threshold."""
    try:
        cfg = load_config(config_path, input=input_path, format=fmt,
                          output_dir=output_dir, seed=seed,
                          split_method=split_method, workers=workers)
    except ConfigError as exc:
        raise click.ClickException(f"config: {exc}")
    if cfg.input is None:
        raise click.ClickException("no input file (use --input or config)")
    out = Path(cfg.output_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)

    result = dataset.ingest(cfg.input, format=cfg.format)
    _atomic_write(out / "ingest_report.json", result.report.to_json())
    pool = result.pool
    campaigns = sorted(pool.campaigns)
    _log("train.start", campaigns=len(campaigns), clicks=len(pool.clicks))

    entries: list[dict] = []
    failures: list[dict] = []

    def run(campaign: str) -> tuple[str, dict | None, str | None]:
        try:
            return campaign, _train_one(campaign, pool, cfg, out), None
        except Exception as exc:  # per-campaign isolation: one failure must not spread
            return campaign, None, f"{type(exc).__name__}: {exc}"

    with concurrent.futures.ThreadPoolExecutor(max_workers=cfg.workers) as pool_exec:
        for campaign, entry, error in pool_exec.map(run, campaigns):
            if entry is not None:
                entries.append(entry)
                _log("train.model", campaign=campaign, auc=entry["auc"])
            else:
                failures.append({"campaign": campaign, "error": error})
                _log("train.failed", campaign=campaign, error=error)

    manifest = {
        "models": {e["campaign"]: {k: e[k] for k in ("file", "sha256", "auc", "candidate")}
                   for e in sorted(entries, key=lambda e: e["campaign"])},
        "failures": sorted(failures, key=lambda f: f["campaign"]),
    }
    _atomic_write(out / "manifest.json",
                  json.dumps(manifest, ensure_ascii=False, indent=2) + "\n")
    _log("train.done", trained=len(entries), failed=len(failures))
    if not entries:
        raise click.ClickException("no model could be trained")


def _load_models(models_dir: str) -> dict:
    paths = sorted(Path(models_dir).glob("*.model.json"))
    if not paths:
        raise click.ClickException(f"no *.model.json files under {models_dir}")
    models = {}
    for p in paths:
        try:
            model = model_from_json(p.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise click.ClickException(f"unreadable model {p}: {exc}")
        models[model.campaign] = model
    return models


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--models", "models_dir", type=click.Path(exists=True), required=True)
@click.option("--clicks", "clicks_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default=None)
@click.option("--policy", type=click.Choice(list(polytomous.POLICIES)), default=None)
@click.option("--credit-any-acceptor", is_flag=True, default=False,
              help="Set-policy alternative: credit every accepting model.")
@click.option("--batch-size", type=int, default=1000, help="Time-series batch size.")
@click.option("--output-dir", type=click.Path(), default=None)
def evaluate(config_path, models_dir, clicks_path, fmt, policy,
             credit_any_acceptor, batch_size, output_dir):
    """Score known clicks through the ensemble; emit metrics, CSV series, figures."""
    try:
        cfg = load_config(config_path, format=fmt, output_dir=output_dir,
                          policy_kind=policy)
    except ConfigError as exc:
        raise click.ClickException(f"config: {exc}")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    models = _load_models(models_dir)
    ensemble = polytomous.PolytomousModel(
        models=models, policy=cfg.policy.kind, seed=cfg.policy.seed
    )
    result = dataset.ingest(clicks_path, format=cfg.format)
    credit = credit_any_acceptor or cfg.policy.credit_any_acceptor
    try:
        metrics = polytomous.evaluate(ensemble, result.pool, credit_any_acceptor=credit)
        cov = polytomous.coverage(ensemble, result.pool.clicks)
    except polytomous.EmptyPoolError as exc:
        raise click.ClickException(str(exc))

    doc = json.loads(metrics.to_json())
    doc["coverage"] = {
        "rejected_by_all": cov.rejected_by_all,
        "total": cov.total,
        "fraction": cov.fraction,
    }
    _atomic_write(out / "metrics.json", json.dumps(doc, ensure_ascii=False, indent=2) + "\n")

    rows = polytomous.metrics_timeseries(
        ensemble, result.pool, batch_size=batch_size, credit_any_acceptor=credit
    )
    with open(out / "metrics_timeseries.csv", "w", encoding="utf-8", newline="") as fp:
        writer = csv.DictWriter(
            fp, fieldnames=["batch", "start_ordinal", "size", *report.METRIC_KEYS]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k))
                             for k in writer.fieldnames})
    if rows:
        report.save_metrics_figure(rows, out / "metrics_timeseries.png")
    _log("evaluate.done", evaluated=metrics.evaluated,
         skipped=metrics.skipped_no_model, coverage_fraction=cov.fraction)
    click.echo(json.dumps(doc["total"], indent=2))


@main.command()
@click.option("--models", "models_dir", type=click.Path(exists=True), required=True)
@click.option("--batch", "batch_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--backend", type=click.Choice(list(engine.BACKENDS)), default="bsearch")
@click.option("--output", "output_path", type=click.Path(), default="decisions.csv")
def score(models_dir, batch_path, fmt, backend, output_path):
    """Batch-score impressions against every model; one CSV row per impression."""
    models = _load_models(models_dir)
    ids = sorted(models)
    compiled = [engine.compile(models[cid], backend=backend) for cid in ids]
    imps = dataset.load_impressions(batch_path, format=fmt)
    batch = engine.encode_batch(imps)
    etas = engine.eta_batch(compiled, batch)
    margins = etas - [m.threshold for m in compiled]
    with open(output_path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["ordinal", "campaign", "n_accepted", "accepted_by", "top_choice"])
        for i, imp in enumerate(imps):
            accepted = [j for j in range(len(ids)) if margins[i, j] > 0]
            top = max(accepted, key=lambda j: margins[i, j]) if accepted else None
            writer.writerow([
                i, imp.campaign, len(accepted),
                "|".join(ids[j] for j in accepted),
                ids[top] if top is not None else "",
            ])
    _log("score.done", impressions=len(imps), models=len(ids), output=output_path)


@main.command()
@click.option("--models", "models_dir", type=click.Path(exists=True), required=True)
@click.option("--batch", "batch_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--threads", default="1", help="Comma-separated thread counts, e.g. 1,2,4.")
@click.option("--reps", type=int, default=None, help="Fixed repetitions per thread.")
@click.option("--min-seconds", type=float, default=0.5)
@click.option("--backend", type=click.Choice(list(engine.BACKENDS)), default="bsearch")
@click.option("--output-dir", type=click.Path(), default="out")
def bench(models_dir, batch_path, fmt, threads, reps, min_seconds, backend, output_dir):
    """Peak-throughput measurement across thread counts."""
    models = _load_models(models_dir)
    compiled = [engine.compile(models[cid], backend=backend) for cid in sorted(models)]
    imps = dataset.load_impressions(batch_path, format=fmt)
    batch = engine.encode_batch(imps)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    thread_counts = [int(t) for t in threads.split(",") if t.strip()]
    rows = []
    for t in thread_counts:
        rep = engine.bench(compiled, batch, threads=t,
                           repetitions=reps, min_seconds=min_seconds)
        rows.append(json.loads(rep.to_json()))
        click.echo(f"threads={t:2d}  qps={rep.qps:12.0f}  pair_rate={rep.pair_rate:14.0f}")
    _atomic_write(out / "bench.json", json.dumps(rows, indent=2) + "\n")
    with open(out / "bench.csv", "w", encoding="utf-8", newline="") as fp:
        writer = csv.DictWriter(fp, fieldnames=["threads", "qps", "pair_rate",
                                                "wall_time", "repetitions"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in writer.fieldnames})
    report.save_scaling_figure(rows, out / "bench.png")
    _log("bench.done", sweeps=len(rows))


@main.command("roc-export")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--clicks", "clicks_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["jsonl", "csv"]), default="jsonl")
@click.option("--output-dir", type=click.Path(), default="out")
def roc_export(model_path, clicks_path, fmt, output_dir):
    """ROC curve of one model over a click pool: CSV points, threshold, figure."""
    model = model_from_json(Path(model_path).read_text(encoding="utf-8"))
    result = dataset.ingest(clicks_path, format=fmt)
    try:
        labeled = dataset.build_labeled_set(result.pool, model.campaign)
        curve = calibration.roc(model, labeled)
    except (dataset.NoPositivesError, dataset.NoNegativesError,
            calibration.DegenerateCalibrationError) as exc:
        raise click.ClickException(str(exc))
    choice = calibration.select_threshold(curve)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = _safe_name(model.campaign)
    with open(out / f"{name}.roc.csv", "w", encoding="utf-8", newline="") as fp:
        calibration.export_curve_csv(curve, fp)
    _atomic_write(out / f"{name}.threshold.json", choice.to_json())
    report.save_roc_figure(curve, out / f"{name}.roc.png", choice,
                           title=f"ROC {model.campaign}")
    _log("roc_export.done", campaign=model.campaign, auc=curve.auc,
         youden=choice.youden)


@main.command("synth")
@click.option("--clicks", type=int, default=4000)
@click.option("--campaigns", type=int, default=3)
@click.option("--impressions", type=int, default=20000)
@click.option("--seed", type=int, default=0)
@click.option("--output-dir", type=click.Path(), default="data")
def synth_cmd(clicks, campaigns, impressions, seed, output_dir):
    """Generate a synthetic click log and impression batch for a demo run."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = synth.make_click_pool(n=clicks, n_campaigns=campaigns, seed=seed)
    dataset.emit(pool, out / "clicks.jsonl")
    imps = synth.random_impressions(n=impressions, seed=seed + 1,
                                    n_domains=40, n_zips=50)
    dataset.write_impressions(imps, out / "impressions.jsonl")
    _log("synth.done", clicks=len(pool.clicks), impressions=len(imps),
         output=str(out))


if __name__ == "__main__":
    main()
