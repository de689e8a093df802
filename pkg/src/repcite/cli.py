"""Command-line entry point: fit, baseline, diagnose, ingest, simulate.

Every option can also come from a JSON config file (``--config``); explicit
flags win over the file, which wins over built-in defaults. Each run writes
into ``{out}/run-{config hash}-seed{seed}/`` and always leaves a
``manifest.json`` there, on failure as well as on success.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from repcite import __version__
from repcite import glm, report
from repcite.data import Dataset, DatasetError, load_dataset, records_to_dataset, save_dataset
from repcite.infer import PosteriorDraws, SamplerConfig, fit
from repcite.ingest import ClientConfig, CitationClient, IngestError, fetch_citations_by_year
from repcite.model import FIELDS, ML, ML_FEATURES, SCIENCE, DataError, LayoutError, ModelConfig, PaperRecord
from repcite.nuts import SamplerError
from repcite.simulate import balanced_design, prior_predictive

log = logging.getLogger("repcite")

CONFIG_SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_INFERENCE = 0, 2, 3

DEFAULTS = {
    "fit": {
        "data": None, "variant": SCIENCE, "source": "SC+M", "components": 50, "horizon": 10,
        "warmup": 500, "samples": 2250, "thin": 3, "chains": 4, "seed": 0, "jobs": 1, "out": "runs",
    },
    "baseline": {"data": None, "model": "nb", "source": "SC+M", "seed": 0, "out": "runs"},
    "diagnose": {"data": None, "seed": 0, "out": "runs"},
    "ingest": {"ids": None, "cache": "cache", "rate": 1.0, "out": None, "seed": 0, "base_url": None},
    "simulate": {
        "seed": 0, "out": "runs", "variant": SCIENCE, "papers": 60, "components": 10, "horizon": 10,
        "min_years": 1, "fields": list(FIELDS), "fixed": {},
    },
}
# keys that name where to write rather than what to compute
_NON_HASHED = {"out", "jobs", "cache"}


class InputError(Exception):
    pass


def _source_filter(source: str):
    s = source.upper()
    if s == "GS":
        return "GS", FIELDS[:3]
    if s == "SC":
        return "SC", FIELDS[:3]
    if s == "SC+M":
        return "SC", FIELDS
    raise InputError(f"unknown source {source!r}; expected gs, sc or sc+m")


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError(f"config file {args.config} must hold a JSON object")
        section = doc.get(command, doc)
        unknown = sorted(set(section) - set(cfg) - {"config_schema"})
        if unknown:
            raise InputError(f"unknown config key(s) for {command}: {', '.join(unknown)}")
        cfg.update(section)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def config_hash(command: str, cfg: dict) -> str:
    hashed = {k: v for k, v in cfg.items() if k not in _NON_HASHED and k != "seed"}
    blob = json.dumps({"command": command, "config": hashed, "schema": CONFIG_SCHEMA_VERSION}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _digest(path) -> str | None:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        return None


class Run:
    """Run directory plus the manifest written on every exit path."""

    def __init__(self, command: str, cfg: dict, base: Path, inputs: list):
        self.command, self.cfg = command, cfg
        self.dir = Path(base) / f"run-{config_hash(command, cfg)}-seed{cfg.get('seed', 0)}"
        self.inputs = {str(p): _digest(p) for p in inputs if p}
        self.artifacts: list[str] = []
        self.t0 = time.time()

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        self.artifacts.append(str(p))
        return p

    def manifest(self, status: str, exit_code: int, extra: dict | None = None) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "subcommand": self.command,
            "version": __version__,
            "config_schema": CONFIG_SCHEMA_VERSION,
            "config": self.cfg,
            "seed": self.cfg.get("seed"),
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "status": status,
            "exit_code": exit_code,
            "wall_clock_seconds": round(time.time() - self.t0, 3),
        }
        if extra:
            doc.update(extra)
        (self.dir / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _load(cfg: dict, variant: str) -> Dataset:
    if not cfg.get("data"):
        raise InputError("--data is required")
    if not Path(cfg["data"]).is_file():
        raise InputError(f"data file not found: {cfg['data']}")
    return load_dataset(cfg["data"], variant)


def _truncate(records, T: int) -> list[PaperRecord]:
    out = []
    for r in records:
        if r.counts.size < T:
            raise InputError(f"horizon {T} exceeds the {r.counts.size} year columns in the data")
        out.append(dataclasses.replace(r, counts=r.counts[:T], observed=r.observed[:T]))
    return out


def _totals(records) -> np.ndarray:
    return np.array([int(r.counts[r.observed].sum()) for r in records], dtype=float)


# -- fit ---------------------------------------------------------------------


def cmd_fit(cfg: dict, run: Run) -> dict:
    variant = cfg["variant"]
    if variant not in (SCIENCE, ML):
        raise InputError(f"unknown variant {variant!r}")
    ds = _load(cfg, variant)
    T, K = int(cfg["horizon"]), int(cfg["components"])
    if variant == SCIENCE:
        src, fields = _source_filter(cfg["source"])
        records = ds.subset(src, fields)
        present = tuple(f for f in fields if any(r.group == f for r in records))
        mcfg = ModelConfig(T=T, K=K, groups=present)
    else:
        records = ds.records
        mcfg = ModelConfig.ml(T=T, K=K)
    if not records:
        raise InputError("no records match the requested source")
    records = _truncate(records, T)
    sc = SamplerConfig(
        warmup=int(cfg["warmup"]), draws=int(cfg["samples"]), thin=int(cfg["thin"]), chains=int(cfg["chains"]),
        seed=int(cfg["seed"]), n_jobs=cfg["jobs"],
    )
    log.info("fitting %s variant: %d papers, K=%d, T=%d, %d chains", variant, len(records), K, T, sc.chains)
    pd = fit(records, mcfg, sc)
    mcfg = pd.extras["config"]
    pd.to_csv(run.path("draws.csv"))

    with open(run.path("diagnostics.csv"), "w") as fh:
        fh.write("parameter,rhat,ess\n")
        for name, (rhat, ess) in (pd.diagnostics or {}).items():
            fh.write(f"{name},{report.fmt(rhat)},{report.fmt(ess)}\n")

    if variant == SCIENCE:
        labels = {f"beta[{g}]": g for g in mcfg.groups}
        title = "Reproduction effect by field"
    else:
        labels = {f"beta[{name}]": label for name, label, _ in ML_FEATURES}
        title = "Feature coefficients"
    rows = report.summarize(pd, labels)
    report.emit_forest(rows, run.path("forest.svg"), run.path("forest.csv"), title)
    profiles = report.style_profiles(pd, mcfg)
    report.emit_styles(
        profiles, mcfg.T, run.path("styles.svg"), run.path("styles_weights.csv"), run.path("styles_trajectories.csv"),
        "Citation styles",
    )
    r2 = report.bayes_r2(pd, records, mcfg)
    run.path("r2.json").write_text(json.dumps(r2.metadata(), indent=2) + "\n")
    summary = {
        "n_papers": len(records),
        "r2": r2.metadata()["r2"],
        "divergent_draws": int(pd.divergent.sum()),
        "warnings": pd.warnings,
        "max_rhat_beta": _max_rhat(pd, list(labels)),
    }
    print(json.dumps(summary, indent=2))
    return summary


def _max_rhat(pd: PosteriorDraws, names) -> float | None:
    if not pd.diagnostics:
        return None
    vals = [pd.diagnostics[n][0] for n in names if n in pd.diagnostics]
    vals = [v for v in vals if math.isfinite(v)]
    return max(vals) if vals else None


# -- baseline / diagnose -----------------------------------------------------


def cmd_baseline(cfg: dict, run: Run) -> dict:
    ds = _load(cfg, SCIENCE)
    src, fields = _source_filter(cfg["source"])
    records = ds.subset(src, fields)
    if not records:
        raise InputError(f"no {cfg['source']} rows in {cfg['data']}")
    y = _totals(records)
    rep = np.array([r.reproduced for r in records], dtype=float)
    row, fit_ = glm.reproduced_effect(y, rep, cfg["model"], cfg["source"].upper())
    glm.write_table1([row], run.path("table1.csv"))
    out = dataclasses.asdict(row)
    out["dispersion"] = fit_.dispersion
    out["pseudo_r2"] = fit_.pseudo_r2
    print(json.dumps(out, indent=2, default=str))
    return out


def cmd_diagnose(cfg: dict, run: Run) -> dict:
    ds = _load(cfg, SCIENCE)
    summary: dict = {"overdispersion": {}, "correlation": None, "groups": {}}
    with open(run.path("overdispersion.csv"), "w") as fh:
        fh.write("source,statistic,p,mean,variance,n,n_dropped\n")
        for label in ("GS", "SC", "SC+M"):
            src, fields = _source_filter(label)
            records = ds.subset(src, fields)
            if not records:
                continue
            y = _totals(records)
            X = np.column_stack([np.ones(y.size), [r.reproduced for r in records]])
            if np.ptp(X[:, 1]) == 0:
                X = X[:, :1]
            res = glm.overdispersion_test(y, X)
            fh.write(f"{label},{report.fmt(res.statistic)},{report.fmt(res.p_value)},{report.fmt(res.mean)},"
                     f"{report.fmt(res.variance)},{y.size},{res.n_dropped}\n")
            summary["overdispersion"][label] = dataclasses.asdict(res)
    if {"GS", "SC"} <= set(ds.available_sources()):
        a, b, ids = ds.paired_counts("GS", "SC")
        corr = glm.pearson_by_year(a, b)
        with open(run.path("correlation_by_year.csv"), "w") as fh:
            fh.write("t,r,p_adjusted,n,defined\n")
            for c in corr:
                fh.write(f"{c.t},{report.fmt(c.r)},{report.fmt(c.p_adjusted)},{c.n},{int(c.defined)}\n")
        summary["correlation"] = [dataclasses.asdict(c) for c in corr]
    else:
        summary["correlation"] = "unavailable: needs both GS and SC rows"
        log.info("correlation section unavailable (single source)")
    with open(run.path("group_summary.csv"), "w") as fh:
        fh.write("source,field,reproduced,n,median,q1,q3,whisker_lo,whisker_hi,n_outliers\n")
        for src in ds.available_sources():
            recs = ds.subset(src)
            stats = glm.group_citation_summary(((r.group, r.reproduced, t) for r, t in zip(recs, _totals(recs))), FIELDS)
            for (fld, rep), b in stats.items():
                fh.write(f"{src},{fld},{int(rep)},{b.n},{report.fmt(b.median)},{report.fmt(b.q1)},{report.fmt(b.q3)},"
                         f"{report.fmt(b.whisker_lo)},{report.fmt(b.whisker_hi)},{len(b.outliers)}\n")
                summary["groups"][f"{src}/{fld}/{int(rep)}"] = dataclasses.asdict(b)
    print(json.dumps({"overdispersion": summary["overdispersion"], "correlation": summary["correlation"]}, indent=2, default=str))
    return summary


# -- ingest / simulate ---------------------------------------------------------


def cmd_ingest(cfg: dict, run: Run) -> dict:
    if not cfg.get("ids"):
        raise InputError("--ids is required")
    try:
        ids = [ln.strip() for ln in Path(cfg["ids"]).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    except FileNotFoundError:
        raise InputError(f"ids file not found: {cfg['ids']}") from None
    client = CitationClient(ClientConfig(base_url=cfg.get("base_url"), requests_per_second=float(cfg["rate"])))
    with open(run.path("citations.csv"), "w") as fh:
        fh.write("paper_id,year,count\n")
        for pid in ids:
            res = fetch_citations_by_year(pid, client, cfg["cache"])
            for year, n in sorted(res.year_counts.items()):
                fh.write(f"{pid},{year},{n}\n")
            fh.write(f"{pid},unknown,{res.unknown_year}\n")
    summary = {"papers": len(ids), "requests": client.requests_made}
    print(json.dumps(summary))
    return summary


def cmd_simulate(cfg: dict, run: Run) -> dict:
    if cfg["variant"] != SCIENCE:
        raise InputError("simulate supports the science variant only")
    fields = tuple(cfg["fields"])
    unknown = [f for f in fields if f not in FIELDS]
    if unknown:
        raise InputError(f"unknown field(s) {', '.join(unknown)}")
    mcfg = ModelConfig(T=int(cfg["horizon"]), K=int(cfg["components"]), groups=fields)
    rng = np.random.default_rng(int(cfg["seed"]))
    design = balanced_design(mcfg, int(cfg["papers"]), rng, min_years=int(cfg["min_years"]))
    fixed = {k: (np.asarray(v, dtype=float) if isinstance(v, list) else v) for k, v in (cfg.get("fixed") or {}).items()}
    records, truth = prior_predictive(mcfg, design, rng, fixed)
    save_dataset(records_to_dataset(records, SCIENCE, mcfg.T), run.path("dataset.csv"))
    truth_doc = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in dataclasses.asdict(truth).items()}
    run.path("truth.json").write_text(json.dumps(truth_doc, indent=2, sort_keys=True) + "\n")
    summary = {"papers": len(records), "dataset": str(run.dir / "dataset.csv")}
    print(json.dumps(summary))
    return summary


COMMANDS = {
    "fit": cmd_fit,
    "baseline": cmd_baseline,
    "diagnose": cmd_diagnose,
    "ingest": cmd_ingest,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repcite", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"repcite {__version__} (config schema {CONFIG_SCHEMA_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--out", help="output directory (a run subdirectory is created inside)")
        if seed:
            sp.add_argument("--seed", type=int)

    f = sub.add_parser("fit", help="fit the hierarchical model with NUTS")
    common(f)
    f.add_argument("--data")
    f.add_argument("--variant", choices=[SCIENCE, ML])
    f.add_argument("--source", help="science data source: gs, sc or sc+m")
    f.add_argument("--components", type=int, help="style pool size K")
    f.add_argument("--horizon", type=int, help="years T")
    f.add_argument("--warmup", type=int)
    f.add_argument("--samples", type=int, help="post-warmup iterations per chain")
    f.add_argument("--thin", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--jobs", type=int, help="worker processes for chains")

    b = sub.add_parser("baseline", help="Poisson / NB regression of total citations on the reproduced indicator")
    common(b)
    b.add_argument("--data")
    b.add_argument("--model", choices=["poisson", "nb"])
    b.add_argument("--source", help="gs, sc or sc+m")

    d = sub.add_parser("diagnose", help="overdispersion test, cross-source correlations, group summaries")
    common(d)
    d.add_argument("--data")

    i = sub.add_parser("ingest", help="fetch per-year citation counts into the cache")
    common(i)
    i.add_argument("--ids", help="file with one paper id per line")
    i.add_argument("--cache", help="cache directory")
    i.add_argument("--rate", type=float, help="requests per second")
    i.add_argument("--base-url", dest="base_url")

    s = sub.add_parser("simulate", help="draw a synthetic science dataset from the prior")
    common(s)
    s.add_argument("--papers", type=int)
    s.add_argument("--components", type=int)
    s.add_argument("--horizon", type=int)
    s.add_argument("--min-years", dest="min_years", type=int)
    return p


def _classify(exc: BaseException) -> int:
    if isinstance(exc, (InputError, DatasetError, DataError, LayoutError, FileNotFoundError, IngestError,
                        glm.GlmError, ValueError, KeyError)):
        return EXIT_INPUT if not isinstance(exc, glm.ConvergenceError) else EXIT_INFERENCE
    if isinstance(exc, (SamplerError, FloatingPointError)):
        return EXIT_INFERENCE
    return EXIT_INFERENCE


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    command = args.command
    try:
        cfg = resolve_config(command, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    base = cfg.get("out") or cfg.get("cache") or "."
    inputs = [cfg.get("data"), cfg.get("ids"), getattr(args, "config", None)]
    run = Run(command, cfg, Path(base), inputs)
    try:
        summary = COMMANDS[command](cfg, run)
    except Exception as exc:  # noqa: BLE001 - every failure maps to an exit code
        code = _classify(exc)
        kind = "input error" if code == EXIT_INPUT else "inference failure"
        print(f"error ({kind}): {exc}", file=sys.stderr)
        log.debug("%s", traceback.format_exc())
        err = {"error": type(exc).__name__, "kind": kind, "message": str(exc), "exit_code": code}
        run.dir.mkdir(parents=True, exist_ok=True)
        (run.dir / "error.json").write_text(json.dumps(err, indent=2) + "\n")
        run.manifest("failed", code, {"error": err})
        return code
    run.manifest("ok", EXIT_OK, {"summary": summary})
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
