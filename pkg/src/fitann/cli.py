"""Command-line entry points: gen, build, serve, bench, refit.

Every CostParams/BenchConfig field is addressable through the key-value
config file and overridable via FITANN_* environment variables.
"""
from __future__ import annotations

import csv
import json
import os
import time

import click
import numpy as np

from . import io as fio
from .bench import BenchConfig, run_bench
from .costmodel import CostParams
from .filters import to_text
from .optimizer import WorkloadTally
from .serving import IndexCollection
from .bench import fit_collection
from .synth import gen_attributes, gen_gaussian_vectors, gen_workload
from .dataset import AttributedDataset
from .optimizer import refit as refit_selection


def _load_config(config_path: str | None, overrides: dict) -> dict:
    cfg = fio.read_config(config_path) if config_path else {}
    cfg = fio.apply_env_overrides(cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


@click.group()
def main() -> None:
    """Workload-fitted filtered vector search."""


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--n", default=20000, show_default=True)
@click.option("--dim", default=16, show_default=True)
@click.option("--attr-recipe", default="per-rank-probability", show_default=True)
@click.option("--attr-count", default=20, show_default=True)
@click.option("--workload-recipe", default="zipf-conjunctive", show_default=True)
@click.option("--n-queries", default=2000, show_default=True)
@click.option("--zipf-s", default=1.0, show_default=True)
@click.option("--seed", default=0, show_default=True)
def gen(out, n, dim, attr_recipe, attr_count, workload_recipe, n_queries,
        zipf_s, seed) -> None:
    """Emit a synthetic dataset and workload into a directory."""
    os.makedirs(out, exist_ok=True)
    vecs = gen_gaussian_vectors(n, dim, seed)
    attrs = gen_attributes(n, attr_recipe, seed + 1, attr_count=attr_count)
    ds = AttributedDataset(vectors=vecs, attributes=attrs)
    queries, filters = gen_workload(workload_recipe, n_queries, seed + 2, ds,
                                    zipf_s=zipf_s)
    fio.write_fvecs(os.path.join(out, "vectors.fvecs"), vecs)
    fio.write_attributes(os.path.join(out, "attributes.txt"), attrs)
    fio.write_fvecs(os.path.join(out, "queries.fvecs"), queries)
    fio.write_filter_lines(os.path.join(out, "query_filters.txt"), filters)
    tally = WorkloadTally.from_filters(filters)
    fio.write_workload(os.path.join(out, "workload.tsv"), tally.entries)
    click.echo(f"wrote dataset (n={n}, d={dim}) and workload to {out}")


def _cost_params(cfg: dict, base_size: float) -> CostParams:
    return CostParams(
        m_inf=int(cfg.get("m_inf", 16)),
        sef_inf=int(cfg.get("sef_inf", 50)),
        k=int(cfg.get("k", 10)),
        gamma=cfg.get("gamma"),
        cor=float(cfg.get("cor", 0.5)),
        budget_b=float(cfg.get("budget_multiplier", 3.0)) * base_size,
        efc=int(cfg.get("efc", 40)),
    )


@main.command()
@click.option("--vectors", required=True, type=click.Path(exists=True))
@click.option("--attributes", required=True, type=click.Path(exists=True))
@click.option("--workload", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(exists=True))
@click.option("--format", "fmt", default="fvecs", show_default=True)
@click.option("--metric", default="l2", show_default=True)
@click.option("--mode", default="logical", show_default=True)
@click.option("--budget-multiplier", type=float)
@click.option("--m-inf", type=int)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
def build(vectors, attributes, workload, out, config, fmt, metric, mode,
          budget_multiplier, m_inf, seed, workers) -> None:
    """Fit a subindex collection to a workload and write the bundle."""
    cfg = _load_config(config, {"budget_multiplier": budget_multiplier,
                                "m_inf": m_inf, "mode": mode})
    ds = fio.load_dataset(vectors, attributes, metric=metric, fmt=fmt)
    tally = WorkloadTally(fio.read_workload(workload))
    params = _cost_params(cfg, float(int(cfg.get("m_inf", 16)) * ds.n))
    t0 = time.perf_counter()
    coll, sel, _ = fit_collection(ds, tally, params, cfg.get("mode", "logical"),
                                  seed, workers=workers,
                                  max_candidates=cfg.get("max_candidates"))
    coll.save(out)
    click.echo(
        f"built {coll.n_subindexes} graphs (model size {coll.model_size()}) "
        f"in {time.perf_counter() - t0:.1f}s -> {out}"
    )
    for key, unit, cum in sel.steps:
        click.echo(f"  + {key}  unit-benefit={unit:.4f}  cum-size={cum}")


@main.command()
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--vectors", required=True, type=click.Path(exists=True))
@click.option("--attributes", required=True, type=click.Path(exists=True))
@click.option("--queries", required=True, type=click.Path(exists=True))
@click.option("--filters", "filters_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "fmt", default="fvecs", show_default=True)
@click.option("--metric", default="l2", show_default=True)
@click.option("--k", default=10, show_default=True)
@click.option("--sef-inf", default=None, type=int)
def serve(bundle, vectors, attributes, queries, filters_path, out, fmt,
          metric, k, sef_inf) -> None:
    """Serve a query batch against a bundle; write per-query results CSV."""
    ds = fio.load_dataset(vectors, attributes, metric=metric, fmt=fmt)
    coll = IndexCollection.load(bundle, ds)
    Q = fio.read_fvecs(queries)
    filts = fio.read_filter_lines(filters_path)
    if Q.shape[0] != len(filts):
        raise click.ClickException(
            f"{Q.shape[0]} query vectors but {len(filts)} filters")
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["query", "plan", "latency_s", "ids", "distances"])
        for i in range(Q.shape[0]):
            t0 = time.perf_counter()
            result, plan = coll.serve(Q[i], filts[i], k=k, sef_inf=sef_inf,
                                      with_plan=True)
            dt = time.perf_counter() - t0
            writer.writerow([
                i, plan.strategy, f"{dt:.6e}",
                " ".join(map(str, result.ids.tolist())),
                " ".join(f"{d:.6g}" for d in result.distances.tolist()),
            ])
    click.echo(f"served {Q.shape[0]} queries -> {out}")


@main.command()
@click.option("--config", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
def bench(config, out, seed) -> None:
    """Run the QPS-recall sweep described by a config file."""
    cfg_dict = _load_config(config, {"seed": seed})
    cfg = BenchConfig.from_dict(cfg_dict)
    report = run_bench(cfg)
    os.makedirs(out, exist_ok=True)
    report.to_csv(os.path.join(out, "report.csv"))
    report.to_json(os.path.join(out, "report.json"))
    click.echo(f"report written to {out}")
    for row in report.rows:
        click.echo(
            f"  {row['system']:>16s} sef_inf={row['sef_inf']:<4d} "
            f"recall={row['recall']:.3f} qps={row['qps']:.0f}"
        )


@main.command()
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--vectors", required=True, type=click.Path(exists=True))
@click.option("--attributes", required=True, type=click.Path(exists=True))
@click.option("--workload", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--format", "fmt", default="fvecs", show_default=True)
@click.option("--metric", default="l2", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
def refit(bundle, vectors, attributes, workload, out, fmt, metric, seed,
          workers) -> None:
    """Re-solve selection for a new workload; rebuild only the diff."""
    ds = fio.load_dataset(vectors, attributes, metric=metric, fmt=fmt)
    old = IndexCollection.load(bundle, ds)
    tally = WorkloadTally(fio.read_workload(workload))
    from .optimizer import SelectionResult

    old_sel = SelectionResult(
        chosen=list(range(old.n_subindexes)),
        chosen_filters=[e.filter for e in old.entries],
        total_size=old.model_size(), steps=[], final_cost=float("nan"))
    result = refit_selection(old_sel, tally, ds, old.params, mode=old.mode)
    coll = IndexCollection.build(
        ds, [(f, m) for f, m in zip(
            result.selection.chosen_filters,
            [result.dag.nodes[u].m for u in result.selection.chosen])],
        old.params, mode=old.mode, seed=seed, workers=workers)
    coll.save(out)
    click.echo(json.dumps({
        "to_build": [to_text(f) for f in result.to_build],
        "to_delete": [to_text(f) for f in result.to_delete],
    }, indent=2))
    click.echo(f"refit bundle -> {out}")


if __name__ == "__main__":
    main()
