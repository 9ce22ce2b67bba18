"""Command-line interface: run experiments, materialize partitions, join
metrics across configs, and run the verification suite."""

import json
import os
import sys

import click

from fedecado.harness import ConfigError, ExperimentConfig, metrics_to_csv, run_experiment
from fedecado.objectives import load_csv_dataset, make_blobs
from fedecado.partition import dirichlet_partition, iid_partition


@click.group()
def main():
    """Federated learning simulator with a continuous-time consensus core."""


def _load_config(path, seed=None, out=None, algo=None):
    cfg = ExperimentConfig.from_file(path)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out_dir = out
    if algo is not None:
        cfg.algo = algo
    cfg.validate()
    return cfg


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", type=click.Path(), default=None, help="Override the output directory.")
@click.option("--algo", type=str, default=None, help="Override the algorithm.")
def run(config_path, seed, out, algo):
    """Run one experiment; exit 0 on convergence, 2 on exhausting the round
    budget, 1 on error or divergence."""
    try:
        cfg = _load_config(config_path, seed, out, algo)
        result = run_experiment(cfg)
    except (ConfigError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    last = result.metrics_rows[-1] if result.metrics_rows else {}
    click.echo(f"{cfg.name}: {result.status} after {result.rounds_run} rounds "
               f"(loss={last.get('global_loss', float('nan')):.6g})")
    sys.exit(result.exit_code)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def partition(config_path, out_path):
    """Materialize the config's data partition as JSON."""
    try:
        cfg = _load_config(config_path)
        spec = cfg.objective
        if spec["kind"] == "quadratic":
            raise ConfigError("quadratic objectives have no sample partition")
        if spec.get("csv"):
            dataset = load_csv_dataset(spec["csv"])
        else:
            dataset = make_blobs(int(spec.get("n_samples", 2000)),
                                 int(spec.get("n_features", 5)),
                                 int(spec.get("n_classes", 10)), seed=cfg.seed)
        if cfg.partition.get("scheme", "iid") == "dirichlet":
            part = dirichlet_partition(dataset.labels, cfg.n_clients,
                                       float(cfg.partition.get("alpha", 0.5)), cfg.seed)
        else:
            part = iid_partition(len(dataset), cfg.n_clients, cfg.seed)
    except (ConfigError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(part.to_json())
    click.echo(f"wrote {out_path} ({part.n_clients} clients)")


@main.command()
@click.option("--configs", required=True, multiple=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def compare(configs, out_path):
    """Run several configs and emit one joined metrics CSV with a leading
    `config` column."""
    rows_out = []
    for path in configs:
        try:
            cfg = _load_config(path)
            result = run_experiment(cfg)
        except (ConfigError, OSError) as exc:
            click.echo(f"error in {path}: {exc}", err=True)
            sys.exit(1)
        name = cfg.name or os.path.splitext(os.path.basename(path))[0]
        for row in result.metrics_rows:
            rows_out.append((name, row))
        click.echo(f"{name}: {result.status} after {result.rounds_run} rounds")
    body = metrics_to_csv([r for _, r in rows_out]).splitlines()
    header = "config," + body[0]
    lines = [header] + [f"{name},{line}" for (name, _), line in zip(rows_out, body[1:])]
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    click.echo(f"wrote {out_path} ({len(rows_out)} rows)")


@main.command()
def verify():
    """Run the oracle verification suite; TAP-style output."""
    from fedecado.oracles import run_verification
    results = run_verification()
    click.echo(f"1..{len(results)}")
    failed = 0
    for idx, (name, ok, detail) in enumerate(results, start=1):
        mark = "ok" if ok else "not ok"
        failed += 0 if ok else 1
        click.echo(f"{mark} {idx} - {name}: {detail}")
    sys.exit(0 if failed == 0 else 1)


if __name__ == "__main__":
    main()
