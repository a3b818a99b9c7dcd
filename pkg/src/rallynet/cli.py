"""Command-line interface for the full pipeline.

Subcommands: ingest, index, synth, train {rallynet|bc|hbc}, rollout,
evaluate, report, case-study. Global flags --seed, --config (YAML document
mirroring the model/synth/eval settings), and --mode {init_only,two_step}.
"""

from __future__ import annotations

import json
import sys

import click
import numpy as np
import yaml

from . import data as data_mod
from .data import Dataset, load_jsonl, normalize_coordinates, save_jsonl, split_dataset
from .engine import rollout_rally
from .experience import DEFAULT_CAP, ExperienceIndex, build_index


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        cfg = yaml.safe_load(f) or {}
    if not isinstance(cfg, dict):
        raise click.ClickException("config file must contain a mapping")
    return cfg


def _model_config(ctx_obj: dict, **overrides):
    from .model.config import ModelConfig

    merged = dict(ctx_obj.get("config", {}).get("model", {}))
    merged.setdefault("seed", ctx_obj["seed"])
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig.from_dict({**ModelConfig().to_dict(), **merged})


def load_any_checkpoint(path):
    """Load a rallynet/bc/hbc checkpoint by its kind tag."""
    import torch

    obj = torch.load(path, weights_only=False)
    kind = obj.get("kind")
    if kind == "rallynet":
        from .model.policy import RallyNetPolicy

        return kind, RallyNetPolicy.load(path)
    if kind in ("bc", "hbc"):
        from .agents.hbc import HBCPolicy

        return kind, HBCPolicy.load(path)
    raise click.ClickException(f"unknown checkpoint kind {kind!r} in {path}")


def _agent_pair(kind, policy, index, emit_mode):
    if kind == "rallynet":
        from .model.policy import make_agents

        return lambda rally: make_agents(policy, index, mode=emit_mode)
    from .agents.hbc import CloneAgent

    return lambda rally: (CloneAgent(policy, emit_mode), CloneAgent(policy, emit_mode))


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Global random seed.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML settings document.")
@click.option("--mode", type=click.Choice(["init_only", "two_step"]), default="init_only",
              show_default=True, help="Rally recovery mode for rollouts/evaluation.")
@click.pass_context
def main(ctx, seed, config_path, mode):
    """Turn-based rally imitation: data, training, simulation, evaluation."""
    ctx.obj = {"seed": seed, "mode": mode, "config": _load_config(config_path)}


@main.command()
@click.argument("csv_path", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output dataset (JSONL).")
@click.option("--court", nargs=4, type=float, default=None,
              help="Raw court extent: x_min x_max y_min y_max.")
@click.pass_obj
def ingest(obj, csv_path, out, court):
    """Convert a stroke-level CSV into the normalized JSONL dataset format."""
    court_dict = None
    if court:
        court_dict = {"x": (court[0], court[1]), "y": (court[2], court[3])}
    elif "court" in obj["config"]:
        c = obj["config"]["court"]
        court_dict = {"x": tuple(c["x"]), "y": tuple(c["y"])}
    ds = data_mod.ingest_csv(csv_path, court=court_dict)
    ds = normalize_coordinates(ds)
    ds.validate()
    save_jsonl(ds, out)
    click.echo(f"wrote {len(ds.rallies)} rallies ({len(ds.players)} players) to {out}")


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Output dataset (JSONL).")
@click.option("--n-rallies", type=int, default=None)
@click.option("--mean-length", type=float, default=None)
@click.option("--win-rate", type=float, default=None)
@click.pass_obj
def synth(obj, out, n_rallies, mean_length, win_rate):
    """Generate a scripted-expert synthetic dataset through the rally engine."""
    from .synth import SyntheticConfig, generate_synthetic_dataset

    params = dict(obj["config"].get("synth", {}))
    if n_rallies is not None:
        params["n_rallies"] = n_rallies
    if mean_length is not None:
        params["mean_length"] = mean_length
    if win_rate is not None:
        params["win_rate_starter"] = win_rate
    ds = generate_synthetic_dataset(SyntheticConfig(**params), seed=obj["seed"])
    save_jsonl(ds, out)
    click.echo(f"wrote {len(ds.rallies)} synthetic rallies to {out}")


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Output index (JSON).")
@click.option("--cap", type=int, default=DEFAULT_CAP, show_default=True)
@click.pass_obj
def index(obj, dataset, out, cap):
    """Build the grid-keyed experience index from a dataset."""
    ds = load_jsonl(dataset)
    idx = build_index(ds, cap=cap)
    idx.save(out)
    click.echo(f"indexed {len(idx.keys)} strokes (hash {idx.dataset_hash[:12]}) to {out}")


@main.group()
def train():
    """Train a policy checkpoint."""


def _split_train(ds: Dataset, obj) -> Dataset:
    ratio = obj["config"].get("eval", {}).get("train_ratio", 0.8)
    tr, _ = split_dataset(ds, ratio)
    return tr


@train.command("rallynet")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(), help="Checkpoint file.")
@click.option("--index", "index_path", type=click.Path(exists=True), default=None,
              help="Prebuilt experience index; built from the train split otherwise.")
@click.option("--loss-log", type=click.Path(), default=None, help="JSON-lines loss log.")
@click.option("--epochs", type=int, default=None)
@click.option("--full-data/--train-split", default=False,
              help="Train on the whole dataset instead of the leading split.")
@click.pass_obj
def train_rallynet(obj, dataset, out, index_path, loss_log, epochs, full_data):
    """Train the context-conditioned latent-SDE policy."""
    from .model.policy import RallyNetPolicy

    ds = load_jsonl(dataset)
    train_ds = ds if full_data else _split_train(ds, obj)
    idx = ExperienceIndex.load(index_path) if index_path else build_index(train_ds)
    cfg = _model_config(obj, epochs=epochs, n_players=len(ds.players))
    policy = RallyNetPolicy(cfg, sorted(ds.players))
    log = policy.fit(train_ds, idx, log_path=loss_log, progress=True)
    policy.save(out, dataset_hash=train_ds.content_hash())
    click.echo(f"final loss {log[-1]['total']:.4f}; checkpoint written to {out}")


def _train_clone(obj, dataset, out, loss_log, epochs, full_data, n_options):
    from .agents.hbc import BCPolicy, HBCPolicy

    ds = load_jsonl(dataset)
    train_ds = ds if full_data else _split_train(ds, obj)
    cfg = _model_config(obj, epochs=epochs, n_players=len(ds.players))
    if n_options == 1:
        policy = BCPolicy(cfg, sorted(ds.players))
    else:
        policy = HBCPolicy(cfg, sorted(ds.players), n_options=n_options)
    log = policy.fit(train_ds, log_path=loss_log, progress=True)
    policy.save(out, dataset_hash=train_ds.content_hash())
    click.echo(f"final loss {log[-1]['loss']:.4f}; checkpoint written to {out}")


@train.command("bc")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--loss-log", type=click.Path(), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--full-data/--train-split", default=False)
@click.pass_obj
def train_bc(obj, dataset, out, loss_log, epochs, full_data):
    """Train the flat behavior-cloning baseline."""
    _train_clone(obj, dataset, out, loss_log, epochs, full_data, n_options=1)


@train.command("hbc")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--loss-log", type=click.Path(), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--n-options", type=int, default=4, show_default=True)
@click.option("--full-data/--train-split", default=False)
@click.pass_obj
def train_hbc(obj, dataset, out, loss_log, epochs, full_data, n_options):
    """Train the option-hierarchical behavior-cloning baseline."""
    _train_clone(obj, dataset, out, loss_log, epochs, full_data, n_options=n_options)


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.option("--data", "data_path", required=True, type=click.Path(exists=True),
              help="Dataset supplying initial states (its test split is used).")
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--out", required=True, type=click.Path(), help="Generated rallies (JSONL).")
@click.option("--n", "n_rallies", type=int, default=None,
              help="Number of rallies (default: one per test rally).")
@click.option("--emit", type=click.Choice(["sample", "mode"]), default="sample",
              show_default=True)
@click.pass_obj
def rollout(obj, checkpoint, data_path, index_path, out, n_rallies, emit):
    """Simulate rallies with a trained policy and save them as a dataset."""
    from .evaluation import rally_initial_conditions

    ds = load_jsonl(data_path)
    train_ds, test_ds = split_dataset(ds, obj["config"].get("eval", {}).get("train_ratio", 0.8))
    kind, policy = load_any_checkpoint(checkpoint)
    idx = ExperienceIndex.load(index_path) if index_path else build_index(train_ds)
    factory = _agent_pair(kind, policy, idx, emit)
    rng = np.random.default_rng(obj["seed"])
    sources = [r for r in test_ds.rallies if r.strokes]
    total = n_rallies if n_rallies is not None else len(sources)
    rallies = []
    for i in range(total):
        src = sources[i % len(sources)]
        init, init_b_pos = rally_initial_conditions(src)
        forced = [a for _, _, a in src.strokes[:2]] if obj["mode"] == "two_step" else None
        agent_a, agent_b = factory(src)
        trace = rollout_rally(
            agent_a, agent_b, init,
            seed=int(rng.integers(2**63 - 1)),
            rally_id=f"gen-{i:05d}",
            player_a=src.starter, player_b=src.second,
            forced_actions=forced, init_b_pos=init_b_pos,
        )
        trace.rally.source = "generated"
        rallies.append(trace.rally)
    gen = Dataset(rallies=rallies, players=list(ds.players), court=dict(ds.court))
    save_jsonl(gen, out)
    lens = [len(r.strokes) for r in rallies]
    click.echo(f"wrote {len(rallies)} rallies (mean length {np.mean(lens):.2f}) to {out}")


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True),
              help="Full dataset; split into train (anchors/index) and test.")
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--agent", "agent_name", type=click.Choice(["random", "rule"]), default=None)
@click.option("--predictions", type=click.Path(exists=True), default=None,
              help="Score pre-generated rallies from an external model.")
@click.option("--index", "index_path", type=click.Path(exists=True), default=None)
@click.option("--seeds", type=str, default="0,1,2,3,4", show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Report JSON file.")
@click.option("--emit", type=click.Choice(["sample", "mode"]), default="sample",
              show_default=True)
@click.pass_obj
def evaluate(obj, data_path, checkpoint, agent_name, predictions, index_path, seeds, out, emit):
    """Score an agent (or external predictions) against the test rallies."""
    from .agents import RandomAgent, RuleAgent
    from .evaluation import (
        build_report,
        evaluate_agent,
        evaluate_predictions,
        render_report,
    )

    if sum(x is not None for x in (checkpoint, agent_name, predictions)) != 1:
        raise click.ClickException(
            "give exactly one of --checkpoint, --agent, --predictions"
        )
    ds = load_jsonl(data_path)
    train_ds, test_ds = split_dataset(ds, obj["config"].get("eval", {}).get("train_ratio", 0.8))
    idx = ExperienceIndex.load(index_path) if index_path else build_index(train_ds)
    seed_list = [int(s) for s in seeds.split(",") if s != ""]
    mode = obj["mode"]

    random_raw = evaluate_agent(
        lambda r: (RandomAgent(), RandomAgent()), test_ds, mode, seed_list, name="random"
    )
    rule_agent = RuleAgent(idx)
    rule_raw = evaluate_agent(
        lambda r: (rule_agent, rule_agent), test_ds, mode, seed_list, name="rule"
    )

    if predictions is not None:
        subject = evaluate_predictions(load_jsonl(predictions), test_ds)
    elif agent_name == "random":
        subject = random_raw
    elif agent_name == "rule":
        subject = rule_raw
    else:
        kind, policy = load_any_checkpoint(checkpoint)
        factory = _agent_pair(kind, policy, idx, emit)
        subject = evaluate_agent(factory, test_ds, mode, seed_list, name=kind)

    report = build_report(subject, random_raw, rule_raw, test_ds)
    if out:
        with open(out, "w") as f:
            f.write(report.to_json())
        click.echo(f"report written to {out}")
    click.echo(render_report(report))


@main.command("report")
@click.argument("report_json", type=click.Path(exists=True))
def report_cmd(report_json):
    """Render a saved evaluation report as a table."""
    from .evaluation import MetricReport, render_report

    with open(report_json) as f:
        obj = json.load(f)
    click.echo(render_report(MetricReport(**obj)))


@main.command("case-study")
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--shot", type=int, required=True, help="Shot type id to filter on.")
@click.option("--cell", nargs=2, type=int, default=None,
              help="Optional shuttle grid cell (x y).")
@click.option("--out-prefix", type=str, default=None,
              help="Write density plots with this path prefix.")
def case_study(data_path, shot, cell, out_prefix):
    """Extract landing/move distributions for strokes matching a filter."""
    from .evaluation import case_study_distributions

    ds = load_jsonl(data_path)
    landings, moves, files = case_study_distributions(
        ds, shot, shuttle_cell=tuple(cell) if cell else None, out_prefix=out_prefix
    )
    click.echo(f"matched {len(landings)} strokes")
    for f in files:
        click.echo(f"plot: {f}")


if __name__ == "__main__":
    sys.exit(main())
