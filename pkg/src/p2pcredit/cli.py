"""Command-line entry point: ``p2pcredit <subcommand> --config run.yaml ...``.

Every flag mirrors a configuration key and overrides it; ``--set key=value``
reaches any key not covered by a dedicated flag.
"""

from __future__ import annotations

import functools
import os
import sys

import click
import yaml

from p2pcredit.exceptions import DataError, StageError, TrainingDivergedError
from p2pcredit.ingest import ParseSummary, parse_accepted, parse_rejected
from p2pcredit.pipeline import (
    RunConfig,
    export_network_weights,
    predict,
    run_cohort_suite,
    run_phase1,
    run_phase2,
    stats_report,
)
from p2pcredit.synthetic import SyntheticConfig, generate_synthetic

# flag name -> dotted config key
FLAG_KEYS = {
    "seed": "seed",
    "out": "out_dir",
    "accepted": "data.accepted",
    "rejected": "data.rejected",
    "cutoff": "cutoff",
    "n_jobs": "n_jobs",
    "cohort": "cohort.token",
    "scope": "cohort.scope",
}
PHASE_FLAG_KEYS = {
    "family": "family",
    "objective": "objective",
    "train_fraction": "train_fraction",
}


def _parse_set(values) -> dict:
    out = {}
    for item in values:
        if "=" not in item:
            raise click.BadParameter(f"expected key=value, got {item!r}", param_hint="--set")
        key, raw = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(raw)
    return out


def load_config(config_path, flags: dict, phases=("phase1", "phase2")) -> RunConfig:
    overrides = {}
    for name, key in FLAG_KEYS.items():
        if flags.get(name) is not None:
            overrides[key] = flags[name]
    for name, key in PHASE_FLAG_KEYS.items():
        if flags.get(name) is not None:
            for phase in phases:
                overrides[f"{phase}.{key}"] = flags[name]
    overrides.update(_parse_set(flags.get("set_values") or ()))
    if config_path:
        return RunConfig.from_file(config_path, overrides)
    return RunConfig.from_dict({}).with_overrides(overrides)


def _fail(message: str, code: int = 2):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def guarded(func):
    """Turn library errors into a stage-named message and a nonzero exit."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except StageError as exc:
            _fail(str(exc))
        except TrainingDivergedError as exc:
            _fail(f"[train] {exc}")
        except (DataError, FileNotFoundError) as exc:
            _fail(f"[{func.__name__.replace('_cmd', '').replace('_', '-')}] {exc}")

    return wrapper


def common_options(func):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="Run configuration (YAML)."),
        click.option("--seed", type=int, help="Overrides seed."),
        click.option("--out", type=click.Path(file_okay=False), help="Overrides out_dir."),
        click.option("--accepted", type=click.Path(), help="Overrides data.accepted."),
        click.option("--rejected", type=click.Path(), help="Overrides data.rejected."),
        click.option("--cutoff", help="Overrides cutoff (YYYY-MM); later rows are excluded."),
        click.option("--n-jobs", type=int, help="Overrides n_jobs (parallel grid cells)."),
        click.option("--set", "set_values", multiple=True, metavar="KEY=VALUE",
                     help="Override any config key, e.g. phase2.train.learning_rate=0.05."),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


def model_options(func):
    opts = [
        click.option("--family", type=click.Choice(["logistic", "svm", "mlp-linear", "mlp-deep"]),
                     help="Overrides phaseN.family."),
        click.option("--objective", type=click.Choice(["recall_macro", "auc"]),
                     help="Overrides phaseN.objective."),
        click.option("--train-fraction", type=float, help="Overrides phaseN.train_fraction."),
        click.option("--cohort", help="Overrides cohort.token (a purpose token)."),
        click.option("--scope", type=click.Choice(["train_and_test", "test_only"]),
                     help="Overrides cohort.scope."),
    ]
    for opt in reversed(opts):
        func = opt(func)
    return func


@click.group()
@click.version_option(package_name="p2pcredit")
def main():
    """Two-phase P2P lending models: acceptance (phase 1) and default (phase 2)."""


@main.command("synth")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="YAML file; its 'synthetic' section configures the generator.")
@click.option("--seed", type=int, default=None, help="Generator seed (default: config seed or 0).")
@click.option("--out", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--set", "set_values", multiple=True, metavar="KEY=VALUE",
              help="Override a generator key, e.g. n_accepted=5000.")
@guarded
def synth_cmd(config_path, seed, out, set_values):
    """Write a synthetic accepted/rejected CSV pair plus ground_truth.json."""
    doc = {}
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
    section = dict(doc.get("synthetic") or {})
    section.update(_parse_set(set_values))
    seed = seed if seed is not None else int(doc.get("seed", 0))
    try:
        cfg = SyntheticConfig.from_dict(section)
    except (DataError, TypeError) as exc:
        raise StageError("synth", exc) from exc
    data = generate_synthetic(cfg, seed, out)
    click.echo(data.accepted_path)
    click.echo(data.rejected_path)
    click.echo(data.truth_path)


@main.command("ingest-check")
@common_options
@guarded
def ingest_check_cmd(config_path, **flags):
    """Parse both CSVs and print the row accounting without building anything."""
    cfg = load_config(config_path, flags)
    texts = []
    for key, parser, schema in (("accepted", parse_accepted, cfg.accepted_schema),
                                ("rejected", parse_rejected, cfg.rejected_schema)):
        path = cfg["data"].get(key)
        if not path:
            continue
        summary = ParseSummary()
        try:
            for _ in parser(path, schema, summary):
                pass
        except (DataError, FileNotFoundError) as exc:
            raise StageError("ingest", exc) from exc
        texts.append(summary.to_text())
    if not texts:
        raise StageError("ingest", "no input files configured (data.accepted / data.rejected)")
    text = "\n".join(texts)
    os.makedirs(cfg["out_dir"], exist_ok=True)
    with open(os.path.join(cfg["out_dir"], "parse_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    click.echo(text, nl=False)


@main.command("stats")
@common_options
@guarded
def stats_cmd(config_path, **flags):
    """Monthly default and rejection series with trailing 6-month windows."""
    cfg = load_config(config_path, flags)
    doc = stats_report(cfg)
    advisory = doc["cutoff_advisory"]
    click.echo(f"months: {doc['first_month']} .. {doc['last_month']} ({doc['months']})")
    click.echo(f"cutoff advisory: {advisory['cutoff'] if advisory else 'none'}")


def _echo_report(rep):
    test = rep["reports"]["test"]
    click.echo(f"model: {rep['model_id']}  state: {rep['preprocess_state_id']}")
    click.echo(f"best params: {rep['best_params']}")
    click.echo(
        f"test auc={test['auc']:.4f} recall0={test['recall_class0']:.4f} "
        f"recall1={test['recall_class1']:.4f} macro={test['recall_macro']:.4f}"
    )


@main.command("phase1")
@common_options
@model_options
@guarded
def phase1_cmd(config_path, **flags):
    """Train and evaluate the acceptance model."""
    cfg = load_config(config_path, flags, phases=("phase1",))
    _echo_report(run_phase1(cfg))


@main.command("phase2")
@common_options
@model_options
@guarded
def phase2_cmd(config_path, **flags):
    """Train and evaluate the default model on accepted loans."""
    cfg = load_config(config_path, flags, phases=("phase2",))
    _echo_report(run_phase2(cfg))


@main.command("cohort")
@common_options
@click.option("--cohort", help="Overrides cohort.token (a purpose token).")
@guarded
def cohort_cmd(config_path, **flags):
    """Both phases, trained on the cohort only and on all rows, tested on the cohort."""
    cfg = load_config(config_path, flags)
    summary = run_cohort_suite(cfg)
    for cell in summary["cells"]:
        click.echo(
            f"phase{cell['phase']} {cell['scope']:<15} share={cell['cohort_share']:.4f} "
            f"auc={cell['test_auc']:.4f} macro={cell['test_recall_macro']:.4f}"
        )


@main.command("predict")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--input", "input_path", type=click.Path(), required=True)
@click.option("--output", "output_path", type=click.Path(dir_okay=False), required=True)
@click.option("--state", "state_path", type=click.Path(exists=True, dir_okay=False),
              help="Preprocess state (default: the file named in the model).")
@click.option("--source", type=click.Choice(["accepted", "rejected"]), default="accepted",
              show_default=True, help="Which CSV schema the input follows.")
@guarded
def predict_cmd(model_path, input_path, output_path, state_path, source):
    """Append score and predicted_class columns to a CSV."""
    n = predict(model_path, input_path, output_path, state_path=state_path, source=source)
    click.echo(f"scored {n} rows -> {output_path}")


@main.command("export-weights")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_prefix", required=True,
              help="Output prefix; writes <prefix>_nodes.csv and <prefix>_edges.csv.")
@guarded
def export_weights_cmd(model_path, out_prefix):
    """Node and edge lists of a trained network."""
    for path in export_network_weights(model_path, out_prefix):
        click.echo(path)


if __name__ == "__main__":
    main()
