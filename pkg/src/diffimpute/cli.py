"""Command-line surface: synth | mask | train | impute | eval | ablate.

Every command writes its artifacts atomically and drops a manifest
(resolved options, seed, artifact hashes) into the output directory, so a
run can be reproduced from the manifest alone. A JSON config file given via
--config supplies per-command defaults; explicit flags win.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import ablation
from .evaluation import downstream_eval, evaluate_imputation
from .imputer import Checkpoint, TrainConfig, impute, train
from .missingness import MechanismSpec, achieved_rate, gen_mask, load_mask, save_mask
from .output import atomic_path, write_csv_rows, write_manifest, write_text
from .synthetic import SynthConfig, generate_dataset
from .tabular import FeatureSchema, load_table, save_table


def _load_config(ctx, param, value):
    if value is None:
        return None
    with open(value, "r", encoding="utf-8") as fh:
        ctx.default_map = json.load(fh)
    return value


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Global RNG seed.")
@click.option("--out", type=click.Path(file_okay=False), default=".", show_default=True,
              help="Output directory.")
@click.option("--config", type=click.Path(exists=True, dir_okay=False),
              callback=_load_config, expose_value=False, is_eager=True,
              help="JSON file of per-command option defaults.")
@click.pass_context
def main(ctx, seed, out):
    """Two-channel diffusion imputation toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["out"] = Path(out)
    ctx.obj["out"].mkdir(parents=True, exist_ok=True)


def _finish(ctx, command: str, options: dict, artifacts: list) -> None:
    write_manifest(ctx.obj["out"], command, options, ctx.obj["seed"], artifacts)
    for p in artifacts:
        click.echo(f"wrote {p}")


@main.command()
@click.option("--n", type=int, default=10_000, show_default=True)
@click.option("--d-cont", type=int, default=15, show_default=True)
@click.option("--d-cat", type=int, default=15, show_default=True)
@click.option("--noise-cont", type=float, default=0.1, show_default=True)
@click.option("--noise-cat", type=float, default=0.5, show_default=True)
@click.pass_context
def synth(ctx, n, d_cont, d_cat, noise_cont, noise_cat):
    """Generate the controlled mixed-type synthetic dataset."""
    out = ctx.obj["out"]
    config = SynthConfig(n=n, d_cont=d_cont, d_cat=d_cat, noise_cont=noise_cont,
                         noise_cat=noise_cat, seed=ctx.obj["seed"])
    table, coeffs = generate_dataset(config)
    data_path, schema_path, coef_path = out / "data.csv", out / "schema.json", out / "coefficients.npz"
    with atomic_path(data_path) as tmp:
        save_table(table, tmp)
    with atomic_path(schema_path) as tmp:
        table.schema.save(tmp)
    with atomic_path(coef_path) as tmp:
        coeffs.save(tmp)
    _finish(ctx, "synth", {"n": n, "d_cont": d_cont, "d_cat": d_cat,
                           "noise_cont": noise_cont, "noise_cat": noise_cat},
            [data_path, schema_path, coef_path])


def _parse_mar_rule(text: str):
    from .missingness import MarRule
    parts = text.split(":")
    if len(parts) == 2:
        return parts[0], MarRule(driver=parts[1])
    if len(parts) == 3 and parts[2] in ("above-mean", "below-mean"):
        return parts[0], MarRule(driver=parts[1], rule=parts[2])
    if len(parts) == 4 and parts[2] == "percentile":
        return parts[0], MarRule(driver=parts[1], rule="percentile",
                                 percentile=float(parts[3]))
    raise click.UsageError(
        f"cannot parse --mar-rule {text!r}; expected "
        "target:driver[:above-mean|below-mean|percentile:<p>]")


@main.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", "schema_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--mechanism", type=click.Choice(["mcar", "mar", "mnar"]), default="mcar",
              show_default=True)
@click.option("--rate", type=float, default=0.3, show_default=True)
@click.option("--mar-rule", "mar_rules_raw", multiple=True,
              help="target:driver[:above-mean|below-mean|percentile:<p>]; repeatable.")
@click.option("--mar-auto", is_flag=True,
              help="Derive MAR rules automatically (leading columns drive the rest).")
@click.option("--mnar-quantile", type=float, default=0.10, show_default=True)
@click.pass_context
def mask(ctx, data, schema_path, mechanism, rate, mar_rules_raw, mar_auto, mnar_quantile):
    """Generate a missingness mask CSV for a (fully observed) data CSV."""
    if not 0.0 < rate < 1.0:
        raise click.UsageError(f"--rate must lie in (0,1), got {rate}")
    if mechanism == "mar" and not mar_rules_raw and not mar_auto:
        raise click.UsageError("mar needs --mar-rule (repeatable) or --mar-auto")
    schema = FeatureSchema.load(schema_path)
    table = load_table(data, schema)
    rules = dict(_parse_mar_rule(r) for r in mar_rules_raw)
    for name in rules:
        if name not in schema.names:
            raise click.UsageError(f"unknown MAR target column {name!r}")
    spec = MechanismSpec(mechanism=mechanism, rate=rate, seed=ctx.obj["seed"],
                         mar_rules=rules, mnar_quantile=mnar_quantile)
    m = gen_mask(table, spec)
    mask_path = ctx.obj["out"] / "mask.csv"
    with atomic_path(mask_path) as tmp:
        save_mask(m, schema, tmp)
    click.echo(f"achieved rate {achieved_rate(m):.4f}")
    _finish(ctx, "mask", {"data": data, "schema": schema_path, "mechanism": mechanism,
                          "rate": rate, "mar_rules": list(mar_rules_raw),
                          "mar_auto": mar_auto, "mnar_quantile": mnar_quantile},
            [mask_path])


def _load_masked(data, schema_path, mask_path):
    schema = FeatureSchema.load(schema_path)
    table = load_table(data, schema)
    if mask_path is not None:
        extra = load_mask(mask_path, schema)
        table = table.with_mask(extra)
    return table


@main.command(name="train")
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", "schema_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Optional extra missingness applied before training.")
@click.option("--epochs", type=int, default=300, show_default=True)
@click.option("--t", "t_steps", type=int, default=100, show_default=True,
              help="Diffusion steps used during training.")
@click.option("--self-mask-ratio", type=float, default=0.3, show_default=True)
@click.option("--self-mask-scheme", type=click.Choice(["mcar", "mar", "mnar"]),
              default="mcar", show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--batch-size", type=int, default=64, show_default=True)
@click.option("--patience", type=int, default=20, show_default=True)
@click.option("--model-kind", type=click.Choice(["full", "cont_only", "disc_only"]),
              default="full", show_default=True)
@click.option("--fill", type=click.Choice(["zero", "mean"]), default=None,
              help="No-self-mask arm: supervise on missing cells filled by this constant.")
@click.pass_context
def train_cmd(ctx, data, schema_path, mask_path, epochs, t_steps, self_mask_ratio,
              self_mask_scheme, lr, batch_size, patience, model_kind, fill):
    """Train the two-channel imputer; writes checkpoint.ckpt and a loss log."""
    table = _load_masked(data, schema_path, mask_path)
    try:
        config = TrainConfig(T=t_steps, epochs=epochs, patience=patience,
                             self_mask_ratio=self_mask_ratio,
                             self_mask_scheme=self_mask_scheme, learning_rate=lr,
                             batch_size=batch_size, seed=ctx.obj["seed"],
                             model_kind=model_kind, fill_supervision=fill)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    ckpt = train(table, config)
    ckpt_path = ctx.obj["out"] / "checkpoint.ckpt"
    with atomic_path(ckpt_path) as tmp:
        ckpt.save(tmp)
    log_path = ctx.obj["out"] / "loss_log.csv"
    write_csv_rows(log_path, [{"epoch": e, "train_loss": tl, "val_loss": vl}
                              for e, tl, vl in ckpt.history])
    _finish(ctx, "train", {"data": data, "schema": schema_path, "mask": mask_path,
                           "epochs": epochs, "T": t_steps,
                           "self_mask_ratio": self_mask_ratio,
                           "self_mask_scheme": self_mask_scheme, "lr": lr,
                           "batch_size": batch_size, "patience": patience,
                           "model_kind": model_kind, "fill": fill},
            [ckpt_path, log_path])


@main.command(name="impute")
@click.option("--checkpoint", "ckpt_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", "schema_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--eta", type=float, default=0.0, show_default=True)
@click.option("--exchange", type=click.Choice(["pass", "step"]), default="pass",
              show_default=True, help="Cross-channel estimate exchange granularity.")
@click.pass_context
def impute_cmd(ctx, ckpt_path, data, schema_path, mask_path, steps, eta, exchange):
    """Fill the missing cells of a data CSV using a trained checkpoint."""
    ckpt = Checkpoint.load(ckpt_path)
    table = _load_masked(data, schema_path, mask_path)
    if not 1 <= steps <= ckpt.config.T:
        raise click.UsageError(f"--steps must lie in [1, {ckpt.config.T}]")
    if not 0.0 <= eta <= 1.0:
        raise click.UsageError("--eta must lie in [0, 1]")
    completed = impute(ckpt, table, steps=steps, eta=eta, seed=ctx.obj["seed"],
                       exchange=exchange)
    out_path = ctx.obj["out"] / "imputed.csv"
    with atomic_path(out_path) as tmp:
        save_table(completed, tmp)
    _finish(ctx, "impute", {"checkpoint": ckpt_path, "data": data, "schema": schema_path,
                            "mask": mask_path, "steps": steps, "eta": eta,
                            "exchange": exchange}, [out_path])


@main.command(name="eval")
@click.option("--truth", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--imputed", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mask", "mask_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--schema", "schema_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--labels-col", type=str, default=None,
              help="Column treated as the downstream label (withheld from metrics).")
@click.option("--task", type=click.Choice(["classify", "regress"]), default=None)
@click.pass_context
def eval_cmd(ctx, truth, imputed, mask_path, schema_path, labels_col, task):
    """Score an imputed CSV against ground truth over the masked cells."""
    schema = FeatureSchema.load(schema_path)
    truth_table = load_table(truth, schema)
    imputed_table = load_table(imputed, schema)
    eval_mask = load_mask(mask_path, schema)
    if labels_col is not None:
        if task is None:
            raise click.UsageError("--task is required with --labels-col")
        j = schema.names.index(labels_col)
        keep = [i for i in range(schema.d) if i != j]
        eval_mask = eval_mask.copy()
        eval_mask[:, j] = False

    report = evaluate_imputation(truth_table, imputed_table, eval_mask)
    if labels_col is not None:
        features = imputed_table.values[:, keep]
        labels = truth_table.values[:, j]
        report.downstream = downstream_eval(features, labels, task, seed=ctx.obj["seed"])
        report.downstream_kind = "f1_macro" if task == "classify" else "mae"

    json_path = ctx.obj["out"] / "report.json"
    csv_path = ctx.obj["out"] / "report.csv"
    write_text(json_path, report.to_json() + "\n")
    write_csv_rows(csv_path, [report.csv_row()])
    click.echo(f"AvgErr {report.avg_err:.4f}")
    _finish(ctx, "eval", {"truth": truth, "imputed": imputed, "mask": mask_path,
                          "schema": schema_path, "labels_col": labels_col, "task": task},
            [json_path, csv_path])


@main.command(name="ablate")
@click.option("--study", required=True,
              type=click.Choice(["two-channel", "self-mask", "eta-steps"]))
@click.option("--n", type=int, default=1000, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--rate", type=float, default=None,
              help="Missing rate (defaults: 0.3 two-channel, 0.5 otherwise).")
@click.option("--lr", type=float, default=1e-3, show_default=True)
@click.option("--steps", type=int, default=20, show_default=True)
@click.option("--mechanisms", type=str, default="mcar,mar,mnar", show_default=True)
@click.option("--ratios", type=str, default="0.1,0.3,0.5", show_default=True)
@click.option("--etas", type=str, default="0,0.5,1", show_default=True)
@click.option("--steps-grid", type=str, default="25,100", show_default=True)
@click.option("--runs", type=int, default=3, show_default=True,
              help="Sampling repetitions per eta-steps cell.")
@click.pass_context
def ablate_cmd(ctx, study, n, epochs, rate, lr, steps, mechanisms, ratios, etas,
               steps_grid, runs):
    """Reproduce one of the ablation grids at desk scale."""
    seed = ctx.obj["seed"]
    out = ctx.obj["out"]
    mech_list = [m.strip() for m in mechanisms.split(",") if m.strip()]
    if study == "two-channel":
        rows = ablation.run_two_channel(n, epochs, rate or 0.3, mech_list, seed, lr, steps)
        plot = ablation.plot_two_channel
    elif study == "self-mask":
        ratio_list = [float(r) for r in ratios.split(",") if r.strip()]
        rows = ablation.run_self_mask(n, epochs, rate or 0.5, mech_list, ratio_list,
                                      seed, lr, steps)
        plot = ablation.plot_self_mask
    else:
        eta_list = [float(e) for e in etas.split(",") if e.strip()]
        steps_list = [int(s) for s in steps_grid.split(",") if s.strip()]
        rows = ablation.run_eta_steps(n, epochs, rate or 0.5, eta_list, steps_list,
                                      runs, seed, lr)
        plot = ablation.plot_eta_steps

    csv_path = out / f"ablation_{study}.csv"
    png_path = out / f"ablation_{study}.png"
    write_csv_rows(csv_path, rows)
    with atomic_path(png_path) as tmp:
        plot(rows, tmp)
    _finish(ctx, f"ablate_{study}",
            {"study": study, "n": n, "epochs": epochs, "rate": rate, "lr": lr,
             "steps": steps, "mechanisms": mechanisms, "ratios": ratios, "etas": etas,
             "steps_grid": steps_grid, "runs": runs}, [csv_path, png_path])


def cli_entry():
    """Entry point mapping errors to exit codes: usage 2, runtime 1."""
    try:
        main(standalone_mode=False)
    except click.exceptions.Exit as exc:
        sys.exit(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        sys.exit(2)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except Exception as exc:  # runtime failure -> exit 1
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    cli_entry()
