"""Ablation grids: two-channel architecture, self-masking, and eta/steps sweeps.

Each study trains desk-scale models on the synthetic generator and emits one
row per grid cell; the CLI turns the rows into CSV tables and plots.
"""

from __future__ import annotations

import numpy as np

from .evaluation import evaluate_imputation, timing_bench
from .imputer import TrainConfig, impute, train
from .missingness import MechanismSpec, gen_mask
from .synthetic import SynthConfig, generate_dataset


def _masked_synthetic(n: int, mechanism: str, rate: float, seed: int):
    table, _ = generate_dataset(SynthConfig(n=n, seed=seed))
    spec = MechanismSpec(mechanism=mechanism, rate=rate, seed=seed + 1)
    mask = gen_mask(table, spec)
    return table, mask, table.with_mask(mask)


def _train_eval(table, mask, masked, config: TrainConfig, steps: int, seed: int,
                eta: float = 0.0):
    ckpt = train(masked, config)
    out = impute(ckpt, masked, steps=steps, eta=eta, seed=seed)
    return ckpt, evaluate_imputation(table, out, mask)


def run_two_channel(n: int, epochs: int, rate: float, mechanisms: list[str],
                    seed: int, learning_rate: float, steps: int) -> list[dict]:
    """Full vs continuous-only vs discrete-only, one row per (model, mechanism)."""
    rows = []
    for mechanism in mechanisms:
        table, mask, masked = _masked_synthetic(n, mechanism, rate, seed)
        for kind in ("full", "cont_only", "disc_only"):
            config = TrainConfig(epochs=epochs, patience=epochs, seed=seed,
                                 learning_rate=learning_rate, model_kind=kind)
            _, report = _train_eval(table, mask, masked, config, steps, seed)
            rows.append({
                "model": kind, "mechanism": mechanism, "rate": rate,
                "avg_err": round(report.avg_err, 6),
                "rmse_mean": round(report.rmse_mean, 6) if report.rmse_mean is not None else "",
                "cat_err_mean": (round(report.cat_err_mean, 6)
                                 if report.cat_err_mean is not None else ""),
            })
    return rows


def run_self_mask(n: int, epochs: int, rate: float, mechanisms: list[str],
                  ratios: list[float], seed: int, learning_rate: float,
                  steps: int) -> list[dict]:
    """No-self-mask fill arms plus scheme x ratio grid, per evaluation mechanism."""
    rows = []
    for mechanism in mechanisms:
        table, mask, masked = _masked_synthetic(n, mechanism, rate, seed)

        def add(strategy, ratio_label, config):
            _, report = _train_eval(table, mask, masked, config, steps, seed)
            rows.append({"strategy": strategy, "ratio": ratio_label,
                         "mechanism": mechanism, "rate": rate,
                         "avg_err": round(report.avg_err, 6)})

        for fill in ("zero", "mean"):
            add("no-self-mask", f"{fill}-imp",
                TrainConfig(epochs=epochs, patience=epochs, seed=seed,
                            learning_rate=learning_rate, self_mask_ratio=0.0,
                            fill_supervision=fill))
        for scheme in ("mcar", "mar", "mnar"):
            for ratio in ratios:
                add(f"{scheme}-self-mask", f"{ratio:g}",
                    TrainConfig(epochs=epochs, patience=epochs, seed=seed,
                                learning_rate=learning_rate, self_mask_ratio=ratio,
                                self_mask_scheme=scheme))
    return rows


def run_eta_steps(n: int, epochs: int, rate: float, etas: list[float],
                  steps_list: list[int], n_runs: int, seed: int,
                  learning_rate: float) -> list[dict]:
    """One trained model sampled under every (eta, steps) cell.

    Across-run scatter varies only the injected reverse noise (the initial
    state stays fixed), so eta = 0 rows report exactly zero spread.
    """
    table, mask, masked = _masked_synthetic(n, "mcar", rate, seed)
    config = TrainConfig(epochs=epochs, patience=epochs, seed=seed,
                         learning_rate=learning_rate)
    ckpt = train(masked, config)
    cont_cols = table.schema.cont_idx

    rows = []
    for eta in etas:
        for steps in steps_list:
            runs = [impute(ckpt, masked, steps=steps, eta=eta, seed=seed,
                           noise_seed=seed + 1000 + r) for r in range(n_runs)]
            reports = [evaluate_imputation(table, out, mask) for out in runs]
            stack = np.stack([out.values[:, cont_cols][mask[:, cont_cols]]
                              for out in runs]) if len(cont_cols) else np.zeros((n_runs, 0))
            spread = float(stack.std(axis=0).mean()) if stack.shape[1] else 0.0
            seconds = timing_bench(
                lambda: impute(ckpt, masked, steps=steps, eta=eta, seed=seed),
                repetitions=1)
            rows.append({
                "eta": eta, "steps": steps,
                "avg_err": round(float(np.mean([r.avg_err for r in reports])), 6),
                "rmse_mean": round(float(np.mean([r.rmse_mean for r in reports])), 6),
                "run_std": round(spread, 8),
                "seconds": round(seconds, 4),
            })
    return rows


def plot_two_channel(rows: list[dict], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mechanisms = sorted({r["mechanism"] for r in rows})
    kinds = ("full", "cont_only", "disc_only")
    width = 0.25
    fig, ax = plt.subplots(figsize=(7, 4))
    xs = np.arange(len(mechanisms))
    for i, kind in enumerate(kinds):
        vals = [next(r["avg_err"] for r in rows
                     if r["model"] == kind and r["mechanism"] == m) for m in mechanisms]
        ax.bar(xs + (i - 1) * width, vals, width, label=kind)
    ax.set_xticks(xs, mechanisms)
    ax.set_ylabel("AvgErr")
    ax.set_title("Two-channel ablation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)


def plot_self_mask(rows: list[dict], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    mechanisms = sorted({r["mechanism"] for r in rows})
    fig, axes = plt.subplots(1, len(mechanisms), figsize=(4 * len(mechanisms), 4),
                             squeeze=False)
    for ax, mech in zip(axes[0], mechanisms):
        sub = [r for r in rows if r["mechanism"] == mech]
        for scheme in ("mcar", "mar", "mnar"):
            pts = [(float(r["ratio"]), r["avg_err"]) for r in sub
                   if r["strategy"] == f"{scheme}-self-mask"]
            if pts:
                pts.sort()
                ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=scheme)
        for r in sub:
            if r["strategy"] == "no-self-mask":
                ax.axhline(r["avg_err"], linestyle="--", alpha=0.6)
                ax.annotate(r["ratio"], (0.02, r["avg_err"]), fontsize=8)
        ax.set_title(f"eval mask: {mech}")
        ax.set_xlabel("self-mask ratio")
        ax.set_ylabel("AvgErr")
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)


def plot_eta_steps(rows: list[dict], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps_list = sorted({r["steps"] for r in rows})
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    for steps in steps_list:
        sub = sorted((r for r in rows if r["steps"] == steps), key=lambda r: r["eta"])
        ax1.errorbar([r["eta"] for r in sub], [r["rmse_mean"] for r in sub],
                     yerr=[r["run_std"] for r in sub], marker="o", capsize=3,
                     label=f"steps={steps}")
        ax2.plot([r["eta"] for r in sub], [r["seconds"] for r in sub], marker="s",
                 label=f"steps={steps}")
    ax1.set_xlabel("eta")
    ax1.set_ylabel("RMSE (z-units)")
    ax1.set_title("Stochasticity sweep")
    ax1.legend()
    ax2.set_xlabel("eta")
    ax2.set_ylabel("sampling seconds")
    ax2.set_title("Wall time")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)
