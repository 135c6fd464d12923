"""Build experiments from a :class:`RunConfig` and write their artefacts."""
from __future__ import annotations

import itertools
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, RunConfig
from .datagen import ConfigurationError, DatasetSpec, make_dataset, merge_validation
from .losses import Loss
from .metrics import best_last_tracker, records_to_csv
from .model import Classifier, OptimizerConfig, checkpoint_bytes
from .refine import RefineConfig, corrections_to_tsv, run_training
from .theory import TheoryParams, multi_round_refine, report_to_text, sample_oracle_population


def write_atomic(path, data):
    """Write via a temp file in the same directory and rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Experiment:
    spec: DatasetSpec
    layer_sizes: list
    loss: Loss
    optim: OptimizerConfig
    refine: RefineConfig | None
    bins: int
    merge_validation: bool


def build_experiment(cfg: RunConfig, seed) -> Experiment:
    """Validate and assemble everything a training run needs."""
    try:
        d = cfg.section("dataset")
        spec = DatasetSpec(
            num_classes=d["num_classes"],
            num_samples=d["num_samples"],
            feature_dim=d["feature_dim"],
            q=d["q"],
            eta=d["eta"],
            class_separation=d["class_separation"],
            seed=seed,
            train_frac=d["train_frac"],
            val_frac=d["val_frac"],
        ).validate()
        if spec.eta > 0 and spec.q >= 1:
            raise ConfigurationError("eta > 0 with q = 1 leaves no non-candidate label")
        lc = cfg.section("loss")
        loss = Loss(lc["kind"], lc["lambda_c"], lc["lambda_r"], lc["lambda_g"])
        o = cfg.section("optim")
        optim = OptimizerConfig(o["lr"], o["momentum"], o["epochs"], o["batch_size"])
        r = cfg.section("refine")
        refine = None
        if r["enabled"]:
            refine = RefineConfig(
                tau_eps=r["tau_eps"],
                num_aug=r["num_aug"],
                aug_sigma=r["aug_sigma"],
                swapping=r["swapping"],
                e0_mode=r["e0_mode"],
                e0_fixed=r["e0_fixed"],
            )
        hidden = cfg["model.hidden"]
        if any(h < 1 for h in hidden):
            raise ConfigError("hidden layer sizes must be positive")
        if cfg["metrics.bins"] < 1:
            raise ConfigError("metrics.bins must be positive")
    except (ValueError, KeyError) as err:
        raise ConfigError(str(err)) from None
    return Experiment(
        spec, [spec.feature_dim, *hidden, spec.num_classes], loss, optim, refine, cfg["metrics.bins"], d["merge_validation"]
    )


def train_once(exp: Experiment, seed):
    dataset = make_dataset(exp.spec)
    if exp.merge_validation:
        dataset = merge_validation(dataset, exp.spec.q, exp.spec.eta, np.random.SeedSequence([seed, 2]))
    clf = Classifier.init(exp.layer_sizes, seed=seed)
    return run_training(dataset, clf, exp.loss, exp.optim, exp.refine, seed=seed, bins=exp.bins)


def summarize(result, seed):
    best, last, gap = best_last_tracker(result.records)
    return {
        "seed": seed,
        "best_test_acc": best,
        "last_test_acc": last,
        "gap": gap,
        "final_noise_level": result.records[-1].train_noise_level,
        "e0": result.state.e0,
        "num_corrections": len(result.state.corrections_log),
    }


def write_train_outputs(result, exp: Experiment, out_dir):
    write_atomic(os.path.join(out_dir, "metrics.csv"), records_to_csv(result.records))
    write_atomic(os.path.join(out_dir, "corrections.tsv"), corrections_to_tsv(result.state.corrections_log))
    write_atomic(os.path.join(out_dir, "model.ckpt"), checkpoint_bytes(result.clf, epoch=exp.optim.max_epochs))


SUMMARY_FIELDS = ("seed", "best_test_acc", "last_test_acc", "gap", "final_noise_level", "e0", "num_corrections")


def _fmt(v):
    if v is None:
        return "NA"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.6f}"


def summary_csv(rows, label_fields=("seed",)):
    """Per-row values followed by ``mean`` and ``std`` rows (sample std)."""
    numeric = [f for f in SUMMARY_FIELDS if f not in label_fields]
    header = list(label_fields) + numeric
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(_fmt(r.get(f)) for f in header))
    for stat in ("mean", "std"):
        vals = []
        for f in numeric:
            xs = [r[f] for r in rows if r.get(f) is not None]
            if not xs:
                vals.append("NA")
            elif stat == "mean":
                vals.append(_fmt(float(np.mean(xs))))
            else:
                vals.append(_fmt(float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0))
        lines.append(",".join([stat] + [""] * (len(label_fields) - 1) + vals))
    return "\n".join(lines) + "\n"


def _train_job(args):
    cfg_values, seed, out_dir = args
    cfg = RunConfig(cfg_values)
    exp = build_experiment(cfg, seed)
    result = train_once(exp, seed)
    write_train_outputs(result, exp, out_dir)
    return summarize(result, seed)


def run_train(cfg: RunConfig, out_dir, workers=1):
    seeds = cfg["run.seeds"]
    for s in seeds:
        build_experiment(cfg, s)  # fail fast before touching the output dir
    jobs = [(dict(cfg.values), s, os.path.join(out_dir, f"seed_{s}")) for s in seeds]
    rows = _map(_train_job, jobs, workers)
    write_atomic(os.path.join(out_dir, "summary.csv"), summary_csv(rows))
    write_atomic(os.path.join(out_dir, "config.txt"), cfg.dumps())
    return rows


def theory_params(cfg: RunConfig):
    t = cfg.section("theory")
    try:
        return TheoryParams(
            alpha=t["alpha"],
            epsilon=t["epsilon"],
            imbalance=t["imbalance"],
            eta_init=t["eta_init"],
            m_init=t["m_init"],
            num_classes=t["num_classes"],
            q=t["q"],
        )
    except ValueError as err:
        raise ConfigError(str(err)) from None


def run_theory(cfg: RunConfig, out_dir):
    params = theory_params(cfg)
    mode = cfg["theory.perturbation"]
    if mode not in ("adversarial", "random", "none"):
        raise ConfigError(f"unknown theory.perturbation {mode!r}")
    if cfg["theory.n"] < 1:
        raise ConfigError("theory.n must be positive")
    reports = []
    for seed in cfg["run.seeds"]:
        pop = sample_oracle_population(params, cfg["theory.n"], seed)
        report = multi_round_refine(pop, params, mode, seed=seed)
        sub = os.path.join(out_dir, f"seed_{seed}")
        write_atomic(os.path.join(sub, "refinement_report.json"), report.to_json())
        write_atomic(os.path.join(sub, "refinement_report.txt"), report_to_text(report))
        reports.append(report)
    write_atomic(os.path.join(out_dir, "config.txt"), cfg.dumps())
    return reports


SWEEP_KEYS = ("tau_eps", "e0", "swapping", "num_aug")


def _e0_overrides(token):
    t = token.strip().lower()
    if t in ("auto", "convergence"):
        return {"refine.e0_mode": "convergence"}
    if t == "local_max":
        return {"refine.e0_mode": "local_max"}
    return {"refine.e0_mode": "fixed", "refine.e0_fixed": t}


def sweep_cells(cfg: RunConfig):
    """Cartesian product of the non-empty ``sweep.*`` grids, as override dicts."""
    axes = []
    for key in SWEEP_KEYS:
        values = cfg[f"sweep.{key}"]
        if values:
            axes.append((key, values))
    if not axes:
        raise ConfigError("sweep needs at least one non-empty sweep.* grid")
    cells = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        overrides, label = {}, {}
        for (key, _), value in zip(axes, combo):
            label[key] = value
            if key == "e0":
                overrides.update(_e0_overrides(value))
            else:
                overrides[f"refine.{key}"] = value
        cells.append((label, overrides))
    return cells


def run_sweep(cfg: RunConfig, out_dir, workers=1):
    cells = sweep_cells(cfg)
    prepared = []
    for i, (label, overrides) in enumerate(cells):
        cell_cfg = cfg.with_overrides(**overrides)
        for s in cfg["run.seeds"]:
            build_experiment(cell_cfg, s)
        prepared.append((f"cell_{i:03d}", label, cell_cfg))
    jobs, owners = [], []
    for cell_id, label, cell_cfg in prepared:
        for s in cfg["run.seeds"]:
            jobs.append((dict(cell_cfg.values), s, os.path.join(out_dir, cell_id, f"seed_{s}")))
            owners.append((cell_id, label))
    rows = _map(_train_job, jobs, workers)

    label_keys = [k for k in SWEEP_KEYS if cfg[f"sweep.{k}"]]
    index = [",".join(["cell", *label_keys, *SUMMARY_FIELDS, "metrics_path"])]
    per_cell = {}
    for (cell_id, label), row in zip(owners, rows):
        path = os.path.join(cell_id, f"seed_{row['seed']}", "metrics.csv")
        index.append(",".join([cell_id, *(label[k] for k in label_keys), *(_fmt(row[f]) for f in SUMMARY_FIELDS), path]))
        per_cell.setdefault(cell_id, (label, []))[1].append(row)
    write_atomic(os.path.join(out_dir, "index.csv"), "\n".join(index) + "\n")

    stats = [f for f in SUMMARY_FIELDS if f != "seed"]
    lines = [",".join(["cell", *label_keys, *(f"{f}_{s}" for f in stats for s in ("mean", "std"))])]
    for cell_id, (label, cell_rows) in per_cell.items():
        vals = []
        for f in stats:
            xs = [r[f] for r in cell_rows if r[f] is not None]
            vals.append(_fmt(float(np.mean(xs))) if xs else "NA")
            vals.append(_fmt(float(np.std(xs, ddof=1))) if len(xs) > 1 else ("0.000000" if xs else "NA"))
        lines.append(",".join([cell_id, *(label[k] for k in label_keys), *vals]))
    write_atomic(os.path.join(out_dir, "sweep_summary.csv"), "\n".join(lines) + "\n")
    write_atomic(os.path.join(out_dir, "config.txt"), cfg.dumps())
    return rows


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]

