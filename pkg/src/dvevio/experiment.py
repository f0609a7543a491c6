"""Mask ON/OFF trial studies and their aggregate report.

Layout written under the output directory::

    on/trial_000/ ...  off/trial_000/ ...   per-trial run_once outputs
    population_on.csv, population_off.csv   trial,seed,insertions,terminal_d_optimality
    dopt_paired.csv                          trial,seed,terminal_on,terminal_off
    dopt_series.csv                          timestamp_s,on_median,off_median
    (per trial) hygiene.csv                  worst covariance / quaternion deviations
    report.txt                               flat key = value summary
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from dvevio.config import write_config
from dvevio.dataset import Dataset, read_csv, write_csv
from dvevio.errors import IngestionError, InvalidInputError
from dvevio.metrics import box_stats, one_way_anova
from dvevio.pipeline import HYGIENE_HEADER, METRICS_HEADER, RunConfig, run_once

log = logging.getLogger(__name__)

POPULATION_HEADER = ["trial", "seed", "insertions", "terminal_d_optimality"]
PAIRED_HEADER = ["trial", "seed", "terminal_on", "terminal_off"]
SERIES_HEADER = ["timestamp_s", "on_median", "off_median"]
ARMS = (("on", True), ("off", False))


def trial_dir(out_dir, arm, trial):
    return Path(out_dir) / arm / f"trial_{trial:03d}"


def _run_trial(args):
    cfg, seed, out = args
    run_once(cfg, seed, out)
    return str(out)


def run_experiment(cfg: RunConfig, out_dir=None, jobs=1):
    """Run ``cfg.trials`` paired trials with the mask on and off, then aggregate.

    Trial ``i`` of both arms uses seed ``cfg.seed_base + i``.
    """
    if cfg.trials < 2:
        raise InvalidInputError("an ON/OFF experiment needs at least 2 trials")
    out_dir = Path(out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(out_dir / "experiment.cfg", dataclasses.replace(cfg, output_dir=str(out_dir)))
    tasks = []
    for arm, enabled in ARMS:
        arm_cfg = dataclasses.replace(cfg, mask_enabled=enabled, debug_masks=False)
        for i in range(cfg.trials):
            tasks.append((arm_cfg, cfg.seed_base + i, trial_dir(out_dir, arm, i)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_run_trial, tasks))
    else:
        dataset = Dataset.load(cfg.dataset_path)
        for arm_cfg, seed, out in tasks:
            log.info("trial %s seed %d", out, seed)
            run_once(arm_cfg, seed, out, dataset=dataset)
    return aggregate(out_dir, cfg.trials, cfg.seed_base)


def _load_arm(out_dir, arm, trials):
    series = []
    for i in range(trials):
        path = trial_dir(out_dir, arm, i) / "metrics.csv"
        series.append(read_csv(path, METRICS_HEADER))
    return series


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.9g}"
    return str(x)


def aggregate(out_dir, trials, seed_base=0):
    """Build population CSVs and ``report.txt`` from cached per-trial CSVs.

    Returns the report as an ordered dict of key -> string value.
    """
    out_dir = Path(out_dir)
    per_arm = {arm: _load_arm(out_dir, arm, trials) for arm, _ in ARMS}
    seeds = [seed_base + i for i in range(trials)]
    pops = {}
    for arm, series in per_arm.items():
        rows = [[i, seeds[i], int(m[-1, 3]), float(m[-1, 1])] for i, m in enumerate(series)]
        write_csv(out_dir / f"population_{arm}.csv", POPULATION_HEADER, rows)
        pops[arm] = np.array([r[2] for r in rows], dtype=float)

    term_on = [float(m[-1, 1]) for m in per_arm["on"]]
    term_off = [float(m[-1, 1]) for m in per_arm["off"]]
    write_csv(out_dir / "dopt_paired.csv", PAIRED_HEADER,
              ([i, seeds[i], a, b] for i, (a, b) in enumerate(zip(term_on, term_off))))

    t = per_arm["on"][0][:, 0]
    for m in per_arm["on"] + per_arm["off"]:
        if len(m) != len(t) or np.any(m[:, 0] != t):
            raise IngestionError(f"{out_dir}: trials have differing metric timestamps")
    med_on = np.median(np.stack([m[:, 1] for m in per_arm["on"]]), axis=0)
    med_off = np.median(np.stack([m[:, 1] for m in per_arm["off"]]), axis=0)
    write_csv(out_dir / "dopt_series.csv", SERIES_HEADER, zip(t, med_on, med_off))

    hyg = np.vstack([read_csv(trial_dir(out_dir, arm, i) / "hygiene.csv", HYGIENE_HEADER)
                     for arm, _ in ARMS for i in range(trials)])

    anova = one_way_anova([pops["on"], pops["off"]])
    report = {"trials": trials, "seed_base": seed_base}
    for arm in ("on", "off"):
        b = box_stats(pops[arm])
        report.update({
            f"insertions_{arm}_median": b.median,
            f"insertions_{arm}_q1": b.q1,
            f"insertions_{arm}_q3": b.q3,
            f"insertions_{arm}_whisker_low": b.whisker_low,
            f"insertions_{arm}_whisker_high": b.whisker_high,
            f"insertions_{arm}_outliers": " ".join(_fmt(v) for v in b.outliers),
        })
    report.update({
        "anova_f_statistic": anova.f_statistic,
        "anova_df_between": anova.df_between,
        "anova_df_within": anova.df_within,
        "anova_p_value": anova.p_value,
        "anova_degenerate": anova.degenerate,
        "dopt_terminal_on_median": float(np.median(term_on)),
        "dopt_terminal_off_median": float(np.median(term_off)),
        "dopt_on_lower_count": int(sum(a < b for a, b in zip(term_on, term_off))),
        "hygiene_max_asymmetry": float(hyg[:, 0].max()),
        "hygiene_min_eig_ratio": float(hyg[:, 1].min()),
        "hygiene_max_quat_error": float(hyg[:, 2].max()),
    })
    report = {k: _fmt(v) for k, v in report.items()}
    with open(out_dir / "report.txt", "w") as fh:
        for k, v in report.items():
            fh.write(f"{k} = {v}\n")
    return report


def read_report(path):
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if " = " not in line:
            raise IngestionError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split(" = ", 1)
        out[k.strip()] = v.strip()
    return out
