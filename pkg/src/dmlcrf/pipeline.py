"""End-to-end DML-CRF workflow: normalize, split, augment, train, extract, infer, evaluate."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import dml_net, hsi_data, metrics
from .config import SWEEP_PARAMS, RunConfig
from .crf import CrfParams, infer, unary_from_prob
from .errors import ShapeError

log = logging.getLogger(__name__)

CUBE_FILE = "cube.hsic"
LABELS_FILE = "labels.pgm"
MODEL_FILE = "model.dmlw1"
LOSS_FILE = "loss.csv"
TRAIN_MASK_FILE = "train_mask.pgm"
PRED_FILE = "pred.pgm"
MARGINALS_FILE = "marginals.hsic"
UNARY_FILE = "unary.hsic"
METRICS_FILE = "metrics.csv"
TABLE_FILE = "metrics.txt"
SWEEP_FILE = "sweep.csv"


@dataclass
class TrainResult:
    params: dml_net.MlpParams
    state: dml_net.TrainState
    history: list
    train_idx: np.ndarray
    test_idx: np.ndarray
    cube: hsi_data.HsiCube  # normalized
    train_oa: float


@dataclass
class InferResult:
    labels: hsi_data.LabelMap
    marginals: np.ndarray
    extract_seconds: float
    crf_seconds: float
    unary: Optional[np.ndarray] = None

    @property
    def total_seconds(self):
        return self.extract_seconds + self.crf_seconds

    def timing_line(self):
        return (f"timing extract={self.extract_seconds:.3f}s crf={self.crf_seconds:.3f}s "
                f"total={self.total_seconds:.3f}s")


def normalize_for(cube, cfg: RunConfig, train_idx=None):
    if cfg.normalize_scope == "train":
        if train_idx is None:
            raise ShapeError("normalize_scope=train needs the training pixel indices")
        return hsi_data.normalize(cube, mask=train_idx)
    return hsi_data.normalize(cube)


def train_model(cube, labels, cfg: RunConfig, seed=None) -> TrainResult:
    seed = cfg.seed if seed is None else seed
    if cube.shape[:2] != labels.shape:
        raise ShapeError(f"cube {cube.shape[:2]} and labels {labels.shape} differ in size")
    train_idx, test_idx = hsi_data.split_train_test(labels, cfg.per_class, seed)
    norm = normalize_for(cube, cfg, train_idx)
    samples = hsi_data.SampleSet.from_pixels(norm, labels, train_idx)
    augmented = hsi_data.generate_virtual_samples(samples, cfg.augment_config(seed))
    params, state, history = dml_net.train(augmented, cfg.train_config(seed))
    train_pred = dml_net.predict(params, samples.spectra)
    train_oa = float(np.mean(train_pred == samples.labels))
    log.info("trained on %d real + %d virtual samples, training OA %.4f",
             len(samples), len(augmented) - len(samples), train_oa)
    return TrainResult(params, state, history, train_idx, test_idx, norm, train_oa)


def run_inference(params, norm_cube, crf_params: Optional[CrfParams]) -> InferResult:
    t0 = time.perf_counter()
    features, prob = dml_net.extract(params, norm_cube)
    t1 = time.perf_counter()
    if crf_params is None:
        labels = hsi_data.LabelMap(prob.argmax_labels())
        marginals = prob.values
    else:
        labels, marginals = infer(prob, features, crf_params)
    t2 = time.perf_counter()
    return InferResult(labels, marginals, t1 - t0, t2 - t1, unary_from_prob(prob.values))


def mask_from_indices(shape, labels, indices) -> hsi_data.LabelMap:
    out = np.zeros(shape[0] * shape[1], dtype=np.int64)
    out[indices] = labels.labels.ravel()[indices]
    return hsi_data.LabelMap(out.reshape(shape))


def eval_pixels(labels, train_mask=None):
    """Labeled pixels not used for training."""
    labeled = labels.labeled_indices()
    if train_mask is None:
        return labeled
    return np.setdiff1d(labeled, train_mask.labeled_indices())


# -- repeated runs -------------------------------------------------------------


def repeat_runs(cube, labels, cfg: RunConfig):
    """Train and infer ``cfg.repeats`` times; returns per-run DML and DML-CRF reports."""
    dml_reports, crf_reports = [], []
    for run in range(cfg.repeats):
        seed = cfg.seed if cfg.fixed_seed else cfg.seed + run
        result = train_model(cube, labels, cfg, seed=seed)
        crf_params = cfg.crf_params(cube.shape) if cfg.crf else None
        dml = run_inference(result.params, result.cube, None)
        dml_reports.append(metrics.evaluate(dml.labels, labels, result.test_idx))
        if crf_params is not None:
            crf = run_inference(result.params, result.cube, crf_params)
            crf_reports.append(metrics.evaluate(crf.labels, labels, result.test_idx))
        log.info("run %d (seed %d) done", run + 1, seed)
    return dml_reports, crf_reports


def write_repeat_outputs(out_dir, dml_reports, crf_reports):
    out_dir = Path(out_dir)
    rows = []
    for method, reps in (("dml", dml_reports), ("dml_crf", crf_reports)):
        if reps:
            for name, (mean, std) in metrics.aggregate(reps).items():
                rows.append([method, name, mean, std, len(reps)])
    with open(out_dir / METRICS_FILE, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "mean", "std", "runs"])
        writer.writerows(rows)
    text = ""
    if dml_reports:
        text += metrics.format_aggregate_table(metrics.aggregate(dml_reports), "DML")
    if crf_reports:
        text += metrics.format_aggregate_table(metrics.aggregate(crf_reports), "DML-CRF")
    (out_dir / TABLE_FILE).write_text(text)
    return rows


# -- sweeps ------------------------------------------------------------------


def sweep_params(base: CrfParams, name: str, value) -> CrfParams:
    if name not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {name!r}; choose one of {', '.join(SWEEP_PARAMS)}")
    if name == "k":
        return base.with_(filter_size=int(value))
    return base.with_(**{name: float(value)})


def run_sweep(params, norm_cube, labels, base: CrfParams, name: str, values: Sequence,
              pixels=None, cache=True) -> List[dict]:
    """Evaluate CRF inference at each value of one parameter, others held at ``base``."""
    points = [sweep_params(base, name, v) for v in values]  # validate before running
    cached = dml_net.extract(params, norm_cube) if cache else None
    rows = []
    for value, crf_params in zip(values, points):
        features, prob = cached if cache else dml_net.extract(params, norm_cube)
        pred, _ = infer(prob, features, crf_params)
        rep = metrics.evaluate(pred, labels, pixels)
        rows.append({"param": name, "value": value, "oa": rep.oa, "aa": rep.aa, "kappa": rep.kappa})
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["param", "value", "oa", "aa", "kappa"])
        writer.writeheader()
        writer.writerows(rows)
