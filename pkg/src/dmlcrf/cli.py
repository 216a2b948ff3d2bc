"""Command line entry point: ``dmlcrf synth|train|infer|eval|sweep``.

Every option is a :class:`~dmlcrf.config.RunConfig` field spelled ``--field``.
``--config FILE`` loads ``key = value`` lines first; flags given on the
command line win. Exit codes: 0 ok, 1 usage, 2 data/shape, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import dml_net, hsi_data, metrics, pipeline
from .config import SWEEP_PARAMS, build_config, read_config_file
from .errors import DmlCrfError

log = logging.getLogger("dmlcrf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


_TRAIN_OPTS = [
    ("per_class", int), ("virtual_per_class", int), ("mix_low", float), ("mix_high", float),
    ("normalize_scope", str), ("lam", float), ("center_rate", float), ("learning_rate", float),
    ("momentum", float), ("batch_size", int), ("epochs", int), ("center_loss_form", str),
    ("hidden", str), ("feature_dim", int),
]
_CRF_OPTS = [
    ("crf", _bool), ("preset", str), ("w_app", float), ("w_smo", float), ("theta_alpha", float),
    ("theta_beta", float), ("theta_gamma", float), ("filter_size", int), ("iterations", int),
    ("window", str),
]
_COMMANDS = {
    "synth": [("height", int), ("width", int), ("bands", int), ("classes", int), ("noise", float)],
    "train": [("cube", str), ("labels", str)] + _TRAIN_OPTS,
    "infer": [("cube", str), ("checkpoint", str), ("train_mask", str), ("normalize_scope", str),
              ("export_unary", _bool)] + _CRF_OPTS,
    "eval": [("pred", str), ("labels", str), ("train_mask", str), ("cube", str), ("repeats", int),
             ("fixed_seed", _bool)] + _TRAIN_OPTS + _CRF_OPTS,
    "sweep": [("cube", str), ("labels", str), ("checkpoint", str), ("train_mask", str),
              ("normalize_scope", str)] + _CRF_OPTS,
}


def make_parser():
    parser = _Parser(prog="dmlcrf", description="Center-loss spectral features + windowed CRF for hyperspectral images")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in _COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value file; flags override it")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        seen = set()
        for opt, typ in opts:
            if opt in seen:
                continue
            seen.add(opt)
            p.add_argument(f"--{opt}", type=typ, default=None)
        if name == "sweep":
            p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
            p.add_argument("--values", required=True, help="comma separated list")
            p.add_argument("--no_cache", action="store_true", help="recompute features at every point")
    return parser


def _require(cfg, *names):
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise UsageError(f"--{name} is required")
        if not Path(value).exists():
            raise UsageError(f"--{name}: {value} does not exist")


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(cfg, args):
    out = _out_dir(cfg)
    cube, labels = hsi_data.synth_scene(cfg.height, cfg.width, cfg.bands, cfg.classes, cfg.noise, cfg.seed)
    hsi_data.write_cube(cube, out / pipeline.CUBE_FILE)
    hsi_data.write_labels(labels, out / pipeline.LABELS_FILE)
    print(f"wrote {cube.height}x{cube.width}x{cube.bands} cube with {labels.num_classes} classes to {out}")


def cmd_train(cfg, args):
    _require(cfg, "cube", "labels")
    out = _out_dir(cfg)
    cube, labels = hsi_data.load_cube(cfg.cube), hsi_data.load_labels(cfg.labels)
    result = pipeline.train_model(cube, labels, cfg)
    dml_net.save_checkpoint(out / pipeline.MODEL_FILE, result.params, result.state.centers)
    dml_net.write_loss_csv(result.history, out / pipeline.LOSS_FILE)
    hsi_data.write_labels(pipeline.mask_from_indices(labels.shape, labels, result.train_idx),
                          out / pipeline.TRAIN_MASK_FILE)
    last = result.history[-1]
    print(f"epochs={last.epoch} softmax_loss={last.softmax_loss:.6f} center_loss={last.center_loss:.6f} "
          f"train_oa={result.train_oa:.4f}")


def _load_model_and_cube(cfg):
    _require(cfg, "cube", "checkpoint")
    cube = hsi_data.load_cube(cfg.cube)
    params, _ = dml_net.load_checkpoint(cfg.checkpoint)
    train_idx = None
    if cfg.normalize_scope == "train":
        _require(cfg, "train_mask")
        train_idx = hsi_data.load_labels(cfg.train_mask).labeled_indices()
    return cube, params, pipeline.normalize_for(cube, cfg, train_idx)


def cmd_infer(cfg, args):
    out = _out_dir(cfg)
    cube, params, norm = _load_model_and_cube(cfg)
    crf_params = cfg.crf_params(cube.shape) if cfg.crf else None
    if crf_params is not None:
        log.info("crf: %s", crf_params)
    result = pipeline.run_inference(params, norm, crf_params)
    hsi_data.write_labels(result.labels, out / pipeline.PRED_FILE)
    hsi_data.write_cube(hsi_data.HsiCube(result.marginals), out / pipeline.MARGINALS_FILE)
    if cfg.export_unary:
        hsi_data.write_cube(hsi_data.HsiCube(result.unary), out / pipeline.UNARY_FILE)
    print(result.timing_line())


def cmd_eval(cfg, args):
    out = _out_dir(cfg)
    if cfg.pred is None or cfg.repeats > 1:
        _require(cfg, "cube", "labels")
        cube, labels = hsi_data.load_cube(cfg.cube), hsi_data.load_labels(cfg.labels)
        dml_reps, crf_reps = pipeline.repeat_runs(cube, labels, cfg)
        pipeline.write_repeat_outputs(out, dml_reps, crf_reps)
        print((out / pipeline.TABLE_FILE).read_text(), end="")
        return
    _require(cfg, "pred", "labels")
    pred, gt = hsi_data.load_labels(cfg.pred), hsi_data.load_labels(cfg.labels)
    mask = hsi_data.load_labels(cfg.train_mask) if cfg.train_mask else None
    rep = metrics.evaluate(pred, gt, pipeline.eval_pixels(gt, mask))
    metrics.write_report_csv(rep, out / pipeline.METRICS_FILE)
    table = metrics.format_table(rep)
    (out / pipeline.TABLE_FILE).write_text(table)
    print(table, end="")


def cmd_sweep(cfg, args):
    out = _out_dir(cfg)
    _require(cfg, "labels")
    cube, params, norm = _load_model_and_cube(cfg)
    labels = hsi_data.load_labels(cfg.labels)
    mask = hsi_data.load_labels(cfg.train_mask) if cfg.train_mask else None
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"--values: {exc}") from exc
    if args.param == "k":
        values = [int(v) for v in values]
    try:
        base = cfg.crf_params(cube.shape)
        pipeline.sweep_params(base, args.param, values[0] if values else 1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = pipeline.run_sweep(params, norm, labels, base, args.param, values,
                              pixels=pipeline.eval_pixels(labels, mask), cache=not args.no_cache)
    pipeline.write_sweep_csv(rows, out / pipeline.SWEEP_FILE)
    for row in rows:
        print(f"{row['param']}={row['value']} oa={row['oa']:.4f} aa={row['aa']:.4f}")


_HANDLERS = {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "sweep": cmd_sweep}
_NON_CONFIG = {"command", "verbose", "config", "param", "values", "no_cache"}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
        cfg = build_config(file_values, overrides)
        _HANDLERS[args.command](cfg, args)
    except (UsageError, KeyError, ValueError) as exc:
        if isinstance(exc, DmlCrfError):
            print(f"dmlcrf: {exc}", file=sys.stderr)
            return exc.exit_code
        print(f"dmlcrf: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DmlCrfError as exc:
        print(f"dmlcrf: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dmlcrf: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
