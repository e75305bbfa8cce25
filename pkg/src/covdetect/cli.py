"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baselines, synth
from .channel_select import chorra_from_covariances, read_ranking, vfold_rank, write_ranking
from .detector import (calibrate_kappa, classify, load_model, save_model, score, train)
from .evaluation import (CovStack, DetectorConfig, SweepResult, airflow_feature_search,
                         csp_lda_kfold_auc, electrode_curve, kfold_auc, ocsvm_kfold_auc, sweep_band,
                         sweep_KL)
from .signal_io import (FilterSpec, ParseError, bandpass_filter, downsample, epoch_windows,
                        load_epochs, load_recording, reject_artifacts, save_epochs, save_recording)
from .spd_core import ConvergenceError, Metric, default_shrinkage, sample_covariance

log = logging.getLogger("covdetect")

DATA_DIR_ENV = "COVDETECT_DATA_DIR"

DEFAULTS = {
    "metric": "log_euclidean",
    "K": 3,
    "L": 25,
    "V": 10,
    "guard": 1,
    "shrinkage": None,
    "band": [8.0, 24.0],
    "window_s": 5.0,
    "overlap": 0.5,
    "seed": 0,
    "jobs": 1,
    "condition": "SV",
    "specificity": 0.95,
    "start": 0,
    "nu": 0.1,
    "rule": "max",
    "method": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _path(p):
    p = Path(p)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _int_range(text):
    """'1-7' -> 1..7, '20:40:5' -> 20,25,..,40, '3,5,9' -> explicit."""
    text = str(text)
    if ":" in text:
        a, b, *step = (int(x) for x in text.split(":"))
        return list(range(a, b + 1, step[0] if step else 1))
    if "-" in text and "," not in text:
        a, b = (int(x) for x in text.split("-"))
        return list(range(a, b + 1))
    return [int(x) for x in text.split(",")]


def _bands(text):
    out = []
    for item in text.split(","):
        lo, hi = item.split("-")
        out.append((float(lo), float(hi)))
    return out


def _add_detector_opts(p, V=False):
    p.add_argument("--metric", choices=[m.value for m in Metric] + ["log-euclidean", "affine-invariant"],
                   help="distance (default log_euclidean)")
    p.add_argument("--K", type=int, help="number of prototypes (default 3)")
    p.add_argument("--L", type=int, help="number of learning covariances (default 25)")
    p.add_argument("--shrinkage", type=float, help="covariance shrinkage in [0,1] (default: by window size)")
    if V:
        p.add_argument("--V", type=int, help="number of learning periods / folds (default 10)")
        p.add_argument("--guard", type=int, help="epochs dropped either side of a learning period (default 1)")


def _add_preproc_opts(p):
    p.add_argument("--band", type=float, nargs=2, metavar=("LOW", "HIGH"), help="band-pass edges in Hz (default 8 24)")
    p.add_argument("--order", type=int, help="FIR order (even; default 4*rate/low)")
    p.add_argument("--window-s", dest="window_s", type=float, help="window length in s (default 5)")
    p.add_argument("--overlap", type=float, help="window overlap fraction (default 0.5)")
    p.add_argument("--target-rate", dest="target_rate", type=float, help="down-sample to this rate")


def _common(suppress):
    # accepted before or after the subcommand name
    p = _Parser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
    p.add_argument("--config", help="JSON file with option defaults (flags override it)")
    p.add_argument("--seed", type=int, help="seed for every random choice (default 0)")
    p.add_argument("--jobs", type=int, help="parallel workers for folds and sweep cells (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    parser = _Parser(prog="covdetect", parents=[_common(False)],
                     description="One-class detection of altered states from covariance matrices.",
                     epilog=f"Relative paths are resolved against ${DATA_DIR_ENV} when it is set.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = _common(True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    p = add("synth", help="generate a synthetic recording")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default=None)
    p.add_argument("--spec", help="generator spec (JSON)")
    p.add_argument("--condition", choices=["ref", "alt"], default="ref")
    p.add_argument("--airflow", action="store_true", help="emit the air-flow channel instead of EEG")
    p.add_argument("--duration-s", dest="duration_s", type=float)
    p.add_argument("--write-spec", dest="write_spec", help="also save the resolved spec here")
    p.add_argument("--out", required=True)

    p = add("preprocess", help="filter, down-sample and epoch a recording")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    _add_preproc_opts(p)
    p.add_argument("--condition", choices=["SV", "SN", "LD", "unknown"])
    p.add_argument("--reject", type=float, help="drop epochs with |sample| above this")
    p.add_argument("--channels", help="comma-separated channel labels to keep")

    p = add("train", help="learn prototypes from reference epochs")
    p.add_argument("--epochs", required=True)
    p.add_argument("--start", type=int, help="first epoch of the learning period (default 0)")
    _add_detector_opts(p)
    p.add_argument("--out", required=True)

    p = add("calibrate", help="set kappa from held-out reference epochs")
    p.add_argument("--model", required=True)
    p.add_argument("--epochs", required=True)
    p.add_argument("--specificity", type=float, help="target specificity (default 0.95)")
    p.add_argument("--out", required=True)

    p = add("score", help="distance of each epoch to the nearest prototype")
    p.add_argument("--model", required=True)
    p.add_argument("--epochs", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", help="cross-validated AUC of reference vs altered epochs")
    p.add_argument("--reference", required=True)
    p.add_argument("--altered", required=True)
    p.add_argument("--method", choices=["detector", "ocsvm-cov", "ocsvm-airflow", "csp-lda"])
    p.add_argument("--nu", type=float, help="one-class SVM nu (default 0.1)")
    p.add_argument("--feature-search", dest="feature_search", action="store_true",
                   help="with ocsvm-airflow: score every subset of the six air-flow descriptors")
    _add_detector_opts(p, V=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")

    p = add("sweep-band", help="AUC over a grid of band-pass settings")
    p.add_argument("--reference", required=True, help="reference recording")
    p.add_argument("--altered", required=True, help="altered recording")
    p.add_argument("--bands", help="e.g. 8-24,8-30 (default: 0-30 Hz grid)")
    p.add_argument("--order", type=int, help="FIR order for every band (default: per band)")
    p.add_argument("--window-s", dest="window_s", type=float)
    p.add_argument("--overlap", type=float)
    p.add_argument("--target-rate", dest="target_rate", type=float)
    _add_detector_opts(p, V=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")

    p = add("sweep-kl", help="AUC over prototypes K and learning size L")
    p.add_argument("--reference", required=True)
    p.add_argument("--altered", required=True)
    p.add_argument("--K-range", dest="K_range", default="1-7")
    p.add_argument("--L-range", dest="L_range", default="20:40:5")
    _add_detector_opts(p, V=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")

    p = add("select-channels", help="rank channels")
    p.add_argument("--reference", required=True)
    p.add_argument("--altered", required=True)
    p.add_argument("--method", choices=["rra", "averaged", "csp", "chorra"],
                   help="rra/averaged/csp over V periods, or chorra on the first period")
    p.add_argument("--rule", choices=["max", "min"], help="elimination rule (default max)")
    _add_detector_opts(p, V=True)
    p.add_argument("--out", required=True)

    p = add("electrode-curve", help="AUC against the number of top-ranked channels")
    p.add_argument("--reference", required=True)
    p.add_argument("--altered", required=True)
    p.add_argument("--ranking", required=True)
    _add_detector_opts(p, V=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    return parser


def resolve_options(args):
    """Flag > config file > default."""
    cfg = {}
    if args.config:
        cfg = json.loads(_path(args.config).read_text())
        if not isinstance(cfg, dict):
            raise ValueError("config file must hold a JSON object")
    opts = dict(DEFAULTS)
    opts.update(cfg)
    for key, value in vars(args).items():
        if value is not None and value is not False:
            opts[key] = value
    return opts


def _detector_config(o):
    return DetectorConfig(Metric.parse(o["metric"]), int(o["K"]), int(o["L"]), int(o["V"]),
                          o["shrinkage"], int(o["seed"]), int(o["guard"]))


def _write_sweep(res: SweepResult, o):
    res.write(_path(o["out"]), _path(o["summary"]) if o.get("summary") else None)
    valid = [c for c in res.cells if c["valid"]]
    for c in valid[:1] if len(valid) == 1 else []:
        print(f"mean AUC {c['mean_auc']:.4f} +/- {c['stderr']:.4f} over {len(c['fold_aucs'])} folds")


def cmd_synth(o):
    if o.get("spec"):
        spec = synth.load_spec(_path(o["spec"]))
    else:
        spec = synth.preset(o.get("preset") or "separable", int(o["seed"]))
    if o.get("duration_s"):
        spec = replace(spec, duration_s=float(o["duration_s"]))
    rec = (synth.generate_airflow if o.get("airflow") else synth.generate)(spec, o["condition"])
    save_recording(rec, _path(o["out"]))
    if o.get("write_spec"):
        synth.save_spec(spec, _path(o["write_spec"]))


def cmd_preprocess(o):
    rec = load_recording(_path(o["input"]))
    if o.get("channels"):
        rec = rec.pick(o["channels"].split(","))
    band = o["band"]
    rec = bandpass_filter(rec, FilterSpec(float(band[0]), float(band[1]), o.get("order")))
    if o.get("target_rate"):
        rec = downsample(rec, float(o["target_rate"]))
    es = epoch_windows(rec, float(o["window_s"]), float(o["overlap"]), o["condition"])
    if o.get("reject"):
        es, rejected = reject_artifacts(es, float(o["reject"]))
        if len(rejected):
            log.info("rejected %d epochs: %s", len(rejected), rejected.tolist())
    save_epochs(es, _path(o["out"]))
    print(f"{len(es)} epochs of {es.n_channels} channels x {es.n_times} samples")


def cmd_train(o):
    es = load_epochs(_path(o["epochs"]))
    L, start = int(o["L"]), int(o["start"])
    if start < 0 or start + L > len(es):
        raise ValueError(f"learning period {start}..{start + L - 1} exceeds the {len(es)} epochs")
    covs = sample_covariance(es.data[start:start + L], o["shrinkage"])
    shrinkage = o["shrinkage"]
    if shrinkage is None:
        shrinkage = default_shrinkage(es.n_channels, es.n_times)
    meta = {"shrinkage": shrinkage, "band": None, "window_s": es.n_times / es.sample_rate_hz,
            "channels": list(es.channel_labels), "start": start}
    model = train(covs, int(o["K"]), o["metric"], seed=int(o["seed"]), meta=meta)
    save_model(model, _path(o["out"]))
    print(f"trained {model.K} prototypes from L={model.L} ({model.metric.value})")


def cmd_calibrate(o):
    model = load_model(_path(o["model"]))
    s = score(model, load_epochs(_path(o["epochs"])))
    model = calibrate_kappa(model, s, float(o["specificity"]))
    save_model(model, _path(o["out"]))
    print(f"kappa = {model.kappa!r}")


def cmd_score(o):
    model = load_model(_path(o["model"]))
    es = load_epochs(_path(o["epochs"]))
    s = score(model, es)
    classes = classify(model, s) if model.kappa is not None else None
    with open(_path(o["out"]), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch_index", "start_s", "condition", "delta", "class"])
        for i in range(len(s)):
            w.writerow([i, repr(float(es.start_times_s[i])), es.conditions[i], repr(float(s.deltas[i])),
                        "" if classes is None else int(classes[i])])


def cmd_evaluate(o):
    cfg = _detector_config(o)
    ref = load_epochs(_path(o["reference"]))
    alt = load_epochs(_path(o["altered"]))
    method = o.get("method") or "detector"
    if o.get("feature_search") and method != "ocsvm-airflow":
        raise ValueError("--feature-search applies to --method ocsvm-airflow only")
    if method == "detector":
        aucs = kfold_auc(ref, alt, cfg, jobs=int(o["jobs"]))
    elif method == "ocsvm-cov":
        rf = baselines.vectorize_cov(sample_covariance(ref.data, cfg.shrinkage))
        af = baselines.vectorize_cov(sample_covariance(alt.data, cfg.shrinkage))
        aucs = ocsvm_kfold_auc(rf, af, cfg, nu=float(o["nu"]))
    elif method == "ocsvm-airflow":
        names = baselines.AIRFLOW6 if o.get("feature_search") else baselines.AIRFLOW3
        feats = lambda es: np.array([baselines.airflow_features(e, es.sample_rate_hz, names) for e in es])
        if o.get("feature_search"):
            _write_sweep(airflow_feature_search(feats(ref), feats(alt), cfg, float(o["nu"])), o)
            return
        aucs = ocsvm_kfold_auc(feats(ref), feats(alt), cfg, nu=float(o["nu"]), standardize=True)
    else:
        aucs = csp_lda_kfold_auc(ref, alt, cfg)
    res = SweepResult(("method", "metric", "K", "L"), n_folds=cfg.V,
                      meta={"V": cfg.V, "seed": cfg.seed, "guard": cfg.guard})
    res.add((method, cfg.metric.value, cfg.K, cfg.L), aucs)
    _write_sweep(res, o)


def cmd_sweep_band(o):
    cfg = _detector_config(o)
    bands = _bands(o["bands"]) if o.get("bands") else None
    res = sweep_band(load_recording(_path(o["reference"])), load_recording(_path(o["altered"])),
                     bands, cfg, float(o["window_s"]), float(o["overlap"]), o.get("target_rate"),
                     jobs=int(o["jobs"]), order=o.get("order"))
    _write_sweep(res, o)


def cmd_sweep_kl(o):
    cfg = _detector_config(o)
    res = sweep_KL(load_epochs(_path(o["reference"])), load_epochs(_path(o["altered"])),
                   _int_range(o["K_range"]), _int_range(o["L_range"]), cfg, jobs=int(o["jobs"]))
    _write_sweep(res, o)


def cmd_select_channels(o):
    cfg = _detector_config(o)
    ref = CovStack.from_epochs(load_epochs(_path(o["reference"])))
    alt = CovStack.from_epochs(load_epochs(_path(o["altered"])))
    method = o.get("method") or "rra"
    if method == "chorra":
        ranked = chorra_from_covariances(ref, alt, cfg, folds=(0,), rule=o["rule"])
    else:
        ranked = vfold_rank(ref, alt, cfg.V, method, cfg, rule=o["rule"], jobs=int(o["jobs"]))
    prov = {"seed": cfg.seed, "V": cfg.V, "metric": cfg.metric.value, "K": cfg.K, "L": cfg.L,
            "rule": o["rule"]}
    write_ranking(ranked, _path(o["out"]), prov)
    print("ranking: " + " ".join(ranked.labels[c] for c in ranked.order))


def cmd_electrode_curve(o):
    cfg = _detector_config(o)
    ref = load_epochs(_path(o["reference"]))
    alt = load_epochs(_path(o["altered"]))
    res = electrode_curve(ref, alt, read_ranking(_path(o["ranking"])), cfg, jobs=int(o["jobs"]))
    _write_sweep(res, o)


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "calibrate": cmd_calibrate,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "sweep-band": cmd_sweep_band,
    "sweep-kl": cmd_sweep_kl,
    "select-channels": cmd_select_channels,
    "electrode-curve": cmd_electrode_curve,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        opts = resolve_options(args)
        COMMANDS[args.command](opts)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, IndexError, OSError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
