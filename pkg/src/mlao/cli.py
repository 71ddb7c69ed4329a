"""Command-line front end.

Subcommands: datagen, train, correct, compare, analyze, sweep. Exit codes:
0 on success, 2 for anything wrong with the invocation or its inputs
(unknown flags, malformed config, missing or incompatible files), 1 for
unexpected runtime failures.

Config files are plain ``key = value`` lines with ``#`` comments. Keys are
DatasetSpec fields (datagen/compare/sweep) or optimizer fields (train);
tuple-valued fields take comma-separated values. Command-line flags win
over config values.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .analysis import layer_weight_rms, spectral_threshold
from .baselines import run_2n_plus_1, run_3n
from .control import (
    ConventionalEstimator,
    MlaoEstimator,
    VirtualMicroscope,
    compare,
    run_mlao,
)
from .imaging import NoiseConfig, read_pgm, synth_specimen, write_pgm16
from .metrics import metric_for_modality
from .network import FormatError, Hyper, init_model, load_model, save_model
from .schemes import SCHEME_TAGS, make_scheme
from .training import (
    DatasetSpec,
    generate_dataset,
    load_dataset,
    sampling_sweep,
    save_dataset,
    train,
)
from .zernike import ZernikeVector

__all__ = ["main"]

MODALITY_EXPONENT = {"wf": 2, "2p": 4, "3p": 6}


class UsageError(Exception):
    """Invocation or input problem; reported on stderr with exit code 2."""


def _echo(message):
    print(message, file=sys.stderr)


def parse_config(path):
    """Read a key = value config file into a {key: raw string} dict."""
    result = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise UsageError(f"{path}:{lineno}: empty key or value")
        result[key] = value
    return result


def _coerce_like(key, raw, default):
    if isinstance(default, bool):
        raise UsageError(f"config key {key} is not settable")
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError as exc:
            raise UsageError(f"config key {key}: {raw!r} is not an integer") from exc
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise UsageError(f"config key {key}: {raw!r} is not a number") from exc
    if isinstance(default, tuple):
        element = int if (default and isinstance(default[0], int)) else float
        try:
            return tuple(element(part.strip()) for part in raw.split(","))
        except ValueError as exc:
            raise UsageError(f"config key {key}: {raw!r} is not a {element.__name__} list") from exc
    return raw


def _apply_config(obj, config):
    """Overlay config values onto a dataclass instance, type-checked."""
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    updates = {}
    for key, raw in config.items():
        if key not in known:
            raise UsageError(f"unknown config key {key!r}")
        updates[key] = _coerce_like(key, raw, known[key])
    return replace(obj, **updates)


def _split_floats(text, flag):
    try:
        return tuple(float(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _split_ints(text, flag):
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from exc


def _dataset_spec(args):
    spec = DatasetSpec()
    if args.config:
        spec = _apply_config(spec, parse_config(args.config))
    overrides = {}
    if args.scheme:
        overrides["scheme_tag"] = args.scheme
    if getattr(args, "modes", None):
        overrides["corrected_modes"] = _split_ints(args.modes, "--modes")
    if getattr(args, "samples", None) is not None:
        overrides["n_samples"] = args.samples
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "grid", None) is not None:
        overrides["grid_size"] = args.grid
    if getattr(args, "modality", None):
        overrides["exponent"] = MODALITY_EXPONENT[args.modality]
    spec = replace(spec, **overrides)
    _validate_spec(spec)
    return spec


def _validate_spec(spec):
    if spec.scheme_tag not in SCHEME_TAGS:
        raise UsageError(f"unknown scheme {spec.scheme_tag!r}, pick one of {SCHEME_TAGS}")
    if spec.n_samples < 1:
        raise UsageError("n_samples must be at least 1")
    if spec.grid_size < 64:
        raise UsageError("grid_size must be at least 64")
    if spec.exponent not in (2, 4, 6):
        raise UsageError("exponent must be one of 2, 4, 6")
    if any(m < 2 for m in spec.corrected_modes):
        raise UsageError("corrected modes are Noll indices >= 2")
    for name in ("sampling_range", "poisson_range", "gaussian_range",
                 "pink_range", "background_range", "structured_range"):
        lo, hi = getattr(spec, name)
        if lo > hi or lo < 0:
            raise UsageError(f"{name} must be 0 <= lo <= hi, got ({lo}, {hi})")
    if spec.max_rms < 0:
        raise UsageError("max_rms must be >= 0")
    try:
        spec.scheme()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_datagen(args):
    spec = _dataset_spec(args)
    _echo(f"generating {spec.n_samples} samples (scheme {spec.scheme_tag}, "
          f"grid {spec.grid_size}, seed {spec.seed})")
    dataset = generate_dataset(spec, log_fn=_echo)
    save_dataset(args.out, dataset)
    print(f"wrote {dataset.n} samples to {args.out}")
    return 0


def cmd_train(args):
    _require_file(args.data, "dataset")
    dataset = load_dataset(args.data)
    scheme = dataset.spec.scheme()
    hyper = Hyper()
    if args.config:
        hyper = _apply_config(hyper, parse_config(args.config))
    seed = args.seed if args.seed is not None else 0
    model = init_model(
        np.random.default_rng(seed), scheme.n_channels, scheme.n_modes,
        scheme_tag=dataset.spec.scheme_tag,
        corrected_modes=dataset.spec.corrected_modes,
    )
    log = train(model, dataset, hyper, epochs=args.epochs,
                val_fraction=args.val_fraction, seed=seed, log_fn=_echo)
    save_model(args.out, model)
    if args.history:
        _write_rows(args.history, ("epoch", "train_rms", "val_rms"), log.history)
    final = log.history[-1]
    print(f"trained {args.epochs} epochs: train_rms={final[1]:.4f} "
          f"val_rms={final[2]:.4f}; model saved to {args.out}")
    return 0


def _microscope_factory(args, specimen_seed=100):
    specimen = synth_specimen(
        np.random.default_rng(specimen_seed), "mixed", args.grid
    )
    exponent = MODALITY_EXPONENT[args.modality]
    noise = NoiseConfig(poisson_peak_counts=1000.0, gaussian_sigma=3e-3)
    if args.no_noise:
        noise = None
    seed = args.seed if args.seed is not None else 0

    def make(truth):
        return VirtualMicroscope(
            specimen, truth, exponent=exponent, noise=noise, seed=seed
        )

    return make


def cmd_correct(args):
    _require_file(args.model, "model")
    model = load_model(args.model)
    if args.scheme and args.scheme != model.scheme_tag:
        raise UsageError(
            f"model was trained for scheme {model.scheme_tag!r}, not {args.scheme!r}"
        )
    scheme = make_scheme(model.scheme_tag, model.corrected_modes)
    make = _microscope_factory(args)
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng([seed, 17])
    direction = rng.standard_normal(len(model.corrected_modes))
    direction *= args.rms / np.linalg.norm(direction)
    truth = ZernikeVector.from_modes(model.corrected_modes, direction)
    scope = make(truth)
    before = scope.evaluation_image()
    trajectory = run_mlao(scope, model, scheme, iterations=args.iterations)
    after = scope.evaluation_image()
    for i, (res, count) in enumerate(zip(trajectory.residuals, trajectory.images)):
        print(f"iteration {i}: residual_rms={res:.4f} images={count}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_pgm16(out / "before.pgm", before)
        write_pgm16(out / "after.pgm", after)
        _write_rows(
            out / "trajectory.csv",
            ("iteration", "residual_rms", "images_cum"),
            [(i, r, c) for i, (r, c) in
             enumerate(zip(trajectory.residuals, trajectory.images))],
        )
        print(f"wrote before.pgm, after.pgm, trajectory.csv to {out}")
    return 0


def cmd_compare(args):
    _require_file(args.model, "model")
    model = load_model(args.model)
    scheme = make_scheme(model.scheme_tag, model.corrected_modes)
    exponent = MODALITY_EXPONENT[args.modality]
    metric = metric_for_modality(exponent)
    estimators = {
        "mlao": MlaoEstimator(model, scheme),
        "2n+1": ConventionalEstimator(
            run_2n_plus_1, model.corrected_modes, bias=args.bias, metric_fn=metric
        ),
        "3n": ConventionalEstimator(
            run_3n, model.corrected_modes, bias=args.bias, metric_fn=metric
        ),
    }
    report = compare(
        _microscope_factory(args),
        estimators,
        trials=args.trials,
        rms_bins=_split_floats(args.bins, "--bins"),
        modes=model.corrected_modes,
        seed=args.seed if args.seed is not None else 0,
        iterations=args.iterations,
    )
    report.write_csv(args.out)
    for name in estimators:
        values = report.values("residual_rms", estimator=name, iteration=args.iterations)
        inputs = report.values("input_rms", estimator=name, iteration=0)
        print(f"{name}: mean input {inputs.mean():.3f} -> "
              f"mean residual {values.mean():.3f} over {values.size} trials")
    print(f"wrote {args.out}")
    return 0


def cmd_analyze(args):
    rows = []
    if args.model:
        _require_file(args.model, "model")
        model = load_model(args.model)
        names = ("input", "conv1", "conv2", "conv3", "conv4")
        values = layer_weight_rms(model)
        for name, value in zip(names, values):
            print(f"readout weight rms [{name}]: {value:.5f}")
            rows.append(("weight_rms", name, value))
    if args.image:
        _require_file(args.image, "image")
        frame = read_pgm(args.image)
        threshold, has_signal = spectral_threshold(frame)
        print(f"spectral threshold: {threshold:.4f} cycles/px "
              f"({'signal' if has_signal else 'no signal above noise floor'})")
        rows.append(("spectral_threshold", args.image, threshold))
    if not rows:
        raise UsageError("analyze needs --model and/or --image")
    if args.out:
        _write_rows(args.out, ("kind", "name", "value"), rows)
        print(f"wrote {args.out}")
    return 0


def cmd_sweep(args):
    _require_file(args.model, "model")
    model = load_model(args.model)
    spec = _dataset_spec(args)
    if spec.scheme_tag != model.scheme_tag:
        raise UsageError(
            f"model was trained for scheme {model.scheme_tag!r}, "
            f"config requests {spec.scheme_tag!r}"
        )
    if tuple(spec.corrected_modes) != tuple(model.corrected_modes):
        raise UsageError("model and config disagree on corrected modes")
    factors = _split_floats(args.factors, "--factors")
    if any(f <= 0 for f in factors):
        raise UsageError("sampling factors must be positive")
    rows = sampling_sweep(
        model, spec, factors, n_samples=args.samples,
        seed=args.seed if args.seed is not None else 901, log_fn=_echo,
    )
    _write_rows(
        args.out,
        ("factor", "n", "input_mean", "residual_mean", "residual_median"),
        [(r["factor"], r["n"], r["input_mean"], r["residual_mean"],
          r["residual_median"]) for r in rows],
    )
    for r in rows:
        print(f"factor {r['factor']:.2f}: input {r['input_mean']:.3f} -> "
              f"residual {r['residual_mean']:.3f}")
    print(f"wrote {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mlao",
        description="Machine-learned sensorless adaptive optics, simulated end to end.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scheme=True):
        p.add_argument("--seed", type=int, default=None, help="master seed")
        p.add_argument("--config", default=None, help="key = value config file")
        if scheme:
            p.add_argument("--scheme", choices=sorted(SCHEME_TAGS), default=None)

    p = sub.add_parser("datagen", help="synthesize a training dataset")
    common(p)
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--modes", default=None, help="corrected Noll modes, comma-separated")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--modality", choices=sorted(MODALITY_EXPONENT), default=None)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p, scheme=False)
    p.add_argument("--data", required=True, help="dataset file from datagen")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--history", default=None, help="optional loss history CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("correct", help="run iterative correction on a virtual microscope")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--iterations", type=int, default=3)
    p.add_argument("--rms", type=float, default=1.5, help="initial aberration RMS (rad)")
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--modality", choices=sorted(MODALITY_EXPONENT), default="2p")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--out", default=None, help="directory for PGM frames and CSV")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("compare", help="closed-loop shootout vs conventional methods")
    common(p, scheme=False)
    p.add_argument("--model", required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--bins", default="0.5,1.0,1.5", help="input RMS bins")
    p.add_argument("--bias", type=float, default=1.0, help="baseline probing bias")
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--modality", choices=sorted(MODALITY_EXPONENT), default="2p")
    p.add_argument("--no-noise", action="store_true")
    p.add_argument("--out", default="compare.csv")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("analyze", help="inspect a trained model or an image")
    common(p, scheme=False)
    p.add_argument("--model", default=None)
    p.add_argument("--image", default=None, help="PGM image for spectral threshold")
    p.add_argument("--out", default=None, help="optional CSV output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="residuals vs pixel sampling factor")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--factors", default="0.8,1.0,1.2,1.4")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--modes", default=None)
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--modality", choices=sorted(MODALITY_EXPONENT), default=None)
    p.add_argument("--out", default="sweep.csv")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
