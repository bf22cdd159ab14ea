"""Command-line interface: ``synth``, ``fit`` and ``eval``.

Settings come from an optional flat ``key = value`` config file
(``--config``); command-line flags override it. Exit status: 0 success
(for ``fit``: converged), 2 ``fit`` stopped at the iteration cap, 1 error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .io import days_path_for, load_irregular_tensor, load_model, save_irregular_tensor, save_model
from .prox import ConstraintKind
from .solver import (
    ConstraintSpec,
    FitOptions,
    Parafac2Error,
    Smoothness,
    compute_fit,
    compute_sparsity,
    fit,
)
from .synth import SynthConfig, generate_synthetic

log = logging.getLogger("parafac2_admm")

EXIT_OK, EXIT_ERROR, EXIT_MAX_ITERS = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    input: str | None = None
    timestamps: str | None = None
    output: str = "fit_out"
    rank: int | None = None
    nonneg: str = ""
    l0: str = ""
    l1: str = ""
    smooth: str = ""
    outer_tol: float = 1e-4
    max_outer_iters: int = 100
    admm_tol: float = 1e-3
    admm_max_iters: int = 10
    seed: int = 0
    threads: int = 1
    deterministic: bool = True
    emit_u: bool = False

    def constraint_spec(self) -> ConstraintSpec:
        kinds = {}

        def claim(name, kind):
            if name not in ("H", "W", "V"):
                raise ConfigError(f"unknown factor {name!r}; expected H, W or V")
            if name in kinds:
                raise ConfigError(f"factor {name} has more than one constraint")
            kinds[name] = kind

        for name in _split_list(self.nonneg):
            claim(name, ConstraintKind.non_negative())
        for name, value in _parse_assignments(self.l0, "l0"):
            if not value > 0:
                raise ConfigError(f"l0 threshold for {name} must be > 0")
            claim(name, ConstraintKind.l0(value))
        for name, value in _parse_assignments(self.l1, "l1"):
            if value < 0:
                raise ConfigError(f"l1 weight for {name} must be >= 0")
            claim(name, ConstraintKind.l1(value))
        return ConstraintSpec(
            on_H=kinds.get("H", ConstraintKind.none()),
            on_W=kinds.get("W", ConstraintKind.none()),
            on_V=kinds.get("V", ConstraintKind.none()),
            smoothness=_parse_smooth(self.smooth),
        )

    def fit_options(self) -> FitOptions:
        if self.rank is None:
            raise ConfigError("rank is required")
        return FitOptions(
            rank=self.rank,
            max_outer_iters=self.max_outer_iters,
            outer_tol=self.outer_tol,
            admm_max_iters=self.admm_max_iters,
            admm_tol=self.admm_tol,
            seed=self.seed,
            threads=self.threads,
            deterministic=self.deterministic,
        )


def _split_list(text):
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _parse_assignments(text, flag):
    out = []
    for item in _split_list(text):
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--{flag} expects FACTOR=VALUE, got {item!r}")
        try:
            out.append((name.strip(), float(value)))
        except ValueError:
            raise ConfigError(f"--{flag}: bad number {value!r}") from None
    return out


def _parse_smooth(text):
    items = _split_list(text)
    if not items:
        return None
    opts = {"gap_aware": False}
    for item in items:
        key, sep, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep and key in ("gap_aware", "no_gap_aware"):
            opts["gap_aware"] = key == "gap_aware"
        elif key in ("l", "n_basis"):
            opts["n_basis"] = int(value)
        elif key in ("degree", "d"):
            opts["degree"] = int(value)
        else:
            raise ConfigError(f"unknown smoothness option {item!r}")
    if "n_basis" not in opts:
        raise ConfigError("smoothness needs l=<number of basis functions>")
    return Smoothness(**opts)


# fields whose default is None
_NONE_DEFAULT_TYPES = {"rank": int, "input": str, "timestamps": str}


def _coerce(value, default, key):
    kind = _NONE_DEFAULT_TYPES.get(key, str) if default is None else type(default)
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            lowered = str(value).strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def resolve(cls, config_path, overrides):
    """Build ``cls`` from defaults, then the config file, then non-None flags."""
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    merged = {}
    if config_path:
        for key, value in read_config_file(config_path).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _coerce(value, getattr(defaults, key), key)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return cls(**{**asdict(defaults), **merged})


# ------------------------------------------------------------------ commands


def cmd_synth(cfg: SynthConfig, output) -> int:
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    tensor, truth = generate_synthetic(cfg)
    save_irregular_tensor(tensor, out / "tensor.txt")
    save_model(truth, out / "truth")
    with open(out / "synth.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=2)
    log.info("wrote %d slices, %d nonzeros to %s", tensor.n_slices, tensor.nnz, out)
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    if cfg.input is None:
        raise ConfigError("no input tensor given")
    spec = cfg.constraint_spec()
    opts = cfg.fit_options()
    days = cfg.timestamps
    if spec.smoothness is not None and spec.smoothness.gap_aware:
        needed = Path(days) if days else days_path_for(cfg.input)
        if not needed.exists():
            raise ConfigError(f"gap-aware smoothness needs the timestamp file {needed}, which is missing")
    tensor = load_irregular_tensor(cfg.input, days_path=days)
    start = time.perf_counter()
    model, trace = fit(tensor, spec, opts)
    seconds = time.perf_counter() - start

    out = Path(cfg.output)
    save_model(model, out, emit_u=cfg.emit_u)
    with open(out / "trace.json", "w") as fh:
        fh.write(trace.to_json(include_timing=not opts.deterministic) + "\n")
    fit_value = compute_fit(model, tensor)
    summary = {
        "fit": fit_value,
        "sparsity_V": compute_sparsity(model.V),
        "iterations": trace.n_iters,
        "converged": trace.converged,
        "seconds": seconds,
        "constraints": {name: str(spec.for_factor(name)) for name in ("H", "W", "V")},
        "config": asdict(cfg),
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    log.info("FIT %.6f after %d iterations (%s)", fit_value, trace.n_iters,
             "converged" if trace.converged else "iteration cap reached")
    return EXIT_OK if trace.converged else EXIT_MAX_ITERS


def cmd_eval(model_dir, tensor_path, stream=None) -> int:
    tensor = load_irregular_tensor(tensor_path)
    model = load_model(model_dir)
    if model.n_slices != tensor.n_slices or model.V.shape[0] != tensor.n_cols:
        raise Parafac2Error(
            f"model has K={model.n_slices}, J={model.V.shape[0]}; "
            f"tensor has K={tensor.n_slices}, J={tensor.n_cols}"
        )
    for k, s in enumerate(tensor.slices):
        rows = model.U(k).shape[0]
        if rows != s.n_rows:
            raise Parafac2Error(f"slice {k}: model has {rows} rows, tensor has {s.n_rows}")
    result = {"fit": compute_fit(model, tensor), "sparsity": compute_sparsity(model.V)}
    stream = sys.stdout if stream is None else stream
    stream.write(json.dumps(result) + "\n")
    return EXIT_OK


# ------------------------------------------------------------------ parsing


def build_parser():
    parser = argparse.ArgumentParser(prog="parafac2-admm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic tensor with known factors")
    p.add_argument("--config")
    p.add_argument("--output", "-o")
    p.add_argument("--K", type=int)
    p.add_argument("--J", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--rows-min", type=int)
    p.add_argument("--rows-max", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--noise", dest="noise_level", type=float)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("fit", parents=[common], help="fit a constrained PARAFAC2 model")
    p.add_argument("input", nargs="?")
    p.add_argument("--config")
    p.add_argument("--timestamps")
    p.add_argument("--output", "-o")
    p.add_argument("--rank", "-r", type=int)
    p.add_argument("--nonneg", help="comma-separated factors, e.g. H,W,V")
    p.add_argument("--l0", help="hard threshold per factor, e.g. V=49")
    p.add_argument("--l1", help="soft-threshold weight per factor, e.g. V=0.5")
    p.add_argument("--smooth", help="e.g. l=7,degree=3,gap-aware")
    p.add_argument("--outer-tol", type=float)
    p.add_argument("--max-outer-iters", type=int)
    p.add_argument("--admm-tol", type=float)
    p.add_argument("--admm-max-iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--emit-u", action=argparse.BooleanOptionalAction, default=None)

    p = sub.add_parser("eval", parents=[common], help="FIT and SPARSITY of stored factors")
    p.add_argument("model_dir")
    p.add_argument("tensor")
    return parser


_SYNTH_KEYS = ("K", "J", "rank", "rows_min", "rows_max", "density", "noise_level", "seed")


def _synth_from_args(args):
    overrides = {key: getattr(args, key) for key in _SYNTH_KEYS}
    output = args.output
    raw = {}
    if args.config:
        raw = read_config_file(args.config)
        output = output or raw.pop("output", None)
        aliases = {"noise": "noise_level"}
        raw = {aliases.get(k, k): v for k, v in raw.items()}
        unknown = set(raw) - set(_SYNTH_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
    defaults = {f.name: f.default for f in fields(SynthConfig)}
    values = dict(defaults)
    for key, value in raw.items():
        values[key] = _coerce(value, defaults[key], key)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig(**values), output or "synth_out"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.command == "synth":
            cfg, output = _synth_from_args(args)
            return cmd_synth(cfg, output)
        if args.command == "fit":
            overrides = {
                f.name: getattr(args, f.name, None) for f in fields(RunConfig)
            }
            return cmd_fit(resolve(RunConfig, args.config, overrides))
        return cmd_eval(args.model_dir, args.tensor)
    except (ValueError, OSError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
