"""Command-line interface.

Subcommands mirror the pipeline stages (simulate, connect, caps,
reconstruct, speed), plus `run` for the whole chain, `plots` for the
plot-data bundles, and `check` for the oracle self-test suite.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 provenance mismatch.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline, storage
from .config import (PipelineConfig, desk_constant_profile, desk_lens_profile,
                     full_lens_profile, load_config)
from .errors import ConfigurationError, NumericalError, ProvenanceError


def _progress(stream):
    def cb(done, total):
        stream.write(f"\r  {done}/{total}")
        stream.flush()
        if done == total:
            stream.write("\n")
    return cb


_PROFILES = {
    "desk-constant": desk_constant_profile,
    "desk-lens": desk_lens_profile,
    "full-lens": full_lens_profile,
}


def _config_from_args(args) -> PipelineConfig:
    if getattr(args, "profile", None):
        cfg = _PROFILES[args.profile]()
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        raise ConfigurationError("provide --config FILE or --profile NAME")
    if getattr(args, "serial", False):
        cfg.threads = 1
    elif getattr(args, "threads", None):
        cfg.threads = args.threads
    return cfg


def _add_common(p):
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--profile", choices=sorted(_PROFILES),
                   help="built-in configuration profile")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--force", action="store_true",
                   help="rebuild even when outputs exist")
    p.add_argument("--threads", type=int, help="simulation worker processes")
    p.add_argument("--serial", action="store_true",
                   help="single-process execution (bitwise reproducible)")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bcwave",
        description="Boundary-control reconstruction of acoustic wave speeds "
                    "from Neumann-to-Dirichlet data.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    for name, effect in [
            ("simulate", "synthesize boundary traces for the source basis"),
            ("run", "run the whole pipeline (simulate through speed)")]:
        p = sub.add_parser(name, help=effect)
        _add_common(p)

    p = sub.add_parser("connect", help="assemble the connecting operator from traces")
    p.add_argument("--traces", required=True, help="trace directory (from simulate)")
    p.add_argument("--out", required=True, help="output file, e.g. K.bin")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--profile", choices=sorted(_PROFILES))
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("caps", help="solve the wave-cap control problems")
    p.add_argument("--K", required=True, help="connecting matrix file K.bin")
    p.add_argument("--basis", required=True, help="basis manifest basis.json")
    p.add_argument("--grid", required=True, help="reconstruction grid recon-grid.json")
    p.add_argument("--alpha", type=float, help="regularization override")
    p.add_argument("--h", type=float, help="cap height override")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--profile", choices=sorted(_PROFILES))
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("reconstruct", help="estimate the coordinate transform")
    p.add_argument("--caps", required=True, help="cap directory")
    p.add_argument("--traces", required=True, help="trace directory")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--profile", choices=sorted(_PROFILES))
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("speed", help="differentiate the transform into speeds")
    _add_common(p)

    p = sub.add_parser("plots", help="emit plot-data bundles for a finished run")
    _add_common(p)

    p = sub.add_parser("check", help="run the oracle self-check suite")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.cmd == "check":
            ok = pipeline.run_checks()
            if not ok:
                raise NumericalError("oracle checks failed")
            return 0

        if args.cmd in ("simulate", "run", "speed", "plots"):
            cfg = _config_from_args(args)
            out = Path(args.out)
            if args.cmd == "simulate":
                pipeline.stage_simulate(cfg, out, force=args.force,
                                        progress=_progress(sys.stderr))
            elif args.cmd == "run":
                pipeline.run_pipeline(cfg, out, force=args.force,
                                      progress=_progress(sys.stderr))
                pipeline.emit_plots(cfg, out)
            elif args.cmd == "speed":
                pipeline.stage_speed(cfg, out, force=args.force)
            else:
                pipeline.emit_plots(cfg, out)
            return 0

        # stage commands addressing artifact files directly; the artifact
        # directory is derived from the named inputs
        if args.cmd == "connect":
            out = Path(args.traces).parent
            cfg = _config_from_args_or_artifact(args, out)
            pipeline.stage_connect(cfg, out, force=args.force)
            return 0
        if args.cmd == "caps":
            out = Path(args.K).parent
            cfg = _config_from_args_or_artifact(args, out)
            if args.alpha is not None:
                cfg.recon.alpha = args.alpha
            if args.h is not None:
                cfg.recon.h = args.h
            pipeline.stage_caps(cfg, out, force=args.force,
                                progress=_progress(sys.stderr))
            return 0
        if args.cmd == "reconstruct":
            out = Path(args.caps).parent
            cfg = _config_from_args_or_artifact(args, out)
            pipeline.stage_reconstruct(cfg, out, force=args.force)
            return 0
        raise ConfigurationError(f"unknown command {args.cmd}")
    except ProvenanceError as exc:
        print(f"provenance error: {exc}", file=sys.stderr)
        return 4
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def _config_from_args_or_artifact(args, out: Path) -> PipelineConfig:
    if getattr(args, "config", None) or getattr(args, "profile", None):
        return _config_from_args(args)
    cfg_path = out / "config.toml"
    if cfg_path.exists():
        return load_config(cfg_path)
    raise ConfigurationError(
        "no configuration given and none recorded in the artifact directory")


if __name__ == "__main__":
    sys.exit(main())
