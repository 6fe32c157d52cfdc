"""Command-line front end: ``uwocsim {channel,ber,sim,scint}``."""

from __future__ import annotations

import argparse
import json
import sys

from .bench import (ENGINES, ScenarioConfig, preset, run_ber, run_ber_from_cache, run_channel, run_scint,
                    scint_csv)
from .errors import ConfigError, UwocError
from .link_budget import build_channel_model


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="scenario INI file")
    p.add_argument("--preset", help="built-in scenario (coastal-25m, coastal-30m, harbor-8m, harbor-10m)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one setting; repeatable")
    p.add_argument("--seed", type=int, help="seed for both the channel and the bit simulation")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwocsim", description="MIMO underwater optical link BER workbench")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("channel", help="simulate impulse responses and write a channel cache")
    _add_common(p)
    p.add_argument("--cache", required=True, help="cache file to write")

    for name, text in (("ber", "BER sweep over the requested engines"),
                       ("sim", "BER sweep with the bit-level simulator only")):
        p = sub.add_parser(name, help=text)
        _add_common(p)
        p.add_argument("--cache", help="channel cache; simulated in memory when omitted")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        if name == "ber":
            p.add_argument("--engines", help=f"comma-separated subset of {','.join(ENGINES)}")

    p = sub.add_parser("scint", help="scintillation index and log-amplitude variance versus range")
    _add_common(p)
    p.add_argument("--distances", default="25,30", help="comma-separated link ranges in metres")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    return ap


def load_config(args) -> ScenarioConfig:
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        cfg = ScenarioConfig.load(args.config)
    else:
        cfg = preset(args.preset or "coastal-25m")
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    if getattr(args, "engines", None):
        overrides["engines.engines"] = args.engines
    if args.seed is not None:
        overrides["montecarlo.mc_seed"] = str(args.seed)
        overrides["bitsim.sim_seed"] = str(args.seed)
    return cfg.updated(overrides) if overrides else cfg


def _emit(text: str, path) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _sweep(args, cfg: ScenarioConfig, engines):
    if args.cache:
        curve = run_ber_from_cache(cfg, args.cache, engines)
    else:
        ch = build_channel_model(cfg.channel_model, cfg.water_type, cfg.geometry, cfg.mc_settings)
        curve = run_ber(cfg, ch.h, engines)
    if args.out:
        curve.write(args.out)
    else:
        sys.stdout.write(curve.to_csv())
    return curve


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "channel":
            run_channel(cfg, args.cache, log=lambda s: print(s, file=sys.stderr))
            print(args.cache)
        elif args.command == "ber":
            _sweep(args, cfg, None)
        elif args.command == "sim":
            _sweep(args, cfg, ("bitsim",))
        elif args.command == "scint":
            try:
                distances = [float(d) for d in args.distances.split(",") if d.strip()]
            except ValueError as exc:
                raise ConfigError(f"bad --distances: {exc}") from exc
            _emit(scint_csv(run_scint(cfg.turbulence, distances)), args.out)
    except (UwocError, OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
