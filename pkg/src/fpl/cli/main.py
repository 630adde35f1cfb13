"""``fpl run`` / ``fpl validate``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from fpl.cli.config import load_configs, resolve
from fpl.errors import ConfigError, FplError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fpl", description="Run frequency-principle scenarios from JSON configs.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario or a batch file")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, default=None, help="output directory (default: config's output_dir or ./fpl-out)")
    run.add_argument("--seed", type=int, default=None, help="override the sampling seed")
    run.add_argument("--paper-scale", action="store_true", help="use the large network widths")
    run.add_argument("--jobs", type=int, default=1, help="run independent scenarios concurrently")
    run.add_argument("--no-plots", action="store_true", help="skip SVG rendering")
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config", type=Path)
    return p


def _run_one(cfg, out_dir: str, plots: bool):
    from fpl.cli.scenarios import run_scenario

    man = run_scenario(cfg, out_dir, plots=plots)
    return man.label, man.out_dir, len(man.files)


def _classify(exc: BaseException) -> int:
    cause = getattr(exc, "cause", exc)
    return EXIT_CONFIG if isinstance(cause, ConfigError) else EXIT_NUMERIC


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        configs = load_configs(args.config)
        if args.command == "run" and args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        resolved = [resolve(c, seed=getattr(args, "seed", None), paper_scale=getattr(args, "paper_scale", False))
                    for c in configs]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        for c in resolved:
            print(f"ok: {c.label} ({c.scenario})")
        return EXIT_OK

    base = args.out or Path(resolved[0].output_dir or "fpl-out")
    batch = len(resolved) > 1
    targets = [str(base / c.label) if batch else str(base) for c in resolved]
    plots = not args.no_plots
    code = EXIT_OK
    if args.jobs > 1 and batch:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_one, c, t, plots) for c, t in zip(resolved, targets)]
            for c, fut in zip(resolved, futures):
                try:
                    label, out, nfiles = fut.result()
                    print(f"done: {label} -> {out} ({nfiles} files)")
                except FplError as exc:
                    print(f"failed: {c.label}: {exc}", file=sys.stderr)
                    code = max(code, _classify(exc))
        return code
    for c, t in zip(resolved, targets):
        try:
            label, out, nfiles = _run_one(c, t, plots)
            print(f"done: {label} -> {out} ({nfiles} files)")
        except FplError as exc:
            print(f"failed: {c.label}: {exc}", file=sys.stderr)
            code = max(code, _classify(exc))
    return code


if __name__ == "__main__":
    sys.exit(main())
