"""Command-line front end: ``regione {run,calibrate,compare,mask}``.

Exit codes: 0 success, 2 bad arguments or config, 1 runtime failure.
Set ``REGIONE_LOG`` to ``quiet``, ``info`` or ``debug`` for log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .avd import fit_gamma
from .errors import InvalidConfigError, RegionEError
from .metrics import latent_image, psnr, speedup, ssim
from .pipeline import RunReport, find_mask, regione_sample, vanilla_sample
from .scenario import BenchScenario
from .tensorio import write_tensor

log = logging.getLogger("regione")

_LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("REGIONE_LOG", "quiet").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load(args) -> BenchScenario:
    try:
        scenario = BenchScenario.load(args.config)
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
    except InvalidConfigError:
        raise
    except ValueError as exc:
        raise InvalidConfigError(str(exc)) from exc
    scenario.config.validate()
    return scenario


def _out_dir(args, scenario: BenchScenario) -> Path:
    out = Path(args.out) if args.out else Path(args.config).parent / scenario.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finite_or_none(x):
    if x is None or not math.isfinite(x):
        return None
    return x


def _run_fields(report: RunReport) -> dict:
    return {
        "token_steps_actual": report.token_steps_actual,
        "full_forwards": report.full_forward_count,
        "region_forwards": report.region_forward_count,
        "cached_steps": report.cached_step_count,
        "mask_edited_fraction": None if report.mask is None else report.mask.edited_fraction,
    }


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n")


def cmd_run(args) -> int:
    scenario = _load(args)
    out = _out_dir(args, scenario)
    model, seq = scenario.build()
    sampler = vanilla_sample if args.mode == "vanilla" else regione_sample
    report = sampler(model, seq, scenario.config)
    payload = {
        "mode": args.mode,
        "psnr_db": None,
        "ssim": None,
        "lpips": None,
        "token_steps_vanilla": report.token_steps_vanilla,
        **_run_fields(report),
        "token_step_speedup": report.token_steps_vanilla / report.token_steps_actual,
        "wall_seconds": report.wall_time,
        "wall_speedup": None,
        "snapshot_steps": report.snapshot_steps,
        "step_log": [r.to_dict() for r in report.step_log],
        "config": scenario.to_dict(),
    }
    _write_json(out / "report.json", payload)
    write_tensor(out / "final.latent", report.final_latent)
    if report.mask is not None:
        (out / "mask.pgm").write_bytes(report.mask.to_pgm())
    print(out / "report.json")
    return 0


def calibration_traces(scenario: BenchScenario, num_traces: int) -> list[list[float]]:
    """Edited-region velocity norms of ``num_traces`` vanilla runs, seeds ``seed .. seed+n-1``."""
    truth = scenario.truth_grid().reshape(-1)
    rows = np.flatnonzero(truth) if truth.any() else np.arange(truth.size)
    traces = []
    for k in range(num_traces):
        model, seq = scenario.with_seed(scenario.seed + k).build()
        traces.append(vanilla_sample(model, seq, scenario.config, norm_rows=rows).velocity_norms)
    return traces


def cmd_calibrate(args) -> int:
    if args.traces < 1:
        raise InvalidConfigError("--traces must be at least 1")
    scenario = _load(args)
    out = _out_dir(args, scenario)
    traces = calibration_traces(scenario, args.traces)
    table = fit_gamma(traces, scenario.config.schedule())
    path = out / "gamma.tsv"
    path.write_text(table.to_text())
    print(path)
    return 0


def compare_payload(scenario: BenchScenario, base: RunReport, fast: RunReport) -> dict:
    identical = bool(np.array_equal(base.final_latent, fast.final_latent))
    p = psnr(fast.final_latent, base.final_latent)
    h, w = scenario.grid
    s = None
    if min(h, w) >= 11:
        s = ssim(latent_image(fast.final_latent, scenario.grid), latent_image(base.final_latent, scenario.grid))
    u = fast.mask.unedited_index
    p_u = psnr(fast.final_latent[u], base.final_latent[u]) if len(u) else None
    tok, wall = speedup(fast, base)
    return {
        "identical": identical,
        "psnr_db": _finite_or_none(p),
        "unedited_psnr_db": _finite_or_none(p_u),
        "unedited_identical": p_u is not None and math.isinf(p_u),
        "ssim": s,
        "lpips": None,
        "token_steps_vanilla": base.token_steps_actual,
        **_run_fields(fast),
        "token_step_speedup": tok,
        "wall_seconds": fast.wall_time,
        "wall_seconds_vanilla": base.wall_time,
        "wall_speedup": wall,
        "step_log": {
            "vanilla": [r.to_dict() for r in base.step_log],
            "regione": [r.to_dict() for r in fast.step_log],
        },
        "config": scenario.to_dict(),
    }


def cmd_compare(args) -> int:
    scenario = _load(args)
    out = _out_dir(args, scenario)
    model, seq = scenario.build()
    base = vanilla_sample(model, seq, scenario.config)
    fast = regione_sample(model, seq, scenario.config)
    _write_json(out / "compare.json", compare_payload(scenario, base, fast))
    (out / "mask.pgm").write_bytes(fast.mask.to_pgm())
    write_tensor(out / "vanilla.latent", base.final_latent)
    write_tensor(out / "regione.latent", fast.final_latent)
    print(out / "compare.json")
    return 0


def cmd_mask(args) -> int:
    scenario = _load(args)
    out = _out_dir(args, scenario)
    model, seq = scenario.build()
    mask = find_mask(model, seq, scenario.config)
    (out / "mask.pgm").write_bytes(mask.to_pgm())
    print(f"{out / 'mask.pgm'} edited_fraction={mask.edited_fraction:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regione", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario INI file")
        p.add_argument("--out", help="output directory (default: [scenario] out next to the config)")
        p.add_argument("--seed", type=int, help="override the scenario seed")

    p = sub.add_parser("run", help="run one sampler and write report.json + final.latent")
    common(p)
    p.add_argument("--mode", choices=("vanilla", "regione"), default="regione")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="fit a gamma table from vanilla runs")
    common(p)
    p.add_argument("--traces", type=int, default=4)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compare", help="run vanilla and region-aware sampling, write compare.json")
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("mask", help="write the region partition as a PGM")
    common(p)
    p.set_defaults(func=cmd_mask)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"regione: config error: {exc}", file=sys.stderr)
        return 2
    except (RegionEError, OSError, ArithmeticError, ValueError) as exc:
        print(f"regione: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
