"""Command-line entry point: ``rankbandit simulate | oracle | ingest``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import harness
from .ingest import DEFAULT_MIN_COUNT, LogFormatError, fit_instance, read_log
from .model import (
    ProblemInstance,
    RewardModel,
    UtilityFunction,
    random_instance,
    table1_instance,
    validate,
)
from .optimizer import SearchSpaceTooLarge
from .policies import PolicyConfig
from .rng import derive_seed

log = logging.getLogger("rankbandit")

EXIT_OK, EXIT_USAGE, EXIT_FAULT = 0, 1, 2


class ConfigError(ValueError):
    pass


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``synthetic``, ``table1``, ``table2``)."""
    p = resources.files("rankbandit") / "configs" / f"{name}.json"
    return Path(str(p))


def load_instance(spec, base_dir: Path | None = None) -> ProblemInstance:
    """Instance from an inline dict, a JSON file path, ``"table1"``, or a
    ``{"generator": "random", ...}`` recipe."""
    if isinstance(spec, str):
        if spec == "table1":
            inst = table1_instance()
        else:
            path = Path(spec)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            try:
                inst = ProblemInstance.load(path)
            except OSError as e:
                raise ConfigError(f"cannot read instance {path}: {e.strerror}") from None
            except (ValueError, KeyError, TypeError) as e:
                raise ConfigError(f"bad instance file {path}: {e}") from None
    elif isinstance(spec, dict) and spec.get("generator") == "random":
        d = dict(spec)
        d.pop("generator")
        rm = d.pop("reward_model", None)
        if rm is not None:
            d["reward_model"] = RewardModel(**rm)
        if "mu_range" in d:
            d["mu_range"] = tuple(d["mu_range"])
        try:
            inst = random_instance(d.pop("num_user_types"), d.pop("num_arms"),
                                   d.pop("num_positions"), **d)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"bad random instance recipe: {e}") from None
    elif isinstance(spec, dict):
        try:
            inst = ProblemInstance.from_dict(spec)
        except (ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"bad inline instance: {e}") from None
    else:
        raise ConfigError("instance must be an object or a file path")
    problems = validate(inst)
    if problems:
        raise ConfigError("invalid instance: " + "; ".join(problems))
    return inst


@dataclass
class ExperimentConfig:
    instance: ProblemInstance
    policies: dict[str, PolicyConfig]
    horizon: int
    seeds: list[int]
    checkpoints: list[int]
    output: Path | None

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None, horizon: int | None = None,
                  seeds: str | None = None, output: str | None = None) -> "ExperimentConfig":
        if "instance" not in d:
            raise ConfigError("config has no instance")
        inst = load_instance(d["instance"], base_dir)
        raw = d.get("policies") or []
        if not raw:
            raise ConfigError("config needs at least one policy")
        policies = {}
        for n, p in enumerate(raw):
            pid = p.get("id")
            if not pid:
                raise ConfigError(f"policy {n} has no id")
            if pid in policies:
                raise ConfigError(f"duplicate policy id {pid!r}")
            try:
                policies[pid] = PolicyConfig.from_dict(p)
            except (ValueError, TypeError) as e:
                raise ConfigError(f"policy {pid!r}: {e}") from None
        T = int(horizon if horizon is not None else d.get("horizon", 0))
        if T < 1:
            raise ConfigError("horizon must be at least 1")
        seed_list = parse_seeds(seeds, d.get("seeds", {"base": 0, "count": 1}))
        # relative outputs land in the working directory, even for bundled configs
        out = output if output is not None else d.get("output")
        if out is not None:
            out = Path(out)
        return cls(inst, policies, T, seed_list, checkpoint_schedule(d.get("checkpoints"), T),
                   out)


def parse_seeds(flag: str | None, spec) -> list[int]:
    """``--seeds`` is a comma list (``1,2,3``), ``BASE:COUNT`` or a bare COUNT
    (base taken from the config). Config seeds are a list or {base, count};
    counted seeds are ``derive_seed(base, 0..count-1)``."""
    base = spec.get("base", 0) if isinstance(spec, dict) else 0
    if flag is not None:
        try:
            if "," in flag:
                spec = [int(s) for s in flag.split(",") if s.strip()]
            elif ":" in flag:
                b, c = flag.split(":")
                spec = {"base": int(b), "count": int(c)}
            else:
                spec = {"base": base, "count": int(flag)}
        except ValueError:
            raise ConfigError(f"cannot parse --seeds {flag!r}") from None
    if isinstance(spec, list):
        seeds = [int(s) for s in spec]
    elif isinstance(spec, dict):
        seeds = [derive_seed(int(spec.get("base", 0)), k) for k in range(int(spec["count"]))]
    else:
        raise ConfigError("seeds must be a list or {base, count}")
    if not seeds:
        raise ConfigError("need at least one seed")
    return seeds


def checkpoint_schedule(spec, horizon: int) -> list[int]:
    """Geometric points plus T/2 and 0.9T (for the ratio and last-10% summaries)."""
    extra = [horizon // 2, (9 * horizon) // 10]
    if spec is None or spec == "geometric":
        return harness.geometric_checkpoints(horizon, extra)
    if isinstance(spec, list):
        pts = {int(c) for c in spec}
        if min(pts, default=1) < 1:
            raise ConfigError("checkpoints must be positive")
        # a shorter --horizon drops the listed points past it
        pts = {c for c in pts if c <= horizon}
        return sorted(pts | {c for c in extra if c >= 1} | {horizon})
    raise ConfigError("checkpoints must be 'geometric' or a list of rounds")


def summarize(traces, horizon: int, wall_clock: float) -> dict:
    half, tail = horizon // 2, (9 * horizon) // 10
    by_pid: dict[str, list] = {}
    for tr in traces:
        by_pid.setdefault(tr.policy_id, []).append(tr)
    out = {"horizon": horizon, "total_wall_clock_s": wall_clock, "policies": {}}
    for pid, trs in sorted(by_pid.items()):
        d = {
            "runs": len(trs),
            "mean_final_regret": float(np.mean([t.final.cumulative_regret for t in trs])),
            "mean_optimal_action_rate": float(np.mean([t.final.optimal_action_rate for t in trs])),
            "mean_wall_clock_s": float(np.mean([t.final.wall_clock_s for t in trs])),
        }
        if 1 <= tail < horizon:
            d["mean_optimal_action_rate_last_10pct"] = float(
                np.mean([t.window_optimal_rate(tail, horizon) for t in trs]))
        if half >= 1 and 2 * half == horizon:
            d["sublinearity"] = harness.sublinearity_check(trs, half, horizon)
        out["policies"][pid] = d
    return out


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def summary_path(out: Path) -> Path:
    return out.with_name(out.stem + ".summary.json")


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e}") from None


def cmd_simulate(args) -> int:
    path = Path(args.config)
    cfg = ExperimentConfig.from_dict(_read_json(path), path.parent, args.horizon, args.seeds,
                                     args.out)
    if cfg.output is None:
        raise ConfigError("no output path (give --out or 'output' in the config)")
    start = time.perf_counter()
    traces = harness.run_many(cfg.instance, cfg.policies, cfg.horizon, cfg.seeds,
                              cfg.checkpoints, jobs=args.jobs)
    wall = time.perf_counter() - start
    summary = summarize(traces, cfg.horizon, wall)
    # both files are written only after every run has finished
    _atomic_write(cfg.output, harness.csv_text(traces))
    _atomic_write(summary_path(cfg.output), json.dumps(summary, indent=2) + "\n")
    log.info("wrote %s (%d traces) in %.1fs", cfg.output, len(traces), wall)
    return EXIT_OK


def cmd_oracle(args) -> int:
    inst = load_instance(args.instance)
    sol = harness.solve_oracle(inst, UtilityFunction(args.utility))
    print(json.dumps(sol.to_dict(), indent=2))
    return EXIT_OK


def cmd_ingest(args) -> int:
    try:
        records = read_log(args.log)
    except OSError as e:
        raise ConfigError(f"cannot read log {args.log}: {e.strerror}") from None
    if len(records) == 0:
        log.error("no records in %s", args.log)
        return EXIT_FAULT
    N = args.types or int(records.user_type.max()) + 1
    M = args.arms or int(records.arm.max()) + 1
    K = args.positions or int(records.position.max()) + 1
    inst, report = fit_instance(records, N, M, K, args.min_count)
    if report.uncovered:
        log.warning("%d cells below %d impressions: %s", len(report.uncovered), args.min_count,
                    report.uncovered)
    if args.out:
        out = Path(args.out)
        _atomic_write(out, inst.to_json() + "\n")
        _atomic_write(out.with_name(out.stem + ".coverage.json"),
                      json.dumps(report.to_dict()) + "\n")
    else:
        print(json.dumps({"instance": inst.to_dict(), "coverage": report.to_dict()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rankbandit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run every (policy, seed) pair of an experiment config")
    s.add_argument("--config", required=True,
                   help="experiment JSON, or the name of a bundled config")
    s.add_argument("--out", help="results CSV (summary goes next to it)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--seeds", help="COUNT, BASE:COUNT or a comma list")
    s.add_argument("--horizon", type=int)
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="print the optimal rankings of an instance")
    o.add_argument("--instance", required=True, help="instance JSON or 'table1'")
    o.add_argument("--utility", choices=("utilitarian", "nash"), default="utilitarian")
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("ingest", help="fit an instance from a TSV click log")
    g.add_argument("--log", required=True)
    g.add_argument("--out", help="instance JSON (coverage report goes next to it)")
    g.add_argument("--min-count", type=int, default=DEFAULT_MIN_COUNT)
    g.add_argument("--types", type=int, help="number of user types (default: from the log)")
    g.add_argument("--arms", type=int)
    g.add_argument("--positions", type=int)
    g.set_defaults(func=cmd_ingest)
    return p


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("rankbandit: %(levelname)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.INFO if verbose else logging.WARNING)
    log.propagate = False


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    _setup_logging(args.verbose)
    if getattr(args, "config", None) and not Path(args.config).exists() \
            and bundled_config(args.config).exists():
        args.config = str(bundled_config(args.config))
    if getattr(args, "jobs", 1) < 1:
        log.error("--jobs must be at least 1")
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, LogFormatError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except SearchSpaceTooLarge as e:
        log.error("%s (reduce K or use the sampled optimizer)", e)
        return EXIT_FAULT
    except (ValueError, ArithmeticError, OSError) as e:
        log.error("%s", e)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
