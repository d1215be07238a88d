"""Command-line entry point: generate, evaluate, replay, inspect, sweep, tasks.

Exit codes: 0 success, 1 usage or config error, 2 planner/network error,
3 attempt budget exhausted, 4 integrity failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import secrets
import sys
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import bootstrap, dsl, perception, prompting, sim, tasks
from .model import ModelError, TaskId
from .planners import PlannerConfig, PlannerError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PLANNER = 2
EXIT_BUDGET = 3
EXIT_INTEGRITY = 4

log = logging.getLogger("bootplan")


class UsageError(Exception):
    pass


class IntegrityError(Exception):
    pass


# -- config ------------------------------------------------------------------

_TOP_KEYS = {
    "tasks", "n_per_task", "max_attempts_per_task", "planner", "sim", "noise", "views",
    "parallel", "seed", "template_path", "planner_error_limit", "state", "episodes", "out",
}


def _check_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise UsageError(f"config section {section!r} must be a mapping")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise UsageError(f"unknown key(s) in {section}: {', '.join(unknown)}")


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def load_config_file(path) -> dict:
    """Read a YAML config and reject keys that do not map onto a setting."""
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise UsageError(f"config {path} is not valid YAML: {e}") from e
    data = data or {}
    _check_keys("config", data, _TOP_KEYS)
    for section, cls in (("planner", PlannerConfig), ("sim", sim.SimConfig),
                         ("noise", perception.NoiseModel)):
        if data.get(section) is not None:
            _check_keys(section, data[section], _fields(cls))
    if isinstance(data.get("sim"), dict) and isinstance(data["sim"].get("workspace"), dict):
        _check_keys("sim.workspace", data["sim"]["workspace"], {"lo", "hi"})
    return data


@dataclasses.dataclass
class Settings:
    run: bootstrap.RunConfig
    state: str
    episodes: int
    out: Optional[str]
    seed_drawn: bool


def _parse_tasks(value) -> tuple[TaskId, ...]:
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    if not value or value == ["all"]:
        return tasks.ALL_TASKS
    try:
        return tuple(TaskId(v.strip()) for v in value)
    except ValueError as e:
        names = ", ".join(t.value for t in TaskId)
        raise UsageError(f"{e}; known tasks: {names}") from e


def resolve(args: argparse.Namespace) -> Settings:
    """Merge defaults, the config file and command-line flags (flags win)."""
    data = load_config_file(args.config) if getattr(args, "config", None) else {}

    def pick(flag: str, key: str, default=None):
        v = getattr(args, flag, None)
        if v is not None:
            return v
        return data.get(key, default)

    try:
        pdata = dict(data.get("planner") or {})
        if getattr(args, "planner", None):
            flag_cfg = PlannerConfig.from_flag(args.planner)
            pdata["kind"] = flag_cfg.kind
            pdata["failure_rate"] = flag_cfg.failure_rate
        if getattr(args, "verbose", False):
            pdata["verbose"] = True
        planner = PlannerConfig(**pdata)
        sim_cfg = sim.SimConfig(**(data.get("sim") or {}))
        state = pick("state", "state", "truth")
        if state not in ("truth", "noisy"):
            raise UsageError(f"state must be truth or noisy, got {state!r}")
        noise = perception.NoiseModel(**(data.get("noise") or {})) if state == "noisy" else None
        seed = pick("seed", "seed")
        drawn = seed is None
        if drawn:
            seed = secrets.randbits(32)
        n = pick("n", "n_per_task", 2000)
        run = bootstrap.RunConfig(
            tasks=_parse_tasks(pick("tasks", "tasks", "all")),
            n_per_task=int(n),
            max_attempts_per_task=pick("max_attempts", "max_attempts_per_task"),
            planner=planner,
            sim=sim_cfg,
            noise=noise,
            views=int(data.get("views", 3)),
            parallel=int(pick("parallel", "parallel", 1)),
            seed=int(seed),
            template_path=pick("template", "template_path"),
            planner_error_limit=int(data.get("planner_error_limit", 10)),
        )
        episodes = int(pick("episodes", "episodes", 100))
    except UsageError:
        raise
    except (TypeError, ValueError, ModelError) as e:
        raise UsageError(f"invalid configuration: {e}") from e
    if run.template_path:
        try:
            run.template()
        except (OSError, prompting.PromptError) as e:
            raise UsageError(f"bad prompt template: {e}") from e
    return Settings(run, state, episodes, pick("out", "out"), drawn)


# -- commands ----------------------------------------------------------------


def _say(msg: str = "") -> None:
    print(msg, flush=True)


def _announce_seed(s: Settings) -> None:
    if s.seed_drawn:
        print(f"seed: {s.run.seed} (drawn; pass --seed {s.run.seed} to repeat)",
              file=sys.stderr, flush=True)


def cmd_generate(args) -> int:
    s = resolve(args)
    _announce_seed(s)
    out = Path(s.out or "out")
    result = bootstrap.generate(s.run, out)
    _say(result.report.format())
    _say(f"wrote {result.manifest['total_records']} records to {out / bootstrap.DATASET_FILE}")
    if not result.report.complete:
        short = [t.task_id.value for t in result.report.tasks if t.budget_exhausted]
        print(f"warning: attempt budget exhausted for {', '.join(short)}; "
              "partial dataset written", file=sys.stderr)
        return EXIT_BUDGET
    return EXIT_OK


def cmd_sweep(args) -> int:
    s = resolve(args)
    _announce_seed(s)
    out = Path(s.out or "sweep")
    try:
        sizes = [int(v) for v in args.sizes.split(",")]
    except ValueError as e:
        raise UsageError(f"bad --sizes: {args.sizes}") from e
    if not sizes or min(sizes) < 1:
        raise UsageError("sweep sizes must be positive")
    code = EXIT_OK
    for n in sizes:
        run = dataclasses.replace(s.run, n_per_task=n, max_attempts_per_task=20 * n)
        result = bootstrap.generate(run, out / f"n{n}")
        _say(f"N = {n}: {result.manifest['total_records']} records, "
             f"sha256 {result.manifest['dataset_sha256'][:16]}")
        if not result.report.complete:
            code = EXIT_BUDGET
    return code


def cmd_evaluate(args) -> int:
    s = resolve(args)
    if s.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    _announce_seed(s)
    table = bootstrap.evaluate(s.run.planner, s.run.tasks, s.episodes, s.run,
                               noisy=s.state == "noisy")
    text = table.format()
    _say(text)
    if s.out:
        out = Path(s.out)
        bootstrap.atomic_write(out / "evaluation.txt", text.encode("utf-8"))
        bootstrap.atomic_write(out / "evaluation.json",
                               (json.dumps(table.to_dict(), indent=2) + "\n").encode("utf-8"))
    return EXIT_OK


def _load_records(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such dataset: {p}")
    try:
        return bootstrap.read_dataset(p)
    except (ValueError, KeyError, ModelError) as e:
        raise IntegrityError(f"{p}: malformed record: {e}") from e


def cmd_replay(args) -> int:
    records = _load_records(args.dataset)
    manifest = bootstrap.load_manifest(args.dataset)
    recorded = bootstrap.sim_config_from_manifest(manifest)
    current = recorded or sim.SimConfig()
    if args.config:
        data = load_config_file(args.config)
        current = sim.SimConfig(**(data.get("sim") or {}))
    if args.all:
        indices = range(len(records))
    elif args.index is not None:
        if not 0 <= args.index < len(records):
            raise UsageError(f"record index {args.index} out of range (0..{len(records) - 1})")
        indices = [args.index]
    else:
        raise UsageError("pass a record index or --all")
    try:
        bad = []
        for i in indices:
            rec = records[i]
            res = bootstrap.replay_detailed(rec, current, recorded)
            status = "success" if res.verdict.success else f"FAIL ({res.verdict.reason})"
            _say(f"record {i}: {rec.task_id.value} seed={rec.seed}: {status}")
            if not args.all:
                _say(f"initial:\n{prompting.serialize_state(res.instance.initial_state)}")
                lines = rec.completion.splitlines()
                for t in res.trace:
                    cmd = lines[t.index] if t.index < len(lines) else "?"
                    _say(f"step {t.index}: {cmd} -> {t.event.value}")
                    _say(prompting.serialize_state(t.state))
            if not res.verdict.success:
                bad.append(i)
    except bootstrap.ConfigMismatch as e:
        raise UsageError(str(e)) from e
    if bad:
        print(f"replay failed for record(s): {', '.join(map(str, bad))}", file=sys.stderr)
        return EXIT_INTEGRITY
    return EXIT_OK


def cmd_inspect(args) -> int:
    path = Path(args.dataset)
    if not path.exists():
        raise UsageError(f"no such dataset: {path}")
    blob = path.read_bytes()
    records = _load_records(path)
    manifest = bootstrap.load_manifest(path)
    counts: dict[str, int] = {}
    for r in records:
        counts[r.task_id.value] = counts.get(r.task_id.value, 0) + 1
    _say(f"dataset: {path} ({len(records)} records)")
    if not records:
        print("warning: dataset is empty", file=sys.stderr)
    problems = []
    if manifest is None:
        problems.append(f"no {bootstrap.MANIFEST_FILE} next to the dataset")
    else:
        digest = hashlib.sha256(blob).hexdigest()
        _say(f"format: {manifest.get('format')}")
        _say(f"sha256: {digest}")
        if digest != manifest.get("dataset_sha256"):
            problems.append("dataset sha256 does not match the manifest")
        if manifest.get("total_records") != len(records):
            problems.append(f"manifest lists {manifest.get('total_records')} records, "
                            f"file has {len(records)}")
        for tid, entry in manifest.get("tasks", {}).items():
            if entry.get("records") != counts.get(tid, 0):
                problems.append(f"{tid}: manifest {entry.get('records')} vs file "
                                f"{counts.get(tid, 0)}")
    report_path = path.with_name(bootstrap.REPORT_JSON)
    stats = {}
    if report_path.exists():
        stats = {t["task_id"]: t for t in json.loads(report_path.read_text())["tasks"]}
    _say(f"{'task':<20} {'records':>8} {'attempts':>9} {'accept':>7}")
    for tid in sorted(set(counts) | set(stats)):
        st = stats.get(tid, {})
        rate = st.get("acceptance_rate")
        _say(f"{tid:<20} {counts.get(tid, 0):>8} {st.get('attempts', '-'):>9} "
             f"{(f'{rate:.3f}' if rate is not None else '-'):>7}")
    if manifest and manifest.get("training_recipe"):
        _say("training recipe: " + ", ".join(f"{k}={v}" for k, v in
                                             manifest["training_recipe"].items()))
    if problems:
        for p in problems:
            print(f"integrity: {p}", file=sys.stderr)
        return EXIT_INTEGRITY
    return EXIT_OK


def cmd_tasks(args) -> int:
    _say(json.dumps(tasks.catalog_manifest(), indent=2))
    return EXIT_OK


def cmd_grammar(args) -> int:
    _say(dsl.GRAMMAR_EBNF.strip())
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bootplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log planner traffic")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, episodes=False):
        sp.add_argument("--config", help="YAML config file; flags override it")
        sp.add_argument("--tasks", help="comma-separated task ids, or 'all'")
        sp.add_argument("--seed", type=int, help="master seed (drawn and printed if omitted)")
        sp.add_argument("--parallel", type=int, help="worker threads")
        sp.add_argument("--planner", help="remote | oracle | oracle-degraded:<rate>")
        sp.add_argument("--state", choices=("truth", "noisy"),
                        help="what the planner sees: true scene or fused noisy estimate")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--template", help="prompt template file")
        if episodes:
            sp.add_argument("--episodes", type=int, help="episodes per task")
        else:
            sp.add_argument("--n", type=int, help="accepted records per task")
            sp.add_argument("--max-attempts", type=int, dest="max_attempts",
                            help="attempt budget per task (default 20 x N)")

    g = sub.add_parser("generate", help="collect a verified dataset")
    run_flags(g)
    g.set_defaults(func=cmd_generate)

    sw = sub.add_parser("sweep", help="generate at several dataset sizes")
    run_flags(sw)
    sw.add_argument("--sizes", default=",".join(map(str, bootstrap.SWEEP_SIZES)))
    sw.set_defaults(func=cmd_sweep)

    e = sub.add_parser("evaluate", help="success-rate table on held-out seeds")
    run_flags(e, episodes=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("replay", help="re-verify dataset records")
    r.add_argument("dataset")
    r.add_argument("index", nargs="?", type=int)
    r.add_argument("--all", action="store_true")
    r.add_argument("--config", help="YAML config whose sim section to replay under")
    r.set_defaults(func=cmd_replay)

    i = sub.add_parser("inspect", help="summarize and integrity-check a dataset")
    i.add_argument("dataset")
    i.set_defaults(func=cmd_inspect)

    t = sub.add_parser("tasks", help="print the task catalog as JSON")
    t.set_defaults(func=cmd_tasks)

    gr = sub.add_parser("grammar", help="print the plan language grammar")
    gr.set_defaults(func=cmd_grammar)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except PlannerError as e:
        print(f"planner error: {e}", file=sys.stderr)
        return EXIT_PLANNER
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_INTEGRITY
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
