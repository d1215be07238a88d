"""Verified data collection, dataset aggregation, replay and evaluation.

The collection loop runs randomize -> (observe + fuse) -> prompt -> plan ->
parse -> execute -> verify for successive seeds and keeps only verified
successes. Seeds come from ``(master seed, task, attempt index)``, so results
do not depend on worker scheduling.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import dsl, perception, prompting, sim, tasks
from .model import Episode, Outcome, SftRecord, TaskId, state_digest
from .planners import (
    PlannerConfig,
    PlannerError,
    PlannerTimeout,
    RemotePlanner,
    RetriesExhausted,
    make_planner,
)

log = logging.getLogger(__name__)

DATASET_FILE = "dataset.jsonl"
MANIFEST_FILE = "manifest.json"
REPORT_JSON = "report.json"
REPORT_TXT = "report.txt"
FAILURES_FILE = "failures.jsonl"
FORMAT = "bootplan-sft/1"
SWEEP_SIZES = (500, 1000, 2000, 4000)

_EVAL_BIT = 1 << 63
_SEED_MASK = _EVAL_BIT - 1


@dataclass(frozen=True)
class TrainingRecipe:
    """Finetuning hyperparameters shipped with every dataset for an external trainer."""

    epochs: int = 5
    effective_batch_size: int = 24
    adapter: str = "lora"
    adapter_rank: int = 64
    adapter_scaling: int = 16
    learning_rate: float = 2e-5
    schedule: str = "cosine"
    objective: str = "prompt-completion"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RunConfig:
    tasks: tuple[TaskId, ...] = tasks.ALL_TASKS
    n_per_task: int = 2000
    max_attempts_per_task: Optional[int] = None
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    sim: sim.SimConfig = field(default_factory=sim.SimConfig)
    noise: Optional[perception.NoiseModel] = None
    views: int = 3
    parallel: int = 1
    seed: int = 0
    template_path: Optional[str] = None
    # abort collection after this many planner errors in a row (0 disables)
    planner_error_limit: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "tasks", tuple(TaskId(t) for t in self.tasks))
        if not self.tasks:
            raise ValueError("no tasks selected")
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("duplicate task in run config")
        if self.n_per_task < 1:
            raise ValueError("n_per_task must be >= 1")
        if self.max_attempts_per_task is None:
            object.__setattr__(self, "max_attempts_per_task", 20 * self.n_per_task)
        if self.max_attempts_per_task < self.n_per_task:
            raise ValueError("max_attempts_per_task must be >= n_per_task")
        if self.parallel < 1 or self.views < 1:
            raise ValueError("parallel and views must be >= 1")
        if self.planner_error_limit < 0:
            raise ValueError("planner_error_limit must be >= 0")

    def template(self) -> prompting.PromptTemplate:
        if self.template_path:
            return prompting.PromptTemplate.from_file(self.template_path)
        return prompting.default_template()

    def to_dict(self) -> dict:
        tmpl = self.template().text
        return {
            "tasks": [t.value for t in self.tasks],
            "n_per_task": self.n_per_task,
            "max_attempts_per_task": self.max_attempts_per_task,
            "planner": self.planner.to_dict(),
            "sim": self.sim.to_dict(),
            "noise": self.noise.to_dict() if self.noise else None,
            "views": self.views,
            "parallel": self.parallel,
            "seed": self.seed,
            "template_path": self.template_path,
            "planner_error_limit": self.planner_error_limit,
            "template_sha256": hashlib.sha256(tmpl.encode("utf-8")).hexdigest(),
        }


# -- seeds -------------------------------------------------------------------


def episode_seed(master: int, task_id, index: int, evaluation: bool = False) -> int:
    """64-bit episode seed; the top bit separates evaluation from collection."""
    tag = "eval" if evaluation else "collect"
    h = hashlib.blake2b(f"{tag}|{int(master)}|{TaskId(task_id).value}|{int(index)}".encode(),
                        digest_size=8).digest()
    s = int.from_bytes(h, "big") & _SEED_MASK
    return s | _EVAL_BIT if evaluation else s


def is_evaluation_seed(seed: int) -> bool:
    return bool(int(seed) & _EVAL_BIT)


# -- one episode -------------------------------------------------------------


def _planner_verdict(err: PlannerError) -> Outcome:
    inner = err.last if isinstance(err, RetriesExhausted) else err
    return Outcome.TIMEOUT if isinstance(inner, PlannerTimeout) else Outcome.PARSE_ERROR


def run_episode(spec, seed: int, planner, sim_config: sim.SimConfig,
                template: prompting.PromptTemplate,
                noise: Optional[perception.NoiseModel] = None,
                views: int = 3) -> tuple[Episode, Optional[SftRecord]]:
    """One randomize -> plan -> execute -> verify cycle."""
    inst = tasks.randomize(spec, seed)
    seen = inst
    if noise is not None:
        est = perception.estimate_state(inst.initial_state, noise, views, seed)
        seen = dataclasses.replace(inst, initial_state=est)
    prompt = prompting.build_prompt(template, seen)

    def episode(verdict, raw="", plan=None, trace=(), reason="", perr=None, final=None):
        return Episode(spec.task_id, seed, inst.initial_state, prompt, raw, plan, trace,
                       verdict, reason, perr, final)

    try:
        raw = planner.complete(prompt, seen)
    except PlannerError as e:
        return episode(_planner_verdict(e), reason=str(e), perr=type(e).__name__), None
    try:
        plan = dsl.parse(raw)
    except dsl.PlanParseError as e:
        return episode(Outcome.PARSE_ERROR, raw, reason=str(e.diagnostics[0])), None
    try:
        result = sim.execute(inst.initial_state, plan, sim_config)
    except sim.SimError as e:
        trace = tuple((t.index, t.digest) for t in getattr(e, "trace", ()))
        return episode(Outcome.EXECUTION_ERROR, raw, plan, trace,
                       f"command {e.index}: {type(e).__name__}: {e}"), None
    verdict = tasks.verify(inst, result.final_state, result.trace, sim_config=sim_config)
    final = state_digest(result.final_state)
    if not verdict.success:
        return episode(Outcome.TASK_FAILURE, raw, plan, result.digests, verdict.reason,
                       final=final), None
    record = SftRecord(prompt, dsl.pretty_print(plan), spec.task_id, seed, final)
    return episode(Outcome.SUCCESS, raw, plan, result.digests, final=final), record


# -- collection --------------------------------------------------------------


@dataclass
class TaskReport:
    task_id: TaskId
    attempts: int = 0
    successes: int = 0
    parse_failures: int = 0
    execution_failures: int = 0
    verification_failures: int = 0
    planner_errors: int = 0
    accepted: int = 0
    duplicates: int = 0
    wall_clock: float = 0.0
    budget_exhausted: bool = False
    digest: str = ""

    def count(self, ep: Episode) -> None:
        self.attempts += 1
        if ep.planner_error is not None:
            self.planner_errors += 1
        elif ep.verdict is Outcome.SUCCESS:
            self.successes += 1
        elif ep.verdict is Outcome.PARSE_ERROR:
            self.parse_failures += 1
        elif ep.verdict in (Outcome.EXECUTION_ERROR, Outcome.TIMEOUT):
            self.execution_failures += 1
        else:
            self.verification_failures += 1

    @property
    def acceptance_rate(self) -> float:
        return self.successes / self.attempts if self.attempts else 0.0

    def outcome_total(self) -> int:
        return (self.successes + self.parse_failures + self.execution_failures
                + self.verification_failures + self.planner_errors)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task_id"] = self.task_id.value
        d["acceptance_rate"] = self.acceptance_rate
        return d


class PlannerUnavailable(PlannerError):
    """Too many consecutive planner failures; the endpoint looks down."""


class AttemptBudgetExhausted(RuntimeError):
    def __init__(self, task_id: TaskId, accepted: int):
        super().__init__(f"{task_id.value}: attempt budget exhausted with {accepted} records")
        self.task_id = task_id
        self.accepted = accepted


@dataclass
class TaskCollection:
    task_id: TaskId
    records: list[SftRecord]
    report: TaskReport
    failures: list[Episode] = field(default_factory=list)

    def check(self) -> "TaskCollection":
        """Raise :class:`AttemptBudgetExhausted` if the collection fell short of N."""
        if self.report.budget_exhausted:
            raise AttemptBudgetExhausted(self.task_id, len(self.records))
        return self


def _make_runner(config: RunConfig, planner, template):
    def run(spec, seed):
        return run_episode(spec, seed, planner, config.sim, template, config.noise, config.views)
    return run


def collect_task(spec, config: RunConfig, planner=None,
                 template: Optional[prompting.PromptTemplate] = None,
                 keep_failures: bool = False) -> TaskCollection:
    """Collect up to ``n_per_task`` verified, deduplicated records for one task.

    Stops at N accepted records or when the attempt budget runs out; in the
    latter case ``report.budget_exhausted`` is set and the partial dataset is
    returned.
    """
    if isinstance(spec, (str, TaskId)):
        spec = tasks.task_spec(spec)
    own_planner = planner is None
    planner = planner or make_planner(config.planner)
    template = template or config.template()
    run = _make_runner(config, planner, template)
    report = TaskReport(spec.task_id)
    records: list[SftRecord] = []
    failures: list[Episode] = []
    seen: set[tuple[str, str]] = set()
    budget = config.max_attempts_per_task
    batch = max(1, config.parallel * 4)
    pool = ThreadPoolExecutor(config.parallel) if config.parallel > 1 else None
    t0 = time.perf_counter()
    streak = 0
    try:
        index = 0
        while index < budget and len(records) < config.n_per_task:
            idx = range(index, min(index + batch, budget))
            seeds = [episode_seed(config.seed, spec.task_id, i) for i in idx]
            if pool is None:
                results = (run(spec, s) for s in seeds)
            else:
                results = pool.map(lambda s: run(spec, s), seeds)
            for ep, rec in results:
                index += 1
                report.count(ep)
                streak = streak + 1 if ep.planner_error else 0
                if config.planner_error_limit and streak >= config.planner_error_limit:
                    raise PlannerUnavailable(
                        f"{spec.task_id.value}: {streak} consecutive planner errors, "
                        f"last: {ep.reason}")
                if rec is None:
                    if keep_failures:
                        failures.append(ep)
                else:
                    key = (hashlib.sha256(rec.prompt.encode()).hexdigest(),
                           hashlib.sha256(rec.completion.encode()).hexdigest())
                    if key in seen:
                        report.duplicates += 1
                    else:
                        seen.add(key)
                        records.append(rec)
                if len(records) >= config.n_per_task:
                    break
    finally:
        if pool is not None:
            pool.shutdown(wait=True, cancel_futures=True)
        if own_planner and isinstance(planner, RemotePlanner):
            planner.close()
    report.accepted = len(records)
    report.wall_clock = time.perf_counter() - t0
    report.budget_exhausted = len(records) < config.n_per_task
    report.digest = hashlib.sha256(dataset_bytes(records)).hexdigest()
    if report.budget_exhausted:
        log.warning("%s: attempt budget exhausted with %d of %d records",
                    spec.task_id.value, len(records), config.n_per_task)
    return TaskCollection(spec.task_id, records, report, failures)


# -- dataset files -----------------------------------------------------------


class AggregateError(ValueError):
    pass


def record_line(rec: SftRecord) -> str:
    return json.dumps(rec.to_json_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"


def dataset_bytes(records: Iterable[SftRecord]) -> bytes:
    return "".join(record_line(r) for r in records).encode("utf-8")


def aggregate(datasets: Sequence[TaskCollection], config: Optional[RunConfig] = None,
              recipe: TrainingRecipe = TrainingRecipe()) -> tuple[dict, bytes]:
    """Concatenate per-task datasets; returns ``(manifest, dataset bytes)``."""
    if not datasets:
        raise AggregateError("nothing to aggregate")
    ids = [d.task_id for d in datasets]
    if len(set(ids)) != len(ids):
        raise AggregateError(f"duplicate dataset ids: {[i.value for i in ids]}")
    blob = b"".join(dataset_bytes(d.records) for d in datasets)
    manifest = {
        "format": FORMAT,
        "dataset_file": DATASET_FILE,
        "dataset_sha256": hashlib.sha256(blob).hexdigest(),
        "total_records": sum(len(d.records) for d in datasets),
        "tasks": {
            d.task_id.value: {
                "records": len(d.records),
                "sha256": hashlib.sha256(dataset_bytes(d.records)).hexdigest(),
                "budget_exhausted": d.report.budget_exhausted,
            }
            for d in datasets
        },
        "training_recipe": recipe.to_dict(),
        "config": config.to_dict() if config else None,
    }
    return manifest, blob


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=False) + "\n").encode("utf-8")


def read_dataset(path) -> list[SftRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                out.append(SftRecord.from_json_dict(json.loads(line)))
    return out


def load_manifest(dataset_path) -> Optional[dict]:
    p = Path(dataset_path).with_name(MANIFEST_FILE)
    if not p.exists():
        return None
    return json.loads(p.read_text(encoding="utf-8"))


# -- run report --------------------------------------------------------------


@dataclass
class RunReport:
    tasks: list[TaskReport]
    dataset_sha256: str = ""

    @property
    def complete(self) -> bool:
        return not any(t.budget_exhausted for t in self.tasks)

    def to_dict(self) -> dict:
        return {"dataset_sha256": self.dataset_sha256,
                "tasks": [t.to_dict() for t in self.tasks]}

    def format(self) -> str:
        head = (f"{'task':<20} {'attempts':>8} {'success':>8} {'parse':>6} {'exec':>6} "
                f"{'verify':>6} {'planner':>7} {'kept':>6} {'rate':>6} {'secs':>7}")
        lines = [head, "-" * len(head)]
        for t in self.tasks:
            lines.append(
                f"{t.task_id.value:<20} {t.attempts:>8} {t.successes:>8} {t.parse_failures:>6} "
                f"{t.execution_failures:>6} {t.verification_failures:>6} {t.planner_errors:>7} "
                f"{t.accepted:>6} {t.acceptance_rate:>6.3f} {t.wall_clock:>7.2f}"
                + ("  BUDGET EXHAUSTED" if t.budget_exhausted else "")
            )
        lines.append(f"dataset sha256: {self.dataset_sha256}")
        return "\n".join(lines) + "\n"


@dataclass
class GenerateResult:
    collections: list[TaskCollection]
    manifest: dict
    report: RunReport


def generate(config: RunConfig, out_dir=None, planner=None) -> GenerateResult:
    """Collect every configured task, aggregate, and optionally write the outputs."""
    template = config.template()
    own = planner is None
    planner = planner or make_planner(config.planner)
    try:
        cols = [collect_task(tasks.task_spec(t), config, planner, template, keep_failures=True)
                for t in config.tasks]
    finally:
        if own and isinstance(planner, RemotePlanner):
            planner.close()
    manifest, blob = aggregate(cols, config)
    report = RunReport([c.report for c in cols], manifest["dataset_sha256"])
    if out_dir is not None:
        out = Path(out_dir)
        atomic_write(out / DATASET_FILE, blob)
        atomic_write(out / MANIFEST_FILE, _json_bytes(manifest))
        atomic_write(out / REPORT_JSON, _json_bytes(report.to_dict()))
        atomic_write(out / REPORT_TXT, report.format().encode("utf-8"))
        fails = "".join(
            json.dumps({"task_id": ep.task_id.value, "seed": ep.seed, "prompt": ep.prompt,
                        "completion": ep.raw_completion, "verdict": ep.verdict.value,
                        "reason": ep.reason}, ensure_ascii=False) + "\n"
            for c in cols for ep in c.failures
        )
        atomic_write(out / FAILURES_FILE, fails.encode("utf-8"))
    return GenerateResult(cols, manifest, report)


# -- replay ------------------------------------------------------------------


class ReplayError(ValueError):
    pass


class ConfigMismatch(ReplayError):
    pass


@dataclass(frozen=True)
class ReplayResult:
    verdict: tasks.Verdict
    outcome: Outcome
    instance: tasks.TaskInstance
    trace: tuple = ()
    final_state: Optional[object] = None


def replay_detailed(record: SftRecord, sim_config: sim.SimConfig,
                    recorded_sim: Optional[sim.SimConfig] = None) -> ReplayResult:
    if recorded_sim is not None and recorded_sim != sim_config:
        raise ConfigMismatch("record was produced under a different simulator config")
    inst = tasks.randomize(tasks.task_spec(record.task_id), record.seed)
    try:
        plan = dsl.parse(record.completion)
    except dsl.PlanParseError as e:
        return ReplayResult(tasks.Verdict(False, f"parse: {e.diagnostics[0]}"),
                            Outcome.PARSE_ERROR, inst)
    try:
        res = sim.execute(inst.initial_state, plan, sim_config)
    except sim.SimError as e:
        return ReplayResult(
            tasks.Verdict(False, f"execution: command {e.index}: {type(e).__name__}: {e}"),
            Outcome.EXECUTION_ERROR, inst, getattr(e, "trace", ()))
    verdict = tasks.verify(inst, res.final_state, res.trace, sim_config=sim_config)
    if verdict.success and state_digest(res.final_state) != record.verifier_digest:
        verdict = tasks.Verdict(False, "integrity: final state digest differs from the record")
    outcome = Outcome.SUCCESS if verdict.success else Outcome.TASK_FAILURE
    return ReplayResult(verdict, outcome, inst, res.trace, res.final_state)


def replay(record: SftRecord, sim_config: sim.SimConfig,
           recorded_sim: Optional[sim.SimConfig] = None) -> tasks.Verdict:
    """Rebuild the scene from ``(task_id, seed)`` and re-verify the stored completion."""
    return replay_detailed(record, sim_config, recorded_sim).verdict


def sim_config_from_manifest(manifest: Optional[dict]) -> Optional[sim.SimConfig]:
    if not manifest or not manifest.get("config"):
        return None
    return sim.SimConfig(**manifest["config"]["sim"])


# -- evaluation --------------------------------------------------------------


def wilson_interval(successes: int, n: int) -> tuple[float, float]:
    from statsmodels.stats.proportion import proportion_confint

    if n == 0:
        return (0.0, 1.0)
    lo, hi = proportion_confint(successes, n, alpha=0.05, method="wilson")
    return float(lo), float(hi)


@dataclass
class EvalRow:
    task_id: TaskId
    episodes: int
    successes: int
    outcomes: dict
    seeds: list[int] = field(repr=False, default_factory=list)
    per_episode: list[bool] = field(repr=False, default_factory=list)

    @property
    def rate(self) -> float:
        return self.successes / self.episodes if self.episodes else 0.0

    @property
    def interval(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.episodes)


@dataclass
class EvalTable:
    rows: list[EvalRow]
    planner: str
    state_mode: str
    noise: Optional[dict] = None
    wall_clock: float = 0.0

    @property
    def average(self) -> float:
        return sum(r.rate for r in self.rows) / len(self.rows)

    def row(self, task_id) -> EvalRow:
        tid = TaskId(task_id)
        return next(r for r in self.rows if r.task_id is tid)

    def to_dict(self) -> dict:
        return {
            "planner": self.planner,
            "state_mode": self.state_mode,
            "noise": self.noise,
            "rows": [
                {"task_id": r.task_id.value, "episodes": r.episodes, "successes": r.successes,
                 "success_rate": r.rate, "wilson95": list(r.interval), "outcomes": r.outcomes}
                for r in self.rows
            ],
            "average": self.average,
            "wall_clock": self.wall_clock,
        }

    def format(self) -> str:
        lines = [f"planner: {self.planner}   state: {self.state_mode}"]
        if self.noise:
            lines.append("noise: " + ", ".join(f"{k}={v}" for k, v in self.noise.items()))
        head = f"{'task':<20} {'success %':>9} {'95% CI':>15} {'episodes':>8}"
        lines += [head, "-" * len(head)]
        for r in self.rows:
            lo, hi = r.interval
            lines.append(f"{r.task_id.value:<20} {100 * r.rate:>9.1f} "
                         f"{f'[{100 * lo:.1f}, {100 * hi:.1f}]':>15} {r.episodes:>8}")
        lines.append("-" * len(head))
        lines.append(f"{'average':<20} {100 * self.average:>9.1f}")
        return "\n".join(lines) + "\n"


def assert_seeds_disjoint(collection: Iterable[int], evaluation: Iterable[int]) -> None:
    overlap = set(collection) & set(evaluation)
    if overlap:
        raise AssertionError(f"{len(overlap)} evaluation seeds also used for collection")


def evaluate(planner_config: PlannerConfig, task_ids: Iterable, episodes: int,
             config: Optional[RunConfig] = None, noisy: bool = False,
             planner=None) -> EvalTable:
    """Success rates over ``episodes`` held-out episodes per task.

    ``noisy`` feeds the planner a fused multi-view estimate instead of the
    true scene (``config.noise``, default noise model if unset). Evaluation
    seeds depend only on ``(config.seed, task, episode)``, so a truth run and
    a noisy run with the same master seed are paired.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    config = config or RunConfig()
    noise = (config.noise or perception.NoiseModel()) if noisy else None
    own = planner is None
    planner = planner or make_planner(planner_config)
    template = config.template()
    rows = []
    t0 = time.perf_counter()
    pool = ThreadPoolExecutor(config.parallel) if config.parallel > 1 else None
    try:
        for tid in task_ids:
            spec = tasks.task_spec(tid)
            seeds = [episode_seed(config.seed, tid, i, evaluation=True) for i in range(episodes)]
            if not all(is_evaluation_seed(s) for s in seeds):
                raise AssertionError("evaluation seed outside the evaluation range")

            def run(s, spec=spec):
                return run_episode(spec, s, planner, config.sim, template, noise, config.views)

            results = pool.map(run, seeds) if pool else map(run, seeds)
            outcomes: dict[str, int] = {}
            flags = []
            for ep, _ in results:
                outcomes[ep.verdict.value] = outcomes.get(ep.verdict.value, 0) + 1
                flags.append(ep.verdict is Outcome.SUCCESS)
            rows.append(EvalRow(spec.task_id, episodes, sum(flags), outcomes, seeds, flags))
    finally:
        if pool is not None:
            pool.shutdown()
        if own and isinstance(planner, RemotePlanner):
            planner.close()
    label = planner_config.kind.value
    if planner_config.kind.value == "oracle-degraded":
        label += f":{planner_config.failure_rate}"
    return EvalTable(rows, label, "noisy" if noisy else "truth",
                     noise.to_dict() if noise else None, time.perf_counter() - t0)
