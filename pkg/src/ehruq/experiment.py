"""Experiment pipeline behind the command line: synth, train, evaluate, report.

Everything a command writes goes under the run directory ``cfg.out``:

    synth/         cohort.jsonl, embeddings.jsonl, concepts.tsv
    checkpoints/   <tasking>/<method>/<task or category>[-m<i>].json
    whitebox/      table1.csv, table1.json, predictions/<method>__<tasking>.jsonl
    blackbox/      table2.csv, table2.json, run.json, audit.jsonl,
                   test_sets.json, archives/<client>__<tasking>.jsonl
    manifest.json  per-command seed, config echo and output hashes
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from contextlib import ExitStack
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import decoder as dec
from .blackbox import (
    MULTI,
    SINGLE,
    ArchivedRecord,
    AuditLog,
    Generation,
    HTTPChatClient,
    ResponseSet,
    RetryPolicy,
    SamplingError,
    SamplingParams,
    ScoredRecord,
    build_prompt,
    ensemble_response_sets,
    evaluate_blackbox,
    read_archive,
    sample_responses,
    write_archive,
)
from .blackbox.tasks import TASKS, TaskSpec
from .config import ConfigError, ExperimentConfig
from .ehr_core import load_concept_dictionary, read_cohort, render_timeline, truncate_sequence
from .metrics import (
    MetricReport,
    ProbabilisticPrediction,
    read_predictions,
    read_reports_json,
    reliability_table,
    write_predictions,
    write_reports_json,
)
from .reports import (
    BLACKBOX_METRICS,
    WHITEBOX_METRICS,
    reports_to_values,
    summarize,
    summary_markdown,
    write_summary_csv,
    write_table_csv,
)
from .seeding import derive_seed
from .synth import (
    CohortConfig,
    GroundTruthOracle,
    MockBehavior,
    MockClient,
    MockServer,
    generate_cohort,
    sample_test_set,
    write_cohort_files,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class ReportSchemaError(ValueError):
    pass


@dataclass
class RunResult:
    outputs: dict[str, Path] = field(default_factory=dict)
    degraded: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.degraded


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(out: Path, command: str, cfg: ExperimentConfig | None, files: Sequence[Path]) -> Path:
    path = out / MANIFEST
    manifest = json.loads(path.read_text()) if path.exists() else {"version": 1, "runs": {}}
    manifest["runs"][command] = {
        "seed": cfg.seed if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "files": {str(p.relative_to(out)): _sha256(p) for p in sorted(files)},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def active_tasks(cfg: ExperimentConfig) -> list[TaskSpec]:
    return [t for t in TASKS.values() if t.category in cfg.categories]


# ---------------------------------------------------------------------------
# synth


def run_synth(cfg: ExperimentConfig) -> RunResult:
    s = cfg.synth
    try:
        cohort_cfg = CohortConfig(
            n_patients=s.n_patients,
            tasks=tuple(active_tasks(cfg)),
            embedding_dim=s.embedding_dim,
            latent_dim=s.latent_dim,
            vocab_size=s.vocab_size,
            events_per_patient=s.events_per_patient,
            label_signal=s.label_signal,
            prevalence_range=s.prevalence_range,
            embedding_noise=s.embedding_noise,
            seed=cfg.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg.out)
    paths = write_cohort_files(generate_cohort(cohort_cfg), out / "synth")
    update_manifest(out, "synth", cfg, list(paths.values()))
    return RunResult(outputs=dict(paths))


def _input_paths(cfg: ExperimentConfig) -> dict[str, Path]:
    synth_dir = Path(cfg.out) / "synth"
    return {
        "cohort": Path(cfg.data.cohort) if cfg.data.cohort else synth_dir / "cohort.jsonl",
        "embeddings": Path(cfg.data.embeddings) if cfg.data.embeddings else synth_dir / "embeddings.jsonl",
        "concepts": Path(cfg.data.concepts) if cfg.data.concepts else synth_dir / "concepts.tsv",
    }


def _require_file(path: Path, what: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing {what}: {path} (run `synth` first or set data.{what})")
    return path


# ---------------------------------------------------------------------------
# white-box decoders


@dataclass(frozen=True)
class TrainJob:
    tasking: str
    method: str  # baseline | deep_ensemble
    unit: str  # task id (single) or category (multi)
    member: int | None
    config: dec.DecoderConfig

    @property
    def relpath(self) -> str:
        suffix = "" if self.member is None else f"-m{self.member}"
        return f"checkpoints/{self.tasking}/{self.method}/{self.unit}{suffix}.json"


def _units(cfg: ExperimentConfig, tasking: str) -> list[tuple[str, tuple[str, ...]]]:
    tasks = active_tasks(cfg)
    if tasking == SINGLE:
        return [(t.task_id, (t.task_id,)) for t in tasks]
    return [(c, tuple(t.task_id for t in tasks if t.category == c)) for c in cfg.categories]


def plan_training(cfg: ExperimentConfig, input_dim: int) -> list[TrainJob]:
    """Checkpoints needed for the configured grid.

    MC dropout reuses the baseline decoder, so it adds no jobs of its own but
    forces the baseline ones.
    """
    w = cfg.whitebox
    d = w.decoder
    train_methods = []
    if "baseline" in w.methods or "mc_dropout" in w.methods:
        train_methods.append("baseline")
    if "deep_ensemble" in w.methods:
        train_methods.append("deep_ensemble")
    jobs = []
    for tasking in w.tasking:
        for unit, tasks in _units(cfg, tasking):
            for method in train_methods:
                members = [None] if method == "baseline" else list(range(w.ensemble_size))
                for m in members:
                    overrides = {}
                    if m is not None and w.ensemble_grid:
                        overrides = dict(w.ensemble_grid[m % len(w.ensemble_grid)])
                    try:
                        dcfg = dec.DecoderConfig(
                            tasks=tasks,
                            input_dim=input_dim,
                            task_embed_dim=d.task_embed_dim,
                            hidden_dim=d.hidden_dim,
                            dropout=d.dropout,
                            seed=derive_seed(cfg.seed, "decoder", tasking, method, unit, m),
                            learning_rate=d.learning_rate,
                            epochs=d.epochs,
                            batch_size=d.batch_size,
                            weight_decay=d.weight_decay,
                        )
                        dcfg = replace(dcfg, **overrides)
                    except (TypeError, ValueError) as exc:
                        raise ConfigError(f"decoder config: {exc}") from None
                    jobs.append(TrainJob(tasking, method, unit, m, dcfg))
    if not jobs:
        raise ConfigError("empty training grid")
    return jobs


def split_records(
    records: Sequence[dec.EmbeddingRecord], cfg: ExperimentConfig
) -> tuple[dict[str, list[dec.EmbeddingRecord]], dict[str, list[dec.EmbeddingRecord]]]:
    """Patient-level train/test split, identical for every category."""
    by_cat: dict[str, list[dec.EmbeddingRecord]] = {c: [] for c in cfg.categories}
    for r in records:
        pid, _, cat = r.record_id.rpartition("/")
        if cat in by_cat:
            by_cat[cat].append(r)
    pids = sorted({r.record_id.rpartition("/")[0] for r in records})
    need = cfg.whitebox.n_train + cfg.whitebox.n_test
    if len(pids) < need:
        raise ConfigError(f"{len(pids)} patients available, n_train + n_test = {need}")
    rng = np.random.default_rng(derive_seed(cfg.seed, "split"))
    order = [pids[i] for i in rng.permutation(len(pids))]
    train_ids = set(order[: cfg.whitebox.n_train])
    test_ids = set(order[cfg.whitebox.n_train : need])
    train = {c: [r for r in rs if r.record_id.rpartition("/")[0] in train_ids] for c, rs in by_cat.items()}
    test = {c: [r for r in rs if r.record_id.rpartition("/")[0] in test_ids] for c, rs in by_cat.items()}
    return train, test


def _load_embeddings(cfg: ExperimentConfig) -> list[dec.EmbeddingRecord]:
    path = _require_file(_input_paths(cfg)["embeddings"], "embeddings")
    records = dec.read_embeddings(path)
    if not records:
        raise ConfigError(f"{path}: no embedding records")
    return records


def _category_of(unit: str) -> str:
    return TASKS[unit].category if unit in TASKS else unit


def run_train(cfg: ExperimentConfig) -> RunResult:
    records = _load_embeddings(cfg)
    train, _ = split_records(records, cfg)
    jobs = plan_training(cfg, input_dim=len(records[0].embedding))
    out = Path(cfg.out)

    def run(job: TrainJob) -> Path:
        data = train[_category_of(job.unit)]
        model = dec.init_decoder(job.config)
        result = dec.train(model, data)
        path = out / job.relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        dec.save_checkpoint(path, result.decoder)
        log.info("trained %s (final loss %.4f)", job.relpath, result.history[-1])
        return path

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        paths = list(pool.map(run, jobs))
    update_manifest(out, "train", cfg, paths)
    return RunResult(outputs={"checkpoints": out / "checkpoints"})


def _cell_predictor(cfg: ExperimentConfig, method: str, tasking: str, unit: str):
    out = Path(cfg.out)
    base = out / "checkpoints" / tasking
    if method == "deep_ensemble":
        paths = [base / "deep_ensemble" / f"{unit}-m{i}.json" for i in range(cfg.whitebox.ensemble_size)]
        missing = [p for p in paths if not p.exists()]
        if missing:
            raise FileNotFoundError(missing[0])
        return dec.ensemble_predictor([dec.load_checkpoint(p) for p in paths])
    path = base / "baseline" / f"{unit}.json"
    if not path.exists():
        raise FileNotFoundError(path)
    model = dec.load_checkpoint(path)
    if method == "baseline":
        return dec.baseline_predictor(model)
    seed = derive_seed(cfg.seed, "mc_dropout", tasking, unit)
    return dec.mc_dropout_predictor(model, cfg.whitebox.mc_passes, seed)


def whitebox_groups(cfg: ExperimentConfig) -> list[tuple[str, str]]:
    return [(m, t) for t in cfg.whitebox.tasking for m in cfg.whitebox.methods]


def run_eval_whitebox(cfg: ExperimentConfig) -> RunResult:
    """Calibration metrics for every (method, tasking, task) cell on the test split."""
    records = _load_embeddings(cfg)
    _, test = split_records(records, cfg)
    out = Path(cfg.out)
    wdir = out / "whitebox"
    (wdir / "predictions").mkdir(parents=True, exist_ok=True)
    reports: list[MetricReport] = []
    result = RunResult()
    files = []
    for method, tasking in whitebox_groups(cfg):
        preds: list[ProbabilisticPrediction] = []
        for unit, tasks in _units(cfg, tasking):
            data = test[_category_of(unit)]
            try:
                predictor = _cell_predictor(cfg, method, tasking, unit)
            except FileNotFoundError as exc:
                msg = f"{method}/{tasking}/{unit}: missing checkpoint {exc}"
                log.error(msg)
                result.degraded.append(msg)
                continue
            cell_cfg = {"n_bins": cfg.whitebox.n_bins, "seed": cfg.seed}
            if method == "deep_ensemble":
                cell_cfg["ensemble_size"] = cfg.whitebox.ensemble_size
            if method == "mc_dropout":
                cell_cfg["mc_passes"] = cfg.whitebox.mc_passes
            reps, probs = dec.evaluate(predictor, data, tasks, method, tasking, cfg.whitebox.n_bins, cell_cfg)
            reports += reps
            for task in tasks:
                preds += [
                    ProbabilisticPrediction(r.record_id, float(p), int(r.labels[task]), task)
                    for r, p in zip(data, probs[task])
                ]
        ppath = wdir / "predictions" / f"{method}__{tasking}.jsonl"
        write_predictions(ppath, preds)
        files.append(ppath)
    order = {t: i for i, t in enumerate(TASKS)}
    reports.sort(key=lambda r: (order.get(r.task_id, len(order)), r.tasking, r.method))
    csv_path, json_path = wdir / "table1.csv", wdir / "table1.json"
    missing = write_table_csv(
        csv_path, reports, whitebox_groups(cfg), WHITEBOX_METRICS, [t.task_id for t in active_tasks(cfg)]
    )
    for cell in missing:
        msg = f"missing cell {cell}"
        if msg not in result.degraded:
            result.degraded.append(msg)
    write_reports_json(json_path, reports)
    files += [csv_path, json_path]
    update_manifest(out, "eval-whitebox", cfg, files)
    result.outputs.update({"table_csv": csv_path, "table_json": json_path, "predictions": wdir / "predictions"})
    return result


# ---------------------------------------------------------------------------
# black-box loop


def blackbox_groups(clients: Sequence[str], tasking: Sequence[str], ensemble: bool) -> list[tuple[str, str]]:
    cols = list(clients) + (["ensemble"] if ensemble and len(clients) > 1 else [])
    return [(c, t) for c in cols for t in tasking]


@dataclass(frozen=True)
class _PromptJob:
    record_id: str
    category: str
    tasking: str
    prompt: object
    truth: dict


def _build_prompt_jobs(cfg: ExperimentConfig, oracle: GroundTruthOracle | None):
    paths = _input_paths(cfg)
    sequences = read_cohort(_require_file(paths["cohort"], "cohort"))
    concepts = load_concept_dictionary(_require_file(paths["concepts"], "concepts"))
    b = cfg.blackbox
    jobs: list[_PromptJob] = []
    test_sets = {}
    for category in cfg.categories:
        specs = [t for t in active_tasks(cfg) if t.category == category]
        ids = [t.task_id for t in specs]
        draw = sample_test_set(
            sequences, ids, b.n_records, b.min_positives, derive_seed(cfg.seed, "testset", category), b.max_draws
        )
        test_sets[category] = {"draws": draw.draws, "patients": [s.patient_id for s in draw.sequences]}
        for seq in draw.sequences:
            t_k = seq.labels[ids[0]].prediction_time
            narrative = render_timeline(truncate_sequence(seq, t_k), concepts, b.token_budget, at=t_k)
            truth = {t: seq.labels[t].label for t in ids}
            if SINGLE in b.tasking:
                for spec in specs:
                    p = build_prompt(narrative, [spec], SINGLE)
                    jobs.append(_PromptJob(seq.patient_id, category, SINGLE, p, {spec.task_id: truth[spec.task_id]}))
            if MULTI in b.tasking:
                p = build_prompt(narrative, specs, MULTI)
                jobs.append(_PromptJob(seq.patient_id, category, MULTI, p, truth))
    if oracle is not None:
        for j in jobs:
            oracle.register(j.prompt, j.truth)
    return jobs, test_sets


def _make_clients(cfg: ExperimentConfig, oracle: GroundTruthOracle, audit: AuditLog, stack: ExitStack):
    b = cfg.blackbox
    retry = RetryPolicy(b.retry.max_attempts, b.retry.initial_backoff, b.retry.multiplier, b.retry.timeout)
    mocks = {
        c.name: MockClient(
            c.model or c.name,
            MockBehavior(
                c.accuracy_signal,
                c.noise_temperature,
                c.invalid_rate,
                derive_seed(cfg.seed, "mock", c.name) if c.seed is None else c.seed,
            ),
            oracle,
        )
        for c in b.clients
        if c.kind == "mock"
    }
    server = None
    if mocks and b.serve_mocks:
        server = stack.enter_context(MockServer({m.name: m for m in mocks.values()}))
    clients = {}
    for c in b.clients:
        if c.kind == "mock" and server is None:
            clients[c.name] = mocks[c.name]
            continue
        base_url = server.base_url if c.kind == "mock" else c.base_url
        client = HTTPChatClient(
            c.name,
            model=c.model or c.name,
            base_url=base_url,
            api_key_env=None if c.kind == "mock" else c.api_key_env,
            retry=retry,
            max_in_flight=b.max_in_flight,
            requests_per_second=b.requests_per_second,
            audit=audit,
        )
        clients[c.name] = stack.enter_context(client)
    return clients


def _failed_set(prompt, client: str, n: int, err: str) -> ResponseSet:
    gens = [Generation(client, None, {}, err)] * n
    return ResponseSet.from_generations(prompt.fingerprint, prompt.task_ids, prompt.mode, gens)


def score_archives(archive_dir: Path, run_info: dict) -> list[MetricReport]:
    """Table-2 reports computed purely from archived generations."""
    clients, tasking = run_info["clients"], run_info["tasking"]
    per_client: dict[tuple[str, str], list[ArchivedRecord]] = {}
    for c in clients:
        for t in tasking:
            per_client[(c, t)] = read_archive(archive_dir / f"{c}__{t}.jsonl")
    reports: list[MetricReport] = []
    config = {"n_responses": run_info["n_responses"]}
    for (c, t), recs in per_client.items():
        scored = [ScoredRecord(r.response_set, r.truth) for r in recs]
        reports += evaluate_blackbox(scored, c, t, config)
    if run_info.get("ensemble") and len(clients) > 1:
        for t in tasking:
            groups = zip(*(per_client[(c, t)] for c in clients))
            scored = []
            for members in groups:
                if len({(m.record_id, m.response_set.fingerprint) for m in members}) != 1:
                    raise ReportSchemaError("client archives are not aligned record by record")
                rs = ensemble_response_sets([m.response_set for m in members])
                scored.append(ScoredRecord(rs, members[0].truth))
            reports += evaluate_blackbox(scored, "ensemble", t, {**config, "members": list(clients)})
    order = {task: i for i, task in enumerate(TASKS)}
    reports.sort(key=lambda r: order.get(r.task_id, len(order)))
    return reports


def _write_blackbox_tables(out: Path, bdir: Path, reports, run_info, tasks) -> list[Path]:
    groups = blackbox_groups(run_info["clients"], run_info["tasking"], run_info.get("ensemble", False))
    csv_path, json_path = bdir / "table2.csv", bdir / "table2.json"
    write_table_csv(csv_path, reports, groups, BLACKBOX_METRICS, tasks)
    write_reports_json(json_path, reports)
    return [csv_path, json_path]


def run_eval_blackbox(cfg: ExperimentConfig, replay: str | Path | None = None) -> RunResult:
    """Sample, archive and score every (client, tasking) column.

    With ``replay`` pointing at an earlier ``blackbox`` directory no client
    is created: the archives there are re-parsed and re-scored.
    """
    out = Path(cfg.out)
    bdir = out / "blackbox"
    bdir.mkdir(parents=True, exist_ok=True)
    audit = AuditLog(full_bodies=cfg.blackbox.audit_full_bodies)
    result = RunResult()
    tasks = [t.task_id for t in active_tasks(cfg)]

    if replay is not None:
        src = Path(replay)
        if (src / "blackbox" / "run.json").exists():
            src = src / "blackbox"
        if not (src / "run.json").exists():
            raise ConfigError(f"{replay}: no run.json, not a black-box output directory")
        run_info = json.loads((src / "run.json").read_text())
        audit.record("replay", source=str(src))
        reports = score_archives(src / "archives", run_info)
        files = _write_blackbox_tables(out, bdir, reports, run_info, run_info.get("tasks", tasks))
        audit.write_jsonl(bdir / "audit.jsonl")
        update_manifest(out, "eval-blackbox-replay", cfg, files)
        result.outputs.update({"table_csv": files[0], "table_json": files[1], "audit": bdir / "audit.jsonl"})
        return result

    b = cfg.blackbox
    oracle = GroundTruthOracle()
    jobs, test_sets = _build_prompt_jobs(cfg, oracle)
    run_info = {
        "clients": [c.name for c in b.clients],
        "tasking": list(b.tasking),
        "ensemble": b.ensemble,
        "n_responses": b.n_responses,
        "tasks": tasks,
    }
    archive_dir = bdir / "archives"
    archive_dir.mkdir(exist_ok=True)
    files = []
    with ExitStack() as stack:
        clients = _make_clients(cfg, oracle, audit, stack)
        for name, client in clients.items():
            for tasking in b.tasking:
                cell_jobs = [j for j in jobs if j.tasking == tasking]

                def sample(job: _PromptJob, client=client, name=name) -> ArchivedRecord:
                    params = SamplingParams(
                        temperature=b.temperature, seed=derive_seed(cfg.seed, name, job.prompt.fingerprint)
                    )
                    try:
                        rs = sample_responses(client, job.prompt, b.n_responses, params, use_n=b.use_n)
                    except SamplingError as exc:
                        msg = f"{name}/{tasking}/{job.record_id}: {exc}"
                        log.error(msg)
                        result.degraded.append(msg)
                        rs = _failed_set(job.prompt, name, b.n_responses, str(exc))
                    return ArchivedRecord(
                        job.record_id, job.category, name, tasking, job.truth, rs, job.prompt.text
                    )

                with ThreadPoolExecutor(max_workers=b.max_in_flight) as pool:
                    archived = list(pool.map(sample, cell_jobs))
                path = archive_dir / f"{name}__{tasking}.jsonl"
                write_archive(path, archived)
                files.append(path)
                errors = sum(a.response_set.errors for a in archived)
                if errors:
                    result.degraded.append(f"{name}/{tasking}: {errors} failed generations")

    (bdir / "run.json").write_text(json.dumps(run_info, indent=2, sort_keys=True) + "\n")
    (bdir / "test_sets.json").write_text(json.dumps(test_sets, indent=2, sort_keys=True) + "\n")
    audit.write_jsonl(bdir / "audit.jsonl")
    reports = score_archives(archive_dir, run_info)
    files += _write_blackbox_tables(out, bdir, reports, run_info, tasks)
    files += [bdir / "run.json", bdir / "test_sets.json"]
    update_manifest(out, "eval-blackbox", cfg, files)
    result.outputs.update(
        {"table_csv": bdir / "table2.csv", "table_json": bdir / "table2.json", "archives": archive_dir,
         "audit": bdir / "audit.jsonl"}
    )
    return result


# ---------------------------------------------------------------------------
# report


def _load_report_file(path: Path) -> list[MetricReport]:
    if not path.exists():
        raise ConfigError(f"{path}: no such report")
    try:
        return read_reports_json(path)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ReportSchemaError(f"{path}: not a metric report file ({exc})") from None


def reliability_exports(pred_dir: Path, out_dir: Path, n_bins: int) -> list[Path]:
    """Per prediction file: a CSV with ``n_bins`` rows per task plus a figure."""
    from .plotting import reliability_grid

    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for ppath in sorted(pred_dir.glob("*.jsonl")):
        preds = read_predictions(ppath)
        by_task: dict[str, list[ProbabilisticPrediction]] = {}
        for p in preds:
            by_task.setdefault(p.task_id or "", []).append(p)
        tables = {}
        lines = ["task_id,bin,lower,upper,count,accuracy,mean_confidence"]
        for task, rows in by_task.items():
            bins = reliability_table([r.p for r in rows], [r.y for r in rows], n_bins)
            tables[task] = bins
            for i, rb in enumerate(bins):
                acc = "" if rb.accuracy is None else repr(rb.accuracy)
                conf = "" if rb.mean_confidence is None else repr(rb.mean_confidence)
                lines.append(f"{task},{i},{rb.lower!r},{rb.upper!r},{rb.count},{acc},{conf}")
        csv_path = out_dir / f"reliability__{ppath.stem}.csv"
        csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        files.append(csv_path)
        if tables:
            files.append(reliability_grid(tables, out_dir / f"reliability__{ppath.stem}.png", ppath.stem))
    return files


def run_report(
    inputs: Sequence[str | Path],
    out: str | Path,
    predictions: str | Path | None = None,
    n_bins: int = 10,
) -> RunResult:
    """Merge one or more table JSON files into a summary with best-cell flags.

    Each input is a ``table1.json``/``table2.json`` (or a directory holding
    one). With two or more inputs the summary gains per-run delta columns
    relative to the first. If ``predictions`` is not given but a
    ``predictions/`` directory sits next to the first input, reliability
    tables and diagrams are exported from it.
    """
    from .plotting import metric_bars

    if not inputs:
        raise ConfigError("report needs at least one input")
    paths = []
    for p in map(Path, inputs):
        if p.is_dir():
            found = [q for q in (p / "table1.json", p / "table2.json") if q.exists()]
            if not found:
                raise ConfigError(f"{p}: no table1.json or table2.json inside")
            p = found[0]
        paths.append(p)
    runs = [reports_to_values(_load_report_file(p)) for p in paths]
    names = []
    for i, p in enumerate(paths):
        name = p.parent.parent.name or f"run{i + 1}"
        names.append(name if name not in names else f"{name}_{i + 1}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(runs)
    summary_csv, summary_md = out / "summary.csv", out / "summary.md"
    write_summary_csv(summary_csv, rows, names)
    summary_md.write_text(summary_markdown(rows, names), encoding="utf-8")
    files = [summary_csv, summary_md]

    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    metrics = list(dict.fromkeys(k[3] for k in runs[0]))
    for metric in metrics:
        if metric not in WHITEBOX_METRICS and metric not in BLACKBOX_METRICS:
            continue
        values: dict[str, dict[str, float | None]] = {}
        for (task, method, tasking, m), v in runs[0].items():
            if m == metric:
                values.setdefault(task, {})[f"{method}/{tasking}"] = v
        files.append(metric_bars(values, metric, figures / f"{metric}.png"))

    pred_dir = Path(predictions) if predictions else paths[0].parent / "predictions"
    if pred_dir.is_dir():
        files += reliability_exports(pred_dir, out / "reliability", n_bins)
    elif predictions:
        raise ConfigError(f"{predictions}: not a directory")
    return RunResult(outputs={"summary_csv": summary_csv, "summary_md": summary_md, "files": out})
