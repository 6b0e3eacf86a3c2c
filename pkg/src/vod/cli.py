"""Command-line experiment runner.

Subcommands: ``priority-bench``, ``oracle-check``, ``train``, ``eval``, ``distill``.
Exit codes: 0 success, 1 failed check, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import oracle
from .checkpoint import load_model, save_model
from .config import ConfigError, Entry, check_sections, fill_dataclass, read_config
from .errors import InvalidArgument, VodError
from .mcqa import McqaInstance, write_predictions
from .scoring import LINEAR, FeatureSpace, ScoreModel, read_corpus, read_queries, write_corpus, write_queries
from .training import TrainConfig, generate_task, run_training
from .training.distill import build_targets, recall_at_1, run_distillation
from .training.loop import Models, evaluate, reindex
from .training.optimizer import AdamHyper, AdamState
from .training.synthetic import SyntheticConfig
from .variance import rows_to_csv, variance_table

log = logging.getLogger("vod")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class DataConfig:
    task: str = "synthetic"
    corpus: str = ""
    train: str = ""
    eval: str = ""
    evidence: str = ""


@dataclass(frozen=True)
class BenchConfig:
    n: int = 100
    k_grid: tuple = tuple(range(5, 100, 5)) + (100,)
    replicates: int = 10_000
    sigma: float = 3.0


@dataclass(frozen=True)
class DistillConfig:
    steps: int = 100
    lr: float = 0.05
    init_std: float = 0.1


def _keys(cls) -> set[str]:
    return {f.name for f in fields(cls)}


SECTIONS = {
    "data": _keys(DataConfig),
    "synthetic": _keys(SyntheticConfig),
    "train": _keys(TrainConfig),
    "bench": _keys(BenchConfig),
    "distill": _keys(DistillConfig),
}


@dataclass
class RunConfig:
    source: str = "<defaults>"
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    base_dir: Path = Path(".")
    text: str = ""


def load_run_config(path: str | None, seed: int) -> RunConfig:
    if path is None:
        return RunConfig(synthetic=SyntheticConfig(seed=seed), train=TrainConfig(seed=seed))
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {path} does not exist")
    sections = read_config(p)
    src = str(p)
    check_sections(sections, SECTIONS, src)
    get = lambda name: sections.get(name, {})  # noqa: E731
    syn_over = {} if "seed" in get("synthetic") else {"seed": seed}
    cfg = RunConfig(
        source=src,
        data=fill_dataclass(DataConfig, get("data"), src),
        synthetic=fill_dataclass(SyntheticConfig, get("synthetic"), src, **syn_over),
        train=fill_dataclass(TrainConfig, get("train"), src, seed=seed),
        bench=fill_dataclass(BenchConfig, get("bench"), src),
        distill=fill_dataclass(DistillConfig, get("distill"), src),
        base_dir=p.parent,
        text=p.read_text(encoding="utf-8"),
    )
    if cfg.data.task not in ("synthetic", "files"):
        line = get("data").get("task", Entry("", 0)).lineno
        raise ConfigError(src, line, f"unknown task {cfg.data.task!r} (expected synthetic or files)")
    return cfg


def prepare_out(out: str, force: bool) -> Path:
    path = Path(out)
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if not force:
            raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")
        if not path.is_dir():
            path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _copy_config(cfg: RunConfig, out: Path) -> None:
    if cfg.text:
        (out / "config.cfg").write_text(cfg.text, encoding="utf-8")


# -- data ------------------------------------------------------------------


@dataclass
class Dataset:
    space_corpus: object
    train: list[McqaInstance]
    eval: list[McqaInstance]


def _resolve(cfg: RunConfig, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else cfg.base_dir / p


def _read_evidence(path: Path) -> dict[str, int]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            qid, doc = line.split("\t")
            out[qid] = int(doc)
    return out


def _instances(path: Path, evidence: dict[str, int]) -> list[McqaInstance]:
    out = []
    for rec in read_queries(path):
        inst = McqaInstance.from_record(rec)
        if rec.qid in evidence:
            inst = McqaInstance(inst.question, inst.options, inst.correct_index, inst.qid, evidence[rec.qid])
        out.append(inst)
    return out


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.data.task == "synthetic":
        task = generate_task(cfg.synthetic)
        return Dataset(task.corpus, task.train, task.eval)
    for name in ("corpus", "train", "eval"):
        if not getattr(cfg.data, name):
            raise UsageError(f"[data] {name} is required when task = files")
    evidence = _read_evidence(_resolve(cfg, cfg.data.evidence)) if cfg.data.evidence else {}
    return Dataset(
        read_corpus(_resolve(cfg, cfg.data.corpus)),
        _instances(_resolve(cfg, cfg.data.train), evidence),
        _instances(_resolve(cfg, cfg.data.eval), evidence),
    )


def write_dataset(ds: Dataset, out: Path) -> None:
    write_corpus(ds.space_corpus, out / "corpus.tsv")
    write_queries([i.to_record() for i in ds.train], out / "train.tsv")
    write_queries([i.to_record() for i in ds.eval], out / "eval.tsv")
    rows = [f"{i.qid}\t{i.evidence_doc}" for i in ds.train + ds.eval if i.evidence_doc is not None]
    if rows:
        (out / "evidence.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_run_dir(run: Path) -> tuple[Dataset, TrainConfig, Models, FeatureSpace]:
    """Dataset, training config and models saved by ``train`` in ``run``."""
    for name in ("corpus.tsv", "train.tsv", "eval.tsv", "reader.ckpt"):
        if not (run / name).is_file():
            raise UsageError(f"{run} is not a training run directory (missing {name})")
    evidence = _read_evidence(run / "evidence.tsv") if (run / "evidence.tsv").is_file() else {}
    ds = Dataset(read_corpus(run / "corpus.tsv"), _instances(run / "train.tsv", evidence),
                 _instances(run / "eval.tsv", evidence))
    cfg_path = run / "config.cfg"
    train_cfg = load_run_config(str(cfg_path), 0).train if cfg_path.is_file() else TrainConfig()
    reader, indicators = load_model(run / "reader.ckpt")
    retriever = None
    if (run / "retriever.ckpt").is_file():
        retriever, _ = load_model(run / "retriever.ckpt")
    space = FeatureSpace(ds.space_corpus, indicator_terms=indicators)
    models = Models(reader, retriever, AdamState.zeros(reader.params.size),
                    None if retriever is None else AdamState.zeros(retriever.params.size))
    for m in (reader, retriever):
        if m is not None:
            m.check_space(space)
    return ds, train_cfg, models, space


# -- subcommands -------------------------------------------------------------


def cmd_priority_bench(args) -> int:
    cfg = load_run_config(args.config, args.seed)
    bench = cfg.bench
    n = args.n if args.n is not None else bench.n
    grid = tuple(int(x) for x in args.k_grid.split(",")) if args.k_grid else bench.k_grid
    reps = args.replicates if args.replicates is not None else bench.replicates
    out = prepare_out(args.out, args.force)
    rows = variance_table(n, grid, reps, args.seed, bench.sigma)
    (out / "variance.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    _copy_config(cfg, out)
    wins = {}
    for r in rows:
        if r.k < n:
            wins.setdefault(r.setting, []).append(r.self_normalized <= r.mc)
    for setting, w in wins.items():
        print(f"{setting}: self-normalized priority variance <= MC variance at {sum(w)}/{len(w)} values of K")
    print(f"wrote {out / 'variance.csv'}")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    out = prepare_out(args.out, args.force)
    results, elapsed = oracle.timed_suite(args.seed, fault=0.1 if args.inject_fault else 0.0, quick=args.quick)
    lines = [r.line() for r in results]
    lines.append(f"# {sum(r.passed for r in results)}/{len(results)} checks passed in {elapsed:.2f}s")
    report = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def cmd_train(args) -> int:
    if args.config is None:
        raise UsageError("train requires --config")
    cfg = load_run_config(args.config, args.seed)
    ds = load_dataset(cfg)
    out = prepare_out(args.out, args.force)
    _copy_config(cfg, out)
    write_dataset(ds, out)
    space = FeatureSpace(ds.space_corpus, n_indicators=cfg.train.n_indicators)
    result = run_training(cfg.train, ds.train, ds.eval, space)
    result.trace.write_csv(out / "metrics.csv")
    save_model(out / "reader.ckpt", result.models.reader, space.indicator_terms)
    if result.models.retriever is not None:
        save_model(out / "retriever.ckpt", result.models.retriever, space.indicator_terms)
    write_predictions([(i.qid, p) for i, p in zip(ds.eval, result.eval_probs)], out / "predictions.tsv")
    acc = result.final_eval_accuracy
    (out / "summary.txt").write_text(f"eval_accuracy={acc!r}\n", encoding="utf-8")
    print(f"eval accuracy {acc:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = Path(args.checkpoint)
    ds, train_cfg, models, space = load_run_dir(run)
    if args.config is not None:
        train_cfg = load_run_config(args.config, args.seed).train
    eval_set = ds.eval if args.dataset is None else _instances(Path(args.dataset), {})
    out = prepare_out(args.out, args.force)
    cache = reindex(space, eval_set, models.retriever, train_cfg)
    acc, probs = evaluate(eval_set, models, cache, train_cfg, space, args.seed)
    write_predictions([(i.qid, p) for i, p in zip(eval_set, probs)], out / "predictions.tsv")
    (out / "accuracy.txt").write_text(f"eval_accuracy={acc!r}\n", encoding="utf-8")
    print(f"eval accuracy {acc:.4f}")
    return EXIT_OK


def cmd_distill(args) -> int:
    run = Path(args.checkpoint)
    ds, train_cfg, models, space = load_run_dir(run)
    dcfg = load_run_config(args.config, args.seed).distill if args.config else DistillConfig()
    if models.retriever is None:
        raise UsageError(f"{run} has no retriever checkpoint to distill from")
    out = prepare_out(args.out, args.force)
    targets = build_targets(ds.train, models.retriever, train_cfg, space)
    student = ScoreModel.random(space, LINEAR, (args.seed, 9), std=dcfg.init_std)
    res = run_distillation(targets, student, space, dcfg.steps, AdamHyper(lr=dcfg.lr))
    save_model(out / "student.ckpt", res.student, space.indicator_terms)
    (out / "kl.csv").write_text("step,kl\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(res.kl_trace)), encoding="utf-8")
    lines = [f"kl_start={res.kl_trace[0]!r}", f"kl_end={res.kl_trace[-1]!r}"]
    if ds.eval and all(i.evidence_doc is not None for i in ds.eval):
        lines.append(f"recall_at_1_untrained={recall_at_1(student, ds.eval, space)!r}")
        lines.append(f"recall_at_1_distilled={recall_at_1(res.student, ds.eval, space)!r}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return EXIT_OK if res.kl_trace[-1] < res.kl_trace[0] else EXIT_FAIL


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vod", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, config_required: bool = False):
        p.add_argument("--config", required=config_required, help="sectioned key = value config file")
        p.add_argument("--seed", type=int, required=True, help="run seed (non-negative integer)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")

    p = sub.add_parser("priority-bench", help="estimator variance table: Monte Carlo vs priority sampling")
    common(p)
    p.add_argument("--n", type=int, help="support size (default 100)")
    p.add_argument("--k-grid", help="comma-separated sample sizes")
    p.add_argument("--replicates", type=int, help="replicates per sample size (default 10000)")
    p.set_defaults(func=cmd_priority_bench)

    p = sub.add_parser("oracle-check", help="consistency, ordering and gradient checks against exact oracles")
    common(p)
    p.add_argument("--inject-fault", action="store_true", help="perturb one density ratio (negative control)")
    p.add_argument("--quick", action="store_true", help="fewer random instances per check")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("train", help="round-based training run")
    common(p, config_required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a training run's checkpoints")
    common(p)
    p.add_argument("--checkpoint", required=True, help="run directory written by train")
    p.add_argument("--dataset", help="query file to evaluate instead of the run's eval split")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("distill", help="distill the trained proposal into a query-only retriever")
    common(p)
    p.add_argument("--checkpoint", required=True, help="run directory written by train")
    p.set_defaults(func=cmd_distill)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, InvalidArgument) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
