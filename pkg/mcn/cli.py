"""
Командная строка MCN.

Использование:
    python -m mcn synth --out data/synthetic --seed 7 --videos 50
    python -m mcn train --corpus data/synthetic --epochs 20 --checkpoint data/mcn.mcnp
    python -m mcn eval --corpus data/synthetic --checkpoint data/mcn.mcnp --split val
    python -m mcn eval --corpus data/synthetic --baseline upper_bound
    python -m mcn baseline prior --annotations train.json ...
    python -m mcn localize --corpus data/synthetic --checkpoint data/mcn.mcnp --video v07 --text "w003 w011"
    python -m mcn localize ... --fine-grained --window 6 --stride 1
    python -m mcn retrieve --corpus data/synthetic --checkpoint data/mcn.mcnp --text "w003" --k 5
    python -m mcn gradcheck [--corrupt-scale 2]

Коды выхода: 0 — успех, 1 — проверка не прошла, 2 — ошибка ввода или конфигурации,
3 — численная расходимость при обучении.
"""

import argparse
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from mcn.checkpoint import load_checkpoint, save_checkpoint
from mcn.config import (
    CORPUS_ANNOTATIONS,
    CORPUS_EMBEDDINGS,
    CORPUS_INDEX,
    CORPUS_SPLITS,
    DATA_DIR,
    LOG_LEVEL,
    RunConfig,
    load_run_config,
)
from mcn.data import SPLITS, Corpus, load_index
from mcn.errors import ConfigurationError, MCNError, TrainingDivergenceError
from mcn.evaluation import (
    BASELINES,
    ModelRanker,
    baseline_chance,
    baseline_moment_prior,
    baseline_upper_bound,
    evaluate,
    filter_by_tag,
    format_table,
    write_report,
)
from mcn.gradcheck import run_suite
from mcn.model import MomentContextNetwork
from mcn.retrieval import MomentIndex
from mcn.schemas import EvalReport, SyntheticSpec
from mcn.synthetic import generate_synthetic
from mcn.training import train, write_training_log

logger = logging.getLogger("mcn")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

DEFAULT_CHECKPOINT = DATA_DIR / "checkpoints" / "mcn.mcnp"
DEFAULT_REPORTS = DATA_DIR / "reports"
RULE = "=" * 70


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"ожидается целое ≥ 1, получено {value}")
    return number


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="[%(name)s] %(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


# ── Конфигурация из флагов ───────────────────────────────────────────

# флаг → поле RunConfig; значения None не переопределяют файл
_OVERRIDE_FIELDS = (
    "annotations", "splits", "feature_index", "embeddings", "checkpoint",
    "train_annotations", "val_annotations", "test_annotations",
    "eta", "lambda_", "margin", "lr", "batch_size", "joint_dim", "visual_hidden",
    "lstm_hidden", "epochs", "patience", "seed", "inter_negatives", "max_tokens",
    "use_global", "use_tef", "modalities", "language_free", "feature_layout",
    "finetune_embeddings", "jobs", "chance_trials",
)


def _config_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)

    paths = parent.add_argument_group("данные")
    paths.add_argument("--config", type=Path, help="Файл конфигурации key = value")
    paths.add_argument("--corpus", type=Path, help="Каталог корпуса (annotations.json, index.tsv, splits.tsv, embeddings.txt)")
    paths.add_argument("--annotations", type=Path)
    paths.add_argument("--splits", type=Path)
    paths.add_argument("--feature-index", dest="feature_index", type=Path)
    paths.add_argument("--embeddings", type=Path)
    paths.add_argument("--checkpoint", type=Path)
    paths.add_argument("--train-annotations", dest="train_annotations", type=Path)
    paths.add_argument("--val-annotations", dest="val_annotations", type=Path)
    paths.add_argument("--test-annotations", dest="test_annotations", type=Path)

    hyper = parent.add_argument_group("гиперпараметры")
    hyper.add_argument("--eta", type=float)
    hyper.add_argument("--lambda", dest="lambda_", type=float)
    hyper.add_argument("--margin", type=float)
    hyper.add_argument("--lr", type=float)
    hyper.add_argument("--batch-size", dest="batch_size", type=positive_int)
    hyper.add_argument("--joint-dim", dest="joint_dim", type=positive_int)
    hyper.add_argument("--visual-hidden", dest="visual_hidden", type=positive_int)
    hyper.add_argument("--lstm-hidden", dest="lstm_hidden", type=positive_int)
    hyper.add_argument("--epochs", type=int)
    hyper.add_argument("--patience", type=positive_int)
    hyper.add_argument("--seed", type=int)
    hyper.add_argument("--inter-negatives", dest="inter_negatives", type=int)
    hyper.add_argument("--max-tokens", dest="max_tokens", type=positive_int)
    hyper.add_argument("--jobs", type=positive_int)
    hyper.add_argument("--chance-trials", dest="chance_trials", type=positive_int)

    variants = parent.add_argument_group("варианты модели")
    variants.add_argument("--modalities", choices=["fusion", "rgb", "flow"])
    variants.add_argument("--no-global", dest="use_global", action="store_const", const=False)
    variants.add_argument("--no-tef", dest="use_tef", action="store_const", const=False)
    variants.add_argument("--language-free", dest="language_free", action="store_const", const=True)
    variants.add_argument("--finetune-embeddings", dest="finetune_embeddings", action="store_const", const=True)
    variants.add_argument("--feature-layout", dest="feature_layout", choices=["zero_fill", "compact"])
    return parent


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Значения по умолчанию < файл --config < каталог --corpus < явные флаги."""
    overrides = {name: getattr(args, name, None) for name in _OVERRIDE_FIELDS}
    corpus_dir = getattr(args, "corpus", None)
    if corpus_dir is not None:
        defaults = {
            "annotations": corpus_dir / CORPUS_ANNOTATIONS,
            "splits": corpus_dir / CORPUS_SPLITS,
            "feature_index": corpus_dir / CORPUS_INDEX,
            "embeddings": corpus_dir / CORPUS_EMBEDDINGS,
        }
        for name, path in defaults.items():
            if overrides[name] is None:
                overrides[name] = path
    return load_run_config(getattr(args, "config", None), overrides)


def load_corpus(config: RunConfig, need_embeddings: bool = True) -> Corpus:
    """Корпус по путям конфигурации: один файл + сплиты либо файл на сплит."""
    optional = [name for name in ("feature_index", "embeddings") if getattr(config, name) is not None]
    config.require_paths(*optional)
    embeddings = config.embeddings if need_embeddings else None

    per_split = {
        split: getattr(config, f"{split}_annotations")
        for split in SPLITS
        if getattr(config, f"{split}_annotations") is not None
    }
    if per_split:
        config.require_paths(*(f"{split}_annotations" for split in per_split))
        return Corpus.from_split_files(per_split, config.feature_index, embeddings)

    config.require_paths("annotations", "splits")
    return Corpus.from_files(config.annotations, config.splits, config.feature_index, embeddings)


def _checkpoint_path(config: RunConfig) -> Path:
    return Path(config.checkpoint) if config.checkpoint else DEFAULT_CHECKPOINT


def _eval_split(corpus: Corpus, requested: str | None) -> str:
    if requested:
        return requested
    # Синтетический корпус по умолчанию без test — тогда оцениваем на val
    split = "test" if corpus.records("test") else "val"
    logger.info(f"Сплит оценки не задан, используется {split}")
    return split


# ── Команды ──────────────────────────────────────────────────────────

def cmd_synth(args: argparse.Namespace) -> int:
    values = {
        "seed": args.seed,
        "num_videos": args.videos,
        "segments": args.segments,
        "feature_dim": args.feature_dim,
        "concept_vocab": args.concepts,
        "sigma": args.sigma,
        "positional_rate": args.positional_rate,
        "frames_per_segment": args.frames_per_segment,
        "queries_per_video": args.queries_per_video,
        "embedding_dim": args.embedding_dim,
        "unique_concepts": False if args.shared_concepts else None,
        "val_fraction": args.val_fraction,
        "test_fraction": args.test_fraction,
    }
    try:
        spec = SyntheticSpec.model_validate({k: v for k, v in values.items() if v is not None})
    except ValidationError as e:
        raise ConfigurationError(f"Некорректные параметры генератора: {e.errors()[0]['msg']}") from e

    corpus = generate_synthetic(spec, args.out)
    counts = {split: list(corpus.splits.values()).count(split) for split in SPLITS}
    positional = sum(1 for r in corpus.records if r.tags)

    print(RULE)
    print(f"  Синтетический корпус: {corpus.root}")
    print(RULE)
    print(f"  Видео:            {spec.num_videos}")
    print(f"  Запросов:         {len(corpus.records)} (позиционных: {positional})")
    print(f"  Сплиты (видео):   " + ", ".join(f"{s} {counts[s]}" for s in SPLITS))
    print(f"  Признаки:         {spec.feature_dim} × 2 модальности, σ = {spec.sigma}")
    print(RULE)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    corpus = load_corpus(config)
    result = train(config, corpus)

    checkpoint = _checkpoint_path(config)
    save_checkpoint(checkpoint, result.model)
    log_path = Path(args.log_file) if args.log_file else checkpoint.with_suffix(".csv")
    write_training_log(log_path, result.log)

    print(RULE)
    print("  ОБУЧЕНИЕ")
    print(RULE)
    for row in result.log:
        val = f"{row.val_r1:.4f}" if row.val_r1 is not None else "—"
        print(
            f"  epoch {row.epoch:3d}  loss {row.train_loss:.6f}  "
            f"(intra {row.intra_loss:.6f}, inter {row.inter_loss:.6f})  val R@1 {val}"
        )
    if result.best_val_r1 is not None:
        print(f"  Лучшая эпоха: {result.best_epoch} (val R@1 {result.best_val_r1:.4f})")
    if result.stopped_early:
        print("  Ранняя остановка по patience")
    print(f"  ✅ Чекпоинт: {checkpoint}")
    print(f"  ✅ Журнал:   {log_path}")
    print(RULE)
    return EXIT_OK


def _run_baseline(name: str, config: RunConfig, corpus: Corpus, records, echo: dict) -> EvalReport:
    if name == "upper_bound":
        return baseline_upper_bound(records, echo)
    if name == "chance":
        return baseline_chance(records, seed=config.seed, trials=config.chance_trials, config=echo)
    return baseline_moment_prior(corpus.records("train"), records, echo)


def cmd_eval(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    if args.baseline is None and config.checkpoint is None:
        raise ConfigurationError("Нужен --checkpoint или --baseline")

    corpus = load_corpus(config, need_embeddings=False)
    split = _eval_split(corpus, args.split)
    records = corpus.records(split)
    if args.tag:
        records = filter_by_tag(records, args.tag)
        logger.info(f"Подмножество по тегу '{args.tag}': {len(records)} запросов")

    echo = {"split": split, "tag": args.tag, **config.model_echo()}
    if args.baseline:
        report = _run_baseline(args.baseline, config, corpus, records, echo)
    else:
        model = load_checkpoint(config.checkpoint)
        echo["model"] = model.config.model_echo()
        report = evaluate(ModelRanker(model, corpus), records, jobs=config.jobs, config=echo)

    out_dir = Path(args.out)
    stem = f"{report.name}_{split}" + (f"_{args.tag}" if args.tag else "")
    write_report(report, out_dir / f"{stem}.json", out_dir / f"{stem}.txt")

    print(format_table([report]))
    print(f"\n✅ {report.num_queries} запросов, отчёт: {out_dir / stem}.json")
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    return cmd_eval(args)


def _segments_of(corpus: Corpus) -> dict[str, int]:
    return {r.video_id: r.num_segments for r in corpus.all_records()}


def _feature_corpus(config: RunConfig) -> Corpus:
    """Только индекс признаков; аннотации подмешиваются, если заданы."""
    per_split = any(getattr(config, f"{s}_annotations") for s in SPLITS)
    if (config.annotations and config.splits) or per_split:
        return load_corpus(config, need_embeddings=False)
    config.require_paths("feature_index")
    return Corpus({}, load_index(config.feature_index))


def _load_model(config: RunConfig) -> MomentContextNetwork:
    return load_checkpoint(_checkpoint_path(config))


def cmd_localize(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    model = _load_model(config)
    corpus = _feature_corpus(config)
    num_segments = args.segments or _segments_of(corpus).get(args.video)
    video = corpus.video(args.video, num_segments, modalities=tuple(model.weights))
    tokens = model.encoder.token_ids(args.text)

    if args.fine_grained:
        trace = model.fine_grained_trace(tokens, video, args.window, args.stride)
        print("window_start_frame\tdistance")
        for point in trace:
            print(f"{point.start_frame}\t{point.distance:.6f}")
        return EXIT_OK

    ranked = model.localize(tokens, video)
    limit = len(ranked) if args.top is None else args.top
    for rank, moment in enumerate(ranked[:limit], 1):
        print(f"{rank:3d}. {moment.span}  D = {moment.distance:.6f}")
    return EXIT_OK


def cmd_retrieve(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    model = _load_model(config)
    corpus = _feature_corpus(config)
    segments = _segments_of(corpus)

    video_ids = corpus.video_ids(args.split) if args.split else sorted(corpus.feature_index)
    modalities = tuple(model.weights)
    missing = corpus.missing_features(video_ids, modalities)
    if missing:
        logger.warning(f"{len(missing)} видео без признаков исключены из поиска")
    videos = [
        corpus.video(video_id, segments.get(video_id), modalities=modalities)
        for video_id in video_ids
        if video_id not in missing
    ]

    index = MomentIndex(model)
    index.build(videos)
    hits = index.search(args.text, k=args.k)
    for rank, hit in enumerate(hits, 1):
        print(f"{rank:3d}. {hit.video_id} {hit.span}  D = {hit.distance:.6f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_suite(
        instances=args.instances,
        full_loss_instances=args.full_loss_instances,
        seed=args.seed,
        tolerance=args.tolerance,
        corrupt_scale=args.corrupt_scale,
    )
    print(RULE)
    print(f"  ПРОВЕРКА ГРАДИЕНТОВ (порог {args.tolerance:g})")
    print(RULE)
    for result in results:
        mark = "✅" if result.passed else "❌"
        print(
            f"  {mark} {result.layer:<17} max rel error {result.report.max_error:.2e}  "
            f"({result.instances} экз., {result.report.checked} коорд.)"
        )
        if not result.passed:
            for coord in result.report.worst:
                print(
                    f"       {coord.name}{list(coord.index)}: analytic {coord.analytic:+.6e}, "
                    f"numeric {coord.numeric:+.6e}, rel {coord.error:.2e}"
                )
    print(RULE)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


# ── Парсер ───────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcn", description="Moment Context Network")
    parser.add_argument("--log-level", default=LOG_LEVEL, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _config_parent()

    synth = sub.add_parser("synth", help="Сгенерировать синтетический корпус")
    synth.add_argument("--out", type=Path, default=DATA_DIR / "synthetic")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--videos", type=positive_int)
    synth.add_argument("--segments", type=int, nargs="+")
    synth.add_argument("--feature-dim", type=positive_int)
    synth.add_argument("--concepts", type=positive_int)
    synth.add_argument("--sigma", type=float)
    synth.add_argument("--positional-rate", type=float)
    synth.add_argument("--frames-per-segment", type=positive_int)
    synth.add_argument("--queries-per-video", type=positive_int)
    synth.add_argument("--embedding-dim", type=positive_int)
    synth.add_argument("--shared-concepts", action="store_true", help="Концепты в видео могут повторяться")
    synth.add_argument("--val-fraction", type=float)
    synth.add_argument("--test-fraction", type=float)
    synth.set_defaults(handler=cmd_synth)

    train_cmd = sub.add_parser("train", parents=[parent], help="Обучить модель")
    train_cmd.add_argument("--log-file", type=Path, help="CSV журнал (по умолчанию рядом с чекпоинтом)")
    train_cmd.set_defaults(handler=cmd_train)

    def eval_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--split", choices=SPLITS)
        p.add_argument("--tag", help="Оценить только запросы с тегом (например, position)")
        p.add_argument("--out", type=Path, default=DEFAULT_REPORTS)

    eval_cmd = sub.add_parser("eval", parents=[parent], help="Оценить чекпоинт или базовую линию")
    eval_cmd.add_argument("--baseline", choices=BASELINES)
    eval_options(eval_cmd)
    eval_cmd.set_defaults(handler=cmd_eval)

    baseline = sub.add_parser("baseline", parents=[parent], help="Базовая линия (то же, что eval --baseline)")
    baseline.add_argument("baseline", choices=BASELINES)
    eval_options(baseline)
    baseline.set_defaults(handler=cmd_baseline)

    localize = sub.add_parser("localize", parents=[parent], help="Ранжировать интервалы одного видео")
    localize.add_argument("--text", required=True)
    localize.add_argument("--video", required=True)
    localize.add_argument("--segments", type=positive_int, help="Число сегментов (по умолчанию из аннотаций или файла)")
    localize.add_argument("--top", type=positive_int)
    localize.add_argument("--fine-grained", action="store_true")
    localize.add_argument("--window", type=positive_int, default=6, help="Окно в кадрах")
    localize.add_argument("--stride", type=positive_int, default=1, help="Шаг окна в кадрах")
    localize.set_defaults(handler=cmd_localize)

    retrieve = sub.add_parser("retrieve", parents=[parent], help="Поиск момента по всем видео")
    retrieve.add_argument("--text", required=True)
    retrieve.add_argument("--k", type=positive_int, default=5)
    retrieve.add_argument("--split", choices=SPLITS, help="Искать только среди видео сплита")
    retrieve.set_defaults(handler=cmd_retrieve)

    gradcheck = sub.add_parser("gradcheck", help="Проверить градиенты всех слоёв и лосса")
    gradcheck.add_argument("--instances", type=positive_int, default=100)
    gradcheck.add_argument("--full-loss-instances", type=positive_int, default=5)
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck.add_argument("--corrupt-scale", type=float, default=1.0,
                           help="Множитель аналитических градиентов (негативный контроль)")
    gradcheck.set_defaults(handler=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)

    try:
        return args.handler(args)
    except TrainingDivergenceError as e:
        print(f"❌ Обучение разошлось: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (MCNError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
