"""
Абляции на синтетическом корпусе: варианты лосса, признаков, модальностей и модель без текста.

Генерирует корпус с заложенными ответами, обучает каждый вариант с одним сидом
и печатает таблицу val R@1 / R@5 / mIoU. Варианты full и no_tef ещё раз обучаются
на корпусе с повторяющимися концептами, где считается R@1 на позиционных запросах.
Настройки модели по умолчанию берутся из mcn.harness. В конце — порог R@1 полной
модели и проверки ожидаемого порядка вариантов.

Использование:
    python -m scripts.ablations                          # все варианты
    python -m scripts.ablations --only full intra_only   # выборочно
    python -m scripts.ablations --videos 100 --epochs 10 --lstm-hidden 64
"""

import argparse
import logging
import sys
import tempfile
import time
from pathlib import Path

# UTF-8 для Windows
sys.stdout.reconfigure(encoding="utf-8")

# Корень проекта
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from mcn.config import RunConfig
from mcn.data import Corpus
from mcn.evaluation import ModelRanker, evaluate, filter_by_tag
from mcn.harness import POSITION_VARIANTS, VARIANTS, harness_config, ordering_checks, position_spec
from mcn.schemas import SyntheticSpec
from mcn.synthetic import POSITION_TAG, generate_synthetic
from mcn.training import train


def position_r1(config: RunConfig, corpus: Corpus) -> float | None:
    """R@1 на позиционных val-запросах после обучения на позиционном корпусе; None, если их нет."""
    position = filter_by_tag(corpus.records("val"), POSITION_TAG)
    if not position:
        return None
    result = train(config, corpus)
    return evaluate(ModelRanker(result.model, corpus), position, jobs=config.jobs).metrics.r1


def run_variant(name: str, config: RunConfig, corpus: Corpus, position_corpus: Corpus | None = None) -> dict:
    start_time = time.time()
    result = train(config, corpus)
    report = evaluate(ModelRanker(result.model, corpus), corpus.records("val"), jobs=config.jobs)
    return {
        "name": name,
        "r1": report.metrics.r1,
        "r5": report.metrics.r5,
        "miou": report.metrics.miou,
        "position_r1": position_r1(config, position_corpus) if position_corpus else None,
        "best_epoch": result.best_epoch,
        "elapsed": time.time() - start_time,
    }


def print_table(rows: list[dict]) -> None:
    print(f"{'=' * 70}")
    print(f"  {'Вариант':<15} {'R@1':>7} {'R@5':>7} {'mIoU':>7} {'pos R@1':>8} {'эпоха':>6} {'время':>7}")
    print(f"{'-' * 70}")
    for row in rows:
        pos = f"{100 * row['position_r1']:8.2f}" if row["position_r1"] is not None else f"{'—':>8}"
        print(
            f"  {row['name']:<15} {100 * row['r1']:7.2f} {100 * row['r5']:7.2f} {100 * row['miou']:7.2f} "
            f"{pos} {row['best_epoch']:6d} {row['elapsed']:6.0f}s"
        )
    print(f"{'=' * 70}")


def check_ordering(rows: dict[str, dict]) -> bool:
    checks = ordering_checks(rows)
    print(f"\n  ПРОВЕРКИ")
    for label, ok in checks:
        print(f"    {'✅' if ok else '❌'} {label}")
    return all(ok for _, ok in checks)


def load_corpus(spec: SyntheticSpec, root: Path) -> Corpus:
    synthetic = generate_synthetic(spec, root)
    tagged = sum(POSITION_TAG in r.tags for r in synthetic.records)
    print(f"Корпус: {spec.num_videos} видео, {len(synthetic.records)} запросов, позиционных {tagged} → {root}")
    return Corpus.from_files(
        synthetic.annotations_path, synthetic.splits_path,
        synthetic.index_path, synthetic.embeddings_path,
    )


def main():
    parser = argparse.ArgumentParser(description="Абляции MCN на синтетическом корпусе")
    parser.add_argument("--only", nargs="+", choices=list(VARIANTS), default=list(VARIANTS))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--videos", type=int, default=250)
    parser.add_argument("--feature-dim", type=int, default=16)
    parser.add_argument("--sigma", type=float, default=0.1)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--joint-dim", type=int)
    parser.add_argument("--lstm-hidden", type=int)
    parser.add_argument("--visual-hidden", type=int)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", type=Path, help="Каталог корпусов (по умолчанию временный)")
    args = parser.parse_args()

    logging.basicConfig(level=logging.WARNING, format="[%(name)s] %(levelname)s: %(message)s")

    spec = SyntheticSpec(seed=args.seed, num_videos=args.videos, feature_dim=args.feature_dim, sigma=args.sigma)
    base = harness_config({
        "seed": args.seed,
        "epochs": args.epochs,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "joint_dim": args.joint_dim,
        "lstm_hidden": args.lstm_hidden,
        "visual_hidden": args.visual_hidden,
        "jobs": args.jobs,
    })

    with tempfile.TemporaryDirectory() as tmp:
        root = args.out or Path(tmp)
        corpus = load_corpus(spec, root / "synthetic")
        position_corpus = None
        if any(name in POSITION_VARIANTS for name in args.only):
            position_corpus = load_corpus(position_spec(spec), root / "synthetic_position")

        rows = {}
        for name in args.only:
            print(f"  → {name}...")
            extra = position_corpus if name in POSITION_VARIANTS else None
            rows[name] = run_variant(name, base.updated(**VARIANTS[name]), corpus, extra)

    print()
    print_table(list(rows.values()))
    ok = check_ordering(rows)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
