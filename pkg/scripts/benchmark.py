"""
Бенчмарк базовых линий на аннотациях DiDeMo: верхняя граница, случайное ранжирование
и частотный приор моментов. Признаки видео не нужны — только JSON-файлы аннотаций.

Сравнивает R@1 / R@5 / mIoU с опорными значениями и печатает вердикт по каждой строке.

Использование:
    python -m scripts.benchmark --train data/didemo/train_data.json --test data/didemo/test_data.json
    python -m scripts.benchmark --train ... --test ... --trials 10000 --seed 0
    python -m scripts.benchmark --train ... --test ... --only upper_bound prior
"""

import argparse
import sys
import time
from pathlib import Path

# UTF-8 для Windows
sys.stdout.reconfigure(encoding="utf-8")

# Корень проекта
PROJECT_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from mcn.config import CHANCE_TRIALS, DATA_DIR
from mcn.data import load_annotations
from mcn.errors import MCNError
from mcn.evaluation import baseline_chance, baseline_moment_prior, baseline_upper_bound, format_table

# Опорные значения (проценты R@1, R@5, mIoU) и допуск на каждую метрику
EXPECTED = {
    "upper_bound": ((74.75, 100.00, 96.05), 0.05),
    "chance": ((3.75, 22.50, 22.64), 0.5),
    "prior": ((19.40, 66.38, 26.65), 0.5),
}


def run_benchmark(train_path: Path, test_path: Path, names: list[str], trials: int, seed: int) -> bool:
    """
    Считает выбранные базовые линии на test-сплите и сверяет их с EXPECTED.

    Returns:
        True, если все строки в пределах допуска.
    """
    test_records = load_annotations(test_path)
    train_records = load_annotations(train_path) if "prior" in names else []

    print(f"\n{'=' * 70}")
    print(f"  BENCHMARK: базовые линии на аннотациях")
    print(f"  Запросов в test: {len(test_records)}, в train: {len(train_records) or '—'}")
    print(f"{'=' * 70}\n")

    reports = []
    all_ok = True
    for name in names:
        start_time = time.time()
        if name == "upper_bound":
            report = baseline_upper_bound(test_records)
        elif name == "chance":
            report = baseline_chance(test_records, seed=seed, trials=trials)
        else:
            report = baseline_moment_prior(train_records, test_records)
        elapsed = time.time() - start_time
        reports.append(report)

        expected, tolerance = EXPECTED[name]
        m = report.metrics
        got = (100 * m.r1, 100 * m.r5, 100 * m.miou)
        ok = all(abs(g - e) <= tolerance for g, e in zip(got, expected))
        all_ok &= ok

        status = "✅ OK  " if ok else "❌ FAIL"
        print(f"  {status} {name:<12} ({elapsed:.1f}s)")
        print(f"           получено:  " + " / ".join(f"{v:6.2f}" for v in got))
        print(f"           ожидается: " + " / ".join(f"{v:6.2f}" for v in expected) + f"  (±{tolerance})")
        print()

    print(f"{'=' * 70}")
    print(f"  РЕЗУЛЬТАТЫ")
    print(f"{'=' * 70}")
    print(format_table(reports))
    print(f"{'=' * 70}\n")
    return all_ok


def main():
    parser = argparse.ArgumentParser(description="Benchmark базовых линий (R@1 / R@5 / mIoU)")
    parser.add_argument(
        "--train", type=Path, default=DATA_DIR / "didemo" / "train_data.json",
        help="Аннотации train (нужны для приора)",
    )
    parser.add_argument(
        "--test", type=Path, default=DATA_DIR / "didemo" / "test_data.json",
        help="Аннотации test",
    )
    parser.add_argument(
        "--only", nargs="+", choices=list(EXPECTED), default=list(EXPECTED),
        help="Какие базовые линии считать (по умолчанию все)",
    )
    parser.add_argument("--trials", type=int, default=CHANCE_TRIALS, help="Испытаний Монте-Карло для chance")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    needed = [args.test] + ([args.train] if "prior" in args.only else [])
    for path in needed:
        if not path.exists():
            print(f"❌ Файл не найден: {path}")
            sys.exit(1)

    try:
        ok = run_benchmark(args.train, args.test, args.only, args.trials, args.seed)
    except MCNError as e:
        print(f"❌ {e}")
        sys.exit(2)
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
