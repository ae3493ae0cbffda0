"""Experiment driver: train, attack-fgsm, attack-patch, distill, report.

Configuration is a plain ``key = value`` text file; command-line flags
override file values, which override defaults. Every run writes a manifest
(config snapshot, artifact checksums, wall-clock duration) into the output
directory so results can be replayed; seeds are always recorded, even when
defaulted. Commands exit 0 on success and nonzero with a message on
standard error for any failure. Nothing is written outside the output
directory.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
import time
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import attacks, dataset, distillation, evaluation, network, training

__all__ = ["RunConfig", "load_config_file", "main"]


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = "data"
    out_dir: str = "out"
    seed: int = 0
    epochs: int = training.EPOCHS
    batch_size: int = training.BATCH_SIZE
    temperature: float = 100.0
    epsilons: tuple[float, ...] = attacks.DEFAULT_EPSILONS
    patch_sizes: tuple[int, ...] = (6, 8, 10)
    target_class: int = 0

    def validate(self) -> "RunConfig":
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch-size must be >= 1, got {self.batch_size}")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 <= self.target_class < 10:
            raise ValueError(f"target-class must lie in [0, 10), got {self.target_class}")
        attacks.AttackConfig(self.epsilons)  # range/order checks
        if not self.patch_sizes:
            raise ValueError("patch-sizes must be non-empty")
        return self


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


_FIELD_PARSERS = {
    "data_dir": str,
    "out_dir": str,
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "temperature": float,
    "epsilons": _parse_float_list,
    "patch_sizes": _parse_int_list,
    "target_class": int,
}


def load_config_file(path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, _, value = text.partition("=")
            key = key.strip().replace("-", "_")
            if key not in _FIELD_PARSERS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _FIELD_PARSERS[key](value.strip())
    return values


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.config is not None:
        cfg = replace(cfg, **load_config_file(args.config))
    overrides = {}
    for field in fields(RunConfig):
        value = getattr(args, field.name, None)
        if value is not None:
            overrides[field.name] = value
    return replace(cfg, **overrides).validate()


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    config: RunConfig,
    checkpoints: dict[str, Path],
    reports: list[Path],
    started: float,
) -> Path:
    for path in list(checkpoints.values()) + reports:
        if not Path(path).is_file():
            raise FileNotFoundError(f"manifest lists missing file {path}")
    lines = [f"command={command}", f"duration_seconds={time.time() - started:.3f}"]
    for field in fields(RunConfig):
        value = getattr(config, field.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"config.{field.name}={value}")
    for name, path in checkpoints.items():
        lines.append(f"checkpoint.{name}={Path(path).name}:{_sha256(Path(path))}")
    for path in reports:
        lines.append(f"report={Path(path).name}")
    manifest = out_dir / f"manifest-{command}.txt"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def _load_split(config: RunConfig):
    full = dataset.load_mnist_train(config.data_dir)
    return dataset.split(full, config.seed)


def _accuracy(net, images, labels) -> float:
    log_probs = network.predict_log_probs(net, images)
    return float((log_probs.argmax(axis=1) == labels).mean())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(config: RunConfig) -> int:
    started = time.time()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, holdout = _load_split(config)
    net = network.build(config.seed, temperature=1.0)
    net, log = training.fit(net, train_set, holdout, config.epochs, config.batch_size, config.seed)
    ckpt = out / "baseline.ckpt"
    network.save(net, ckpt)
    log_path = out / "train_log.csv"
    log.write_csv(log_path)
    accuracy = _accuracy(net, holdout.images, holdout.labels)
    print(f"trained {config.epochs} epochs; holdout accuracy {accuracy:.4f}")
    _write_manifest(out, "train", config, {"baseline": ckpt}, [log_path], started)
    return 0


def cmd_attack_fgsm(config: RunConfig, checkpoint: str) -> int:
    started = time.time()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = network.load(checkpoint)
    _, holdout = _load_split(config)
    report = attacks.fgsm_sweep(net, holdout, attacks.AttackConfig(config.epsilons))
    report.metadata["seed"] = str(config.seed)
    csv_path = out / "fgsm_sweep.csv"
    evaluation.write_csv(report, csv_path)
    reports = [csv_path]
    if len(report.rows) >= 2:
        svg_path = out / "fgsm_sweep.svg"
        evaluation.render_curve(report, svg_path)
        reports.append(svg_path)
    for row in report.rows:
        print(f"epsilon {row.setting:.3f}: {row.correct}/{row.total} = {row.accuracy:.4f}")
    _write_manifest(out, "attack-fgsm", config, {"model": Path(checkpoint)}, reports, started)
    return 0


def cmd_attack_patch(config: RunConfig, checkpoint: str) -> int:
    started = time.time()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net = network.load(checkpoint)
    train_set, holdout = _load_split(config)
    steps_per_epoch = -(-len(train_set) // attacks.PATCH_BATCH)
    iters = attacks.PATCH_EPOCHS * steps_per_epoch

    checkpoints = {"model": Path(checkpoint)}
    top1_rows, top5_rows = [], []
    for size in config.patch_sizes:
        patch = attacks.patch_train(
            net, train_set, size, config.target_class, iters, config.seed
        )
        patch_path = out / f"patch_{size}.ckpt"
        attacks.save_patch(patch, patch_path)
        checkpoints[f"patch_{size}"] = patch_path
        result = attacks.patch_evaluate(net, holdout, patch, config.seed)
        by_k = {row.setting: row for row in result.rows}
        top1_rows.append((size, by_k[1.0]))
        top5_rows.append((size, by_k[5.0]))
        print(
            f"patch {size}x{size} -> target {config.target_class}: "
            f"top-1 {by_k[1.0].accuracy:.4f}, top-5 {by_k[5.0].accuracy:.4f}"
        )

    # combined report: one row per size for top-1, then one per size for top-5
    combined = evaluation.EvalReport(
        metadata={
            "attack": "patch",
            "setting": "patch size",
            "target_class": str(config.target_class),
            "layout": "rows 1..n are top-1 per size, rows n+1..2n are top-5 per size",
        }
    )
    for size, row in top1_rows:
        combined.add(size, row.correct, row.total)
    for size, row in top5_rows:
        combined.add(size, row.correct, row.total)
    csv_path = out / "patch_report.csv"
    evaluation.write_csv(combined, csv_path)
    reports = [csv_path]
    if len(top1_rows) >= 2:
        top1_report = evaluation.EvalReport(metadata={"setting": "patch size"})
        for size, row in top1_rows:
            top1_report.add(size, row.correct, row.total)
        svg_path = out / "patch_top1.svg"
        evaluation.render_curve(top1_report, svg_path)
        reports.append(svg_path)
    _write_manifest(out, "attack-patch", config, checkpoints, reports, started)
    return 0


def cmd_distill(config: RunConfig) -> int:
    started = time.time()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_set, holdout = _load_split(config)
    distill_cfg = distillation.DistillConfig(
        temperature=config.temperature, epochs=config.epochs, batch_size=config.batch_size
    )

    teacher = network.build(config.seed, temperature=config.temperature)
    teacher, teacher_log = training.fit(
        teacher, train_set, holdout, config.epochs, config.batch_size, config.seed
    )
    teacher_path = out / "teacher.ckpt"
    network.save(teacher, teacher_path)
    teacher_log.write_csv(out / "teacher_log.csv")

    soft = distillation.make_soft_labels(teacher, train_set, config.temperature)
    soft_path = out / "soft_labels.bin"
    distillation.save_soft_labels(soft_path, soft)

    # the student gets its own init stream, one past the teacher's
    student = network.build(config.seed + 1, temperature=config.temperature)
    student, student_log = distillation.distill(
        student, train_set, soft, holdout, distill_cfg, config.seed
    )
    student_path = out / "student.ckpt"
    network.save(student, student_path)
    student_log.write_csv(out / "distill_train_log.csv")

    report = distillation.distilled_sweep(student, holdout, attacks.AttackConfig(config.epsilons))
    report.metadata["seed"] = str(config.seed)
    csv_path = out / "distilled_sweep.csv"
    evaluation.write_csv(report, csv_path)
    reports = [out / "teacher_log.csv", out / "distill_train_log.csv", csv_path]
    if len(report.rows) >= 2:
        svg_path = out / "distilled_sweep.svg"
        evaluation.render_curve(report, svg_path)
        reports.append(svg_path)
    for row in report.rows:
        print(f"epsilon {row.setting:.3f}: {row.correct}/{row.total} = {row.accuracy:.4f}")
    _write_manifest(
        out,
        "distill",
        config,
        {"teacher": teacher_path, "student": student_path, "soft_labels": soft_path},
        reports,
        started,
    )
    return 0


def cmd_report(config: RunConfig) -> int:
    started = time.time()
    out = Path(config.out_dir)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory {out} does not exist")
    rendered = []
    for csv_path in sorted(out.glob("*.csv")):
        try:
            report = evaluation.read_csv(csv_path)
        except ValueError:
            continue  # train logs and other CSVs are not EvalReports
        print(f"{csv_path.name}:")
        for row in report.rows:
            print(f"  {row.setting:.3f}: {row.correct}/{row.total} = {row.accuracy:.4f}")
        if len(report.rows) >= 2:
            svg_path = csv_path.with_suffix(".svg")
            evaluation.render_curve(report, svg_path)
            rendered.append(svg_path)
    _write_manifest(out, "report", config, {}, rendered, started)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="PATH", help="key = value config file")
    shared.add_argument("--data-dir", dest="data_dir")
    shared.add_argument("--out-dir", dest="out_dir")
    shared.add_argument("--seed", type=int)
    shared.add_argument("--epochs", type=int)
    shared.add_argument("--batch-size", dest="batch_size", type=int)
    shared.add_argument("--temperature", type=float)
    shared.add_argument("--epsilons", type=_parse_float_list, metavar="CSV")
    shared.add_argument("--patch-sizes", dest="patch_sizes", type=_parse_int_list, metavar="CSV")
    shared.add_argument("--target-class", dest="target_class", type=int)

    parser = argparse.ArgumentParser(prog="advlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[shared], help="train the baseline classifier")
    p_fgsm = sub.add_parser("attack-fgsm", parents=[shared], help="FGSM epsilon sweep")
    p_fgsm.add_argument("checkpoint", help="model checkpoint to attack")
    p_patch = sub.add_parser("attack-patch", parents=[shared], help="adversarial patch attack")
    p_patch.add_argument("checkpoint", help="model checkpoint to attack")
    sub.add_parser("distill", parents=[shared], help="defensive distillation pipeline")
    sub.add_parser("report", parents=[shared], help="re-render curves from report CSVs")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "attack-fgsm":
            return cmd_attack_fgsm(config, args.checkpoint)
        if args.command == "attack-patch":
            return cmd_attack_patch(config, args.checkpoint)
        if args.command == "distill":
            return cmd_distill(config)
        if args.command == "report":
            return cmd_report(config)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError, network.CheckpointError, dataset.IdxFormatError) as exc:
        print(f"advlab {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
