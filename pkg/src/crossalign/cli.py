"""Command-line entry point: ``crossalign <command> ...``.

Exit codes: 0 success, 2 usage, 3 I/O failure, 4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from crossalign import alignment, augment, imgio, losses, metrics, report
from crossalign.config import RunConfig, load_config
from crossalign.errors import ImageIOError, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4

LOGGER = logging.getLogger("crossalign")

TRIPLE_PATTERN = re.compile(r"^([A-Za-z0-9_-]+)_(ir|vis|fused)\.(png|pgm)$", re.IGNORECASE)
FEATURE_NAMES = ("hf_ir", "hf_vis", "lf_ir", "lf_vis")


def _parse_set(values: list[str] | None) -> dict[str, str]:
    overrides = {}
    for item in values or []:
        if "=" not in item:
            raise ValidationError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _config(args: argparse.Namespace, **flags) -> RunConfig:
    overrides = _parse_set(args.set)
    overrides.update({k: str(v) for k, v in flags.items() if v is not None})
    return load_config(args.config, overrides)


def _map(func, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def cmd_align(args: argparse.Namespace) -> int:
    config = _config(args, k=args.k, seed=args.seed, gamma_mode=args.gamma_mode, patch_size=args.patch_size)
    out = Path(args.out)
    _, rep = alignment.align_dataset(args.external, args.target, config.alignment(), out)
    LOGGER.info("aligned %d patches, gammas %s", len(rep.selected), rep.gammas)
    sys.stdout.write(rep.to_csv())
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    config = _config(args, total_steps=args.total, seed=args.seed, jobs=args.jobs)
    aug_config = config.augment()
    schedule = config.schedule()
    theta = augment.theta_at(schedule, args.step)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = imgio.list_images(args.input)

    def process(item):
        index, path = item
        try:
            fused = imgio.load_gray(path)
            views, loss = augment.generate_views(fused, aug_config, schedule, args.step, seed=aug_config.seed ^ index)
        except (ImageIOError, ValidationError) as exc:
            return path, None, str(exc)
        imgio.save_gray(views.weak, out / f"{path.stem}_weak.png")
        imgio.save_gray(views.aggressive, out / f"{path.stem}_aggr.png")
        record = {
            "stem": path.stem,
            "rect": list(views.crop_rect),
            "sigma": views.blur_sigma,
            "m": args.step,
            "theta": theta,
            "ssl_loss": loss,
        }
        return path, record, None

    results = _map(process, list(enumerate(paths)), config.resolved_jobs())
    skipped = 0
    with open(out / "views.jsonl", "w") as fh:
        for path, record, error in results:
            if record is None:
                skipped += 1
                LOGGER.warning("skipping %s: %s", path.name, error)
                continue
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    LOGGER.info("augmented %d images, skipped %d", len(results) - skipped, skipped)
    print(json.dumps({"processed": len(results) - skipped, "skipped": skipped, "theta": theta}))
    return EXIT_OK


def find_triples(directory: str | Path) -> tuple[dict[str, dict[str, Path]], list[str]]:
    """Group ``{stem}_{ir,vis,fused}`` files; returns complete triples and incomplete stems."""
    groups: dict[str, dict[str, Path]] = {}
    for path in imgio.list_images(directory):
        match = TRIPLE_PATTERN.match(path.name)
        if match is None:
            LOGGER.warning("ignoring %s: name does not follow {stem}_{ir,vis,fused}", path.name)
            continue
        groups.setdefault(match.group(1), {})[match.group(2).lower()] = path
    complete = {stem: parts for stem, parts in groups.items() if len(parts) == 3}
    incomplete = sorted(set(groups) - set(complete))
    return complete, incomplete


def cmd_metrics(args: argparse.Namespace) -> int:
    config = _config(args, jobs=args.jobs)
    metric_config = config.metrics()
    triples, incomplete = find_triples(args.dir)
    for stem in incomplete:
        LOGGER.warning("ignoring unmatched stem %s", stem)

    def evaluate(item):
        stem, parts = item
        try:
            triple = metrics.FusionTriple(
                imgio.load_gray(parts["ir"]), imgio.load_gray(parts["vis"]), imgio.load_gray(parts["fused"])
            )
            return stem, metrics.evaluate_all(triple, metric_config), None
        except (ImageIOError, ValidationError) as exc:
            return stem, None, str(exc)

    results = _map(evaluate, sorted(triples.items()), config.resolved_jobs())
    reports = []
    for stem, rep, error in results:
        if rep is None:
            LOGGER.warning("skipping %s: %s", stem, error)
        else:
            reports.append((stem, rep))
    if not reports:
        raise ValidationError(f"{args.dir}: no complete triples could be evaluated")
    out = Path(args.out)
    out.write_text(report.metric_table(reports))
    meta = {
        "aggregation": {"MI": metric_config.mi_mode, "VIF": metric_config.vif_mode, "SSIM": metric_config.ssim_mode},
        "color": "BT.601 luma",
        "evaluated": len(reports),
        "skipped": len(results) - len(reports),
        "unmatched": incomplete,
    }
    out.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    LOGGER.info("evaluated %d triples -> %s", len(reports), out)
    return EXIT_OK


def _evaluate_loss(prefix: Path, features_dir: Path, config: RunConfig, step: int) -> dict:
    name = prefix.name
    triple = metrics.FusionTriple(
        imgio.load_gray(f"{prefix}_ir.png"),
        imgio.load_gray(f"{prefix}_vis.png"),
        imgio.load_gray(f"{prefix}_fused.png"),
    )
    features = tuple(losses.read_feature_map(features_dir / f"{name}_{part}.fmap") for part in FEATURE_NAMES)
    weights = config.weights()
    schedule = config.schedule()
    theta = augment.theta_at(schedule, step)
    views, _ = augment.generate_views(triple.fused, config.augment(), schedule, step)
    fusion = losses.total_fusion_loss(triple, features, views, theta, weights, config.gradient_operator)
    result = {
        "stem": name,
        "step": step,
        "total_steps": schedule.total_steps,
        "theta": theta,
        "gradient_operator": config.gradient_operator,
        "norm": "per-pixel mean",
        "correlation": "flattened over all channels",
        "weights": {
            "alpha1": weights.alpha1,
            "alpha2": weights.alpha2,
            "alpha3": weights.alpha3,
            "alpha4": weights.alpha4,
            "lambda": weights.lam,
            "mu": weights.mu,
            "zeta": weights.zeta,
        },
        "fusion": fusion.to_json(),
        "recon": None,
    }
    ir_rec, vis_rec = Path(f"{prefix}_ir_rec.png"), Path(f"{prefix}_vis_rec.png")
    if ir_rec.exists() and vis_rec.exists():
        recon = losses.total_recon_loss(
            (triple.ir, imgio.load_gray(ir_rec)), (triple.vis, imgio.load_gray(vis_rec)), features, weights
        )
        result["recon"] = recon.to_json()
    return result


def cmd_loss(args: argparse.Namespace) -> int:
    config = _config(args, total_steps=args.total)
    for prefix in args.triple:
        result = _evaluate_loss(Path(prefix), Path(args.features), config, args.step)
        print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows = report.degradation_report(args.id, args.ood, method=args.method)
    text = report.degradation_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    comparison = report.distribution_compare(args.target, args.before, args.after)
    if args.out:
        prefix = Path(args.out)
        report.write_distribution(comparison, prefix.with_suffix(".csv"), prefix.with_suffix(".json"))
    print(json.dumps(comparison.summary(), sort_keys=True))
    return EXIT_OK


def cmd_config(args: argparse.Namespace) -> int:
    sys.stdout.write(_config(args).dumps())
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one configuration key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossalign", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="Top-K selective channel alignment of an external dataset")
    p.add_argument("--external", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", default="aligned")
    p.add_argument("--seed", type=int)
    p.add_argument("--gamma-mode", choices=alignment.GAMMA_MODES)
    p.add_argument("--patch-size", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("augment", help="weak/aggressive views and SSL loss per image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--step", type=int, required=True)
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("metrics", help="nine fusion metrics for every {stem}_{ir,vis,fused} triple")
    p.add_argument("--dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("loss", help="evaluate training losses for a triple and its feature maps")
    p.add_argument("--triple", action="append", required=True, metavar="STEM",
                   help="path prefix; reads STEM_ir.png, STEM_vis.png, STEM_fused.png")
    p.add_argument("--features", required=True)
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--total", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("report", help="degradation report between metric tables")
    report_sub = p.add_subparsers(dest="report_command", required=True)
    d = report_sub.add_parser("degrade")
    d.add_argument("--id", required=True)
    d.add_argument("--ood", required=True)
    d.add_argument("--method", default="method")
    d.add_argument("--out")
    d.set_defaults(func=cmd_report)

    p = sub.add_parser("stats", help="per-channel histogram comparison of three image directories")
    p.add_argument("--target", required=True)
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--out", help="output prefix for .csv and .json")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("config", help="print the resolved configuration")
    _add_common(p)
    p.set_defaults(func=cmd_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        LOGGER.error("%s", exc)
        return EXIT_VALIDATION
    except (ImageIOError, OSError) as exc:
        LOGGER.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
