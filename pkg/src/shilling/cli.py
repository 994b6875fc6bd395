"""Command-line entry point: ``shilling {ingest,attack,eval,transfer,report}``.

Experiment settings come from an INI file (``--config``, one ``[experiment]``
section) and are overridden by flags. List values are comma separated.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

from .evaluation import (
    REPORT_COLUMNS, ExperimentSpec, attack_seed, generate_fakes, load_experiment_data, report_rows,
    run_experiment, select_targets, summary_table,
)
from .ingest import SCALES, RatingScale, format_score, load_ratings, summarize, write_lines_atomic
from .profiles import FakeUserProfile

log = logging.getLogger("shilling")

DELIMITERS = {"tab": "\t", "whitespace": None, "ws": None, "comma": ",", "space": " ", "::": "::"}
LIST_KEYS = {"attacks", "attack_sizes", "similarities", "target_items"}
KEY_ALIASES = {"lambda": "lam", "attack": "attacks", "similarity": "similarities", "attack_size": "attack_sizes"}
TARGET_ALIASES = {"cold": "cold_start", "warm": "warm_start"}


class SpecError(ValueError):
    pass


def parse_scale(value: str) -> RatingScale:
    if value in SCALES:
        return SCALES[value]
    try:
        lo, hi, step = (float(v) for v in value.split(","))
    except ValueError:
        raise SpecError(f"scale must be one of {sorted(SCALES)} or 'min,max,step', got {value!r}") from None
    return RatingScale(lo, hi, step)


def parse_delimiter(value: str):
    return DELIMITERS.get(value, value)


def _coerce(key: str, raw):
    spec_fields = {f.name: f for f in fields(ExperimentSpec)}
    if key not in spec_fields:
        raise SpecError(f"unknown config key {key!r}")
    if key == "scale":
        return raw if isinstance(raw, RatingScale) else parse_scale(str(raw))
    if key == "delimiter":
        return parse_delimiter(str(raw))
    if key == "target_type":
        return TARGET_ALIASES.get(str(raw), str(raw))
    if key in LIST_KEYS:
        items = [s.strip() for s in str(raw).split(",") if s.strip()] if isinstance(raw, str) else list(raw)
        if key == "attack_sizes":
            return tuple(float(v) for v in items)
        if key == "target_items":
            return tuple(int(v) for v in items)
        return tuple(items)
    default = spec_fields[key].default
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    if key == "target_users":
        return None if str(raw).lower() in ("", "all", "none") else int(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    if not parser.read(path, encoding="utf-8"):
        raise SpecError(f"config file not found: {path}")
    extra = [s for s in parser.sections() if s != "experiment"]
    if extra:
        raise SpecError(f"unknown config sections {extra}; use [experiment]")
    if not parser.has_section("experiment"):
        return {}
    out = {}
    for key, value in parser.items("experiment"):
        key = KEY_ALIASES.get(key, key)
        out[key] = value
    return out


FLAG_KEYS = {
    "dataset": "dataset", "scale": "scale", "delimiter": "delimiter", "similarity": "similarities",
    "attack": "attacks", "target_type": "target_type", "attack_size": "attack_sizes", "k": "k", "n": "n",
    "z": "z", "lam": "lam", "eta": "eta", "iters": "iters", "seed": "seed", "target_count": "target_count",
    "targets": "target_items", "fake_file": "fake_file", "target_users": "target_users",
    "split_seed": "split_seed", "dataset_name": "dataset_name", "bpr_epochs": "bpr_epochs",
    "bpr_lr": "bpr_lr", "bpr_reg": "bpr_reg", "bpr_dim": "bpr_dim",
}


def build_spec(args, **forced) -> tuple[ExperimentSpec, str | None]:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    out = values.pop("out", None)
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    values.update(forced)
    if getattr(args, "out", None):
        out = args.out
    if "dataset" not in values:
        raise SpecError("no dataset given (--dataset or 'dataset' in the config)")
    try:
        spec = ExperimentSpec(**{k: _coerce(k, v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc)) from exc
    return spec, out


def _fake_user_ids(matrix, count: int) -> list[str]:
    raw = matrix.user_ids
    if raw and all(str(u).isdigit() for u in raw):
        start = max(int(u) for u in raw) + 1
        return [str(start + k) for k in range(count)]
    return [f"fake{k}" for k in range(count)]


def fake_file_lines(matrix, groups: list[tuple[int, list[FakeUserProfile]]], delimiter: str = "\t") -> list[str]:
    """Fake users as ordinary rating lines, one ``# target <item>`` comment per group.

    Item ids are the dataset's raw ids, so the file can be appended to the
    original rating file. Fake user ids continue above the largest genuine id.
    """
    total = sum(len(g) for _, g in groups)
    ids = _fake_user_ids(matrix, total)
    item_label = (lambda i: str(matrix.item_ids[i])) if matrix.item_ids else str
    lines, k = [], 0
    for target, profiles in groups:
        if not profiles:
            continue
        lines.append(f"# target {item_label(target)}")
        for p in profiles:
            for item, score in sorted(p.ratings.items()):
                lines.append(delimiter.join((ids[k], item_label(item), format_score(score))))
            k += 1
    return lines


def read_fake_file(path, matrix, delimiter="\t") -> list[FakeUserProfile]:
    index = {str(raw): k for k, raw in enumerate(matrix.item_ids)} if matrix.item_ids else None

    def item_of(label):
        if index is None:
            return int(label)
        if label not in index:
            raise SpecError(f"{path}: item {label!r} is not in the dataset")
        return index[label]

    groups: dict[tuple[int, str], dict[int, float]] = {}
    target = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "target":
                target = item_of(parts[1])
            continue
        if target is None:
            raise SpecError(f"{path}:{lineno}: rating line before any '# target' header")
        user, item, score = (line.split() if delimiter is None else line.split(delimiter))[:3]
        groups.setdefault((target, user), {})[item_of(item)] = float(score)
    profiles = []
    for (t, _), ratings in groups.items():
        profiles.append(FakeUserProfile(ratings, t, frozenset(i for i in ratings if i != t)))
    return profiles


def cmd_ingest(args) -> int:
    matrix = load_ratings(args.dataset, parse_scale(args.scale), parse_delimiter(args.delimiter), args.skip_header)
    summary = summarize(matrix)
    print(summary.as_text())
    return 0


def cmd_attack(args) -> int:
    spec, out = build_spec(args)
    if not out:
        raise SpecError("attack needs --out")
    if len(spec.attacks) != 1:
        raise SpecError("attack runs exactly one --attack")
    attack = spec.attacks[0]
    train = load_experiment_data(spec)
    size = spec.attack_sizes[0]
    j = args.num_fake if args.num_fake is not None else int(round(size * train.n_normal))
    if spec.target_items:
        targets = list(spec.target_items)
    else:
        targets = list(select_targets(train, spec.target_type, spec.target_count, spec.n, spec.k,
                                      spec.similarities[0], spec.seed).items)
    groups = []
    started = time.perf_counter()
    for t in targets:
        fakes = generate_fakes(spec, train, attack, t, j, attack_seed(spec.seed, attack, size, t))
        for p in fakes:
            p.check(train.scale, spec.z)
        groups.append((t, fakes))
    elapsed = time.perf_counter() - started
    write_lines_atomic(out, fake_file_lines(train, groups))
    minutes, seconds = divmod(elapsed, 60)
    print(
        f"{attack}: {sum(len(g) for _, g in groups)} fake users for {len(targets)} target(s) "
        f"in {int(minutes)}m{seconds:.0f}s -> {out}",
        file=sys.stderr,
    )
    return 0


def write_report(path, spec: ExperimentSpec, reports) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(report_rows(reports))
    errors = [f"# error {r.attack} {r.attack_size:g}: {r.error}" for r in reports if r.error]
    header = ["# spec " + json.dumps(spec.as_dict(), sort_keys=True)]
    header += [f"# targets {r.target_category} {' '.join(map(str, r.items))}" for r in reports[:1]]
    write_lines_atomic(path, header + errors + buf.getvalue().rstrip("\n").split("\n"))


def _run_and_report(spec: ExperimentSpec, out) -> int:
    external = None
    if spec.fake_file:
        train = load_experiment_data(spec)
        external = read_fake_file(spec.fake_file, train)
        if "file" not in spec.attacks:
            spec.attacks = tuple(spec.attacks) + ("file",)
        if not spec.target_items:
            spec.target_items = tuple(sorted({p.target for p in external}))
        reports = run_experiment(spec, train, external, progress=lambda m: log.info(m))
    else:
        reports = run_experiment(spec, progress=lambda m: log.info(m))
    if out:
        write_report(out, spec, reports)
    print(summary_table(reports))
    return 0


def cmd_eval(args) -> int:
    spec, out = build_spec(args)
    return _run_and_report(spec, out)


def cmd_transfer(args) -> int:
    spec, out = build_spec(args, transfer=True, knn=bool(args.with_knn))
    return _run_and_report(spec, out)


def cmd_report(args) -> int:
    for path in args.reports:
        rows = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if not line.startswith("#")]
        table = list(csv.DictReader(rows))
        print(f"== {path}")
        print(f"{'dataset':<12}{'attack':<13}{'size':>7}  {'similarity':<10}{'targets':<12}{'HR none':>9}{'HR post':>9}")
        for r in table:
            print(
                f"{r['dataset'][:11]:<12}{r['attack']:<13}{float(r['attack_size']):>7.2%}  {r['similarity']:<10}"
                f"{r['target_category']:<12}{float(r['hr_none']):>9.4f}{float(r['hr_post']):>9.4f}"
            )
    return 0


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with an [experiment] section")
    p.add_argument("--dataset", help="rating file (user item score per line)")
    p.add_argument("--dataset-name", dest="dataset_name")
    p.add_argument("--scale", help="movielens | filmtrust | amazon | min,max,step")
    p.add_argument("--delimiter", help="tab (default) | whitespace | comma | literal string")
    p.add_argument("--similarity", help="cosine | euclidean | pearson (comma list)")
    p.add_argument("--attack", help="none|random|average|bandwagon|covisitation|unattack (comma list)")
    p.add_argument("--target-type", dest="target_type", choices=["random", "cold", "warm"])
    p.add_argument("--target-count", dest="target_count", type=int)
    p.add_argument("--targets", help="explicit dense target item ids (comma list)")
    p.add_argument("--attack-size", dest="attack_size", help="fraction(s) of genuine users, e.g. 0.02")
    p.add_argument("--k", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--z", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--target-users", dest="target_users", help="sample size of target users, or 'all'")
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shilling", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a rating file and print dataset statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scale", default="movielens")
    p.add_argument("--delimiter", default="tab")
    p.add_argument("--skip-header", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("attack", help="generate fake users and write them as rating lines")
    _add_experiment_flags(p)
    p.add_argument("--num-fake", dest="num_fake", type=int, help="fake users per target (overrides --attack-size)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="run an attack grid against user-KNN and report HitRatio")
    _add_experiment_flags(p)
    p.add_argument("--fake-file", dest="fake_file", help="evaluate externally generated fake users")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("transfer", help="measure HitRatio on BPR-MF retrained on poisoned data")
    _add_experiment_flags(p)
    p.add_argument("--fake-file", dest="fake_file")
    p.add_argument("--with-knn", action="store_true", help="also report user-KNN rows")
    p.add_argument("--bpr-epochs", dest="bpr_epochs", type=int)
    p.add_argument("--bpr-lr", dest="bpr_lr", type=float)
    p.add_argument("--bpr-reg", dest="bpr_reg", type=float)
    p.add_argument("--bpr-dim", dest="bpr_dim", type=int)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("report", help="print report files as a summary table")
    p.add_argument("reports", nargs="+")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
