"""Command-line runner: repeated benchmark runs, aggregate reports and the FEM demo.

Records are JSON Lines, one object per repetition, floats written with 17
significant digits.  Repetition ``k`` uses seed ``base_seed + k`` so any
single repetition can be re-run in isolation.

Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from collections import OrderedDict
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import fem
from .estimators import ks_statistic
from .model import BENCHMARKS, benchmark, nlg_marginal_cdf, reference_log_evidence
from .semis import SemisConfig, run_semis
from .sus import SusConfig, run_sus

SCHEMA = "seqmis.run/1"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("seqmis")

RUN_KEYS = ("example", "dim", "algorithm", "n", "p", "reps", "seed", "max_levels", "out",
            "dump_posterior", "workers", "pattern", "fem", "timing", "noise_scale", "records")
DEFAULTS = {
    "example": "nlg", "dim": 2, "algorithm": "semis", "n": None, "p": 0.1, "reps": 1,
    "seed": 0, "max_levels": 100, "out": None, "dump_posterior": None, "workers": 1,
    "pattern": 1, "fem": False, "timing": False, "noise_scale": 1.0, "records": None,
}


class UsageError(Exception):
    pass


def fmt_float(x) -> str:
    if x is None:
        return "null"
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def _encode(value) -> str:
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return fmt_float(value)
    if isinstance(value, dict):
        return "{" + ", ".join(f"{json.dumps(k)}: {_encode(v)}" for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in value) + "]"
    return json.dumps(value)


def encode_record(record: dict) -> str:
    return _encode(record)


# ---------------------------------------------------------------- configuration

def _check_choice(name, value, choices):
    if value not in choices:
        raise UsageError(f"{name}: expected one of {list(choices)}, got {value!r}")


def _check_int(name, value, low):
    if isinstance(value, bool) or not isinstance(value, int) or value < low:
        raise UsageError(f"{name}: expected an integer >= {low}, got {value!r}")


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and flags (flags win), then validate."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"config: cannot read {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config: top level must be a JSON object")
        for key, value in loaded.items():
            if key not in RUN_KEYS:
                raise UsageError(f"{key}: unknown config field")
            cfg[key] = value
    for key in RUN_KEYS:
        value = getattr(args, key, None)
        if value is not None and not (key in ("fem", "timing") and value is False):
            cfg[key] = value
    if cfg["fem"]:
        _check_choice("pattern", cfg["pattern"], (0, 1, 2))
    else:
        _check_choice("example", cfg["example"], BENCHMARKS)
        _check_choice("algorithm", cfg["algorithm"], ("semis", "sus"))
        _check_int("dim", cfg["dim"], 2)
        if cfg["example"] == "eggbox" and cfg["dim"] != 2:
            raise UsageError("dim: eggbox is two-dimensional")
    if cfg["n"] is None:
        cfg["n"] = 500 if cfg["algorithm"] == "sus" and not cfg["fem"] else 1000
    _check_int("n", cfg["n"], 2)
    _check_int("reps", cfg["reps"], 1)
    _check_int("seed", cfg["seed"], 0)
    _check_int("max_levels", cfg["max_levels"], 2)
    _check_int("workers", cfg["workers"], 1)
    if not isinstance(cfg["p"], (int, float)) or not 0.0 < cfg["p"] < 1.0:
        raise UsageError(f"p: expected a number in (0, 1), got {cfg['p']!r}")
    if not isinstance(cfg["noise_scale"], (int, float)) or cfg["noise_scale"] < 0:
        raise UsageError(f"noise_scale: expected a non-negative number, got {cfg['noise_scale']!r}")
    return cfg


# ---------------------------------------------------------------- run

def run_once(cfg: dict, rep: int):
    """One repetition; returns ``(record, posterior draws or None)``."""
    seed = cfg["seed"] + rep
    record = OrderedDict(schema=SCHEMA, algorithm=cfg["algorithm"], example=cfg["example"],
                         dim=cfg["dim"], pattern=None, rep=rep, seed=seed)
    model = benchmark(cfg["example"], cfg["dim"])
    t0 = time.perf_counter()
    try:
        if cfg["algorithm"] == "semis":
            res = run_semis(model, SemisConfig(n=cfg["n"], p=cfg["p"], max_levels=cfg["max_levels"],
                                               seed=seed, workers=cfg["workers"]))
            ln_mis, ln_sis = res.evidence.ln_z_mis, res.evidence.ln_z_sis
            terminated = res.terminated
        else:
            res = run_sus(model, SusConfig(n=cfg["n"], p_c=cfg["p"], max_levels=cfg["max_levels"],
                                           seed=seed, workers=cfg["workers"]))
            ln_mis, ln_sis, terminated = res.ln_z, None, True
    except Exception as exc:  # recorded, the batch continues
        log.error("rep %d failed: %s", rep, exc)
        record.update(status="error", error=f"{type(exc).__name__}: {exc}", ln_z_mis=None,
                      ln_z_sis=None, n_cal=model.eval_count, ess=None, levels_used=None,
                      terminated=False, wall_time_s=None)
        return record, None
    elapsed = time.perf_counter() - t0
    record.update(status="ok", error=None, ln_z_mis=ln_mis, ln_z_sis=ln_sis, n_cal=res.n_cal,
                  ess=res.posterior.ess, levels_used=res.levels_used, terminated=terminated,
                  wall_time_s=elapsed if cfg["timing"] else None)
    return record, res.posterior.draws


def _open_out(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def write_posterior_dump(fh, cfg: dict, rep: int, draws: np.ndarray, header: bool):
    if header:
        cols = ["algorithm", "example", "dim", "rep", "seed"] + [f"theta_{j + 1}" for j in range(draws.shape[1])]
        fh.write(",".join(cols) + "\n")
    prefix = f"{cfg['algorithm']},{cfg['example']},{cfg['dim']},{rep},{cfg['seed'] + rep}"
    for row in draws:
        fh.write(prefix + "," + ",".join(fmt_float(v) for v in row) + "\n")


def run_command(cfg: dict) -> int:
    if cfg["fem"]:
        return fem_command(cfg)
    out, close_out = _open_out(cfg["out"])
    dump = open(cfg["dump_posterior"], "w", encoding="utf-8", newline="") if cfg["dump_posterior"] else None
    failures = 0
    try:
        for rep in range(cfg["reps"]):
            record, draws = run_once(cfg, rep)
            failures += record["status"] != "ok"
            out.write(encode_record(record) + "\n")
            out.flush()
            if dump is not None and draws is not None:
                write_posterior_dump(dump, cfg, rep, draws, header=(dump.tell() == 0))
    finally:
        if close_out:
            out.close()
        if dump is not None:
            dump.close()
    if failures == cfg["reps"]:
        log.error("all %d repetitions failed", failures)
        return EXIT_RUNTIME
    return EXIT_OK


# ---------------------------------------------------------------- fem

def _fem_run(pattern: int, cfg: dict):
    rng = np.random.default_rng([cfg["seed"], 7919, pattern])
    building, data, _ = fem.make_case(pattern, noise_cov_scale=cfg["noise_scale"], rng=rng)
    model = fem.fem_model(building, data, name=f"fem-pattern-{pattern}")
    t0 = time.perf_counter()
    res = run_semis(model, SemisConfig(n=cfg["n"], p=cfg["p"], max_levels=cfg["max_levels"],
                                       seed=cfg["seed"], workers=cfg["workers"]))
    elapsed = time.perf_counter() - t0
    theta = res.trace.prior.to_physical(res.trace.u)
    mean, std = fem.posterior_summary(theta, res.posterior.weights)
    record = OrderedDict(schema=SCHEMA, algorithm="semis", example="fem", dim=building.n_params,
                         pattern=pattern, rep=0, seed=cfg["seed"], status="ok", error=None,
                         ln_z_mis=res.evidence.ln_z_mis, ln_z_sis=res.evidence.ln_z_sis,
                         n_cal=res.n_cal, ess=res.posterior.ess, levels_used=res.levels_used,
                         terminated=res.terminated, wall_time_s=elapsed if cfg["timing"] else None)
    return building, mean, std, record


DAMAGE_COLUMNS = ("story", "ref_mean", "ref_std", "mean", "std", "stiffness_change")


def damage_csv(rows: List[dict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(DAMAGE_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(str(row[c]) if c == "story" else fmt_float(row[c]) for c in DAMAGE_COLUMNS) + "\n")
    return buf.getvalue()


def fem_command(cfg: dict) -> int:
    """Infer the intact building and the chosen damage pattern; write the per-story damage table."""
    try:
        building, ref_mean, ref_std, ref_rec = _fem_run(0, cfg)
        if cfg["pattern"] == 0:
            mean, std, rec = ref_mean, ref_std, None
        else:
            _, mean, std, rec = _fem_run(cfg["pattern"], cfg)
    except Exception as exc:
        log.error("fem run failed: %s", exc)
        return EXIT_RUNTIME
    n = building.n_stories
    rows = fem.damage_report(ref_mean[:n], ref_std[:n], mean[:n], std[:n])
    text = damage_csv(rows)
    out, close_out = _open_out(cfg["out"])
    try:
        out.write(text)
    finally:
        if close_out:
            out.close()
    if cfg["records"]:
        with open(cfg["records"], "w", encoding="utf-8", newline="") as fh:
            for r in (ref_rec, rec):
                if r is not None:
                    fh.write(encode_record(r) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- report

def read_records(paths: Sequence[str]) -> List[dict]:
    records = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except ValueError as exc:
                    raise UsageError(f"{path}:{lineno}: not valid JSON ({exc})") from exc
                if not isinstance(rec, dict) or rec.get("schema") != SCHEMA:
                    found = rec.get("schema") if isinstance(rec, dict) else None
                    raise UsageError(f"{path}:{lineno}: record schema {found!r} does not match {SCHEMA!r}")
                rec["_where"] = f"{path}:{lineno}"
                records.append(rec)
    return records


def read_posterior_dumps(paths: Sequence[str]) -> Dict[tuple, Dict[int, np.ndarray]]:
    """``{(algorithm, example, dim): {rep: draws}}`` from posterior dump CSVs."""
    out: Dict[tuple, Dict[int, list]] = {}
    for path in paths:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                key = (row[0], row[1], int(row[2]))
                out.setdefault(key, {}).setdefault(int(row[3]), []).append([float(v) for v in row[5:]])
    return {k: {rep: np.array(v) for rep, v in reps.items()} for k, reps in out.items()}


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else math.nan


def aggregate(records: Iterable[dict], dumps: Optional[dict] = None) -> List[dict]:
    """Per (algorithm, example, dim) statistics of successful repetitions.

    Relative bias is ``mean(ln z)/reference - 1`` and c.o.v. is
    ``std(ln z)/|mean(ln z)|``, both on the log-evidence scale.  The standard
    deviation uses ``ddof=1`` and needs at least two repetitions.
    """
    groups: Dict[tuple, List[dict]] = OrderedDict()
    for rec in records:
        key = (rec["algorithm"], rec["example"], rec["dim"])
        if rec["example"] == "fem":
            key = key + (rec.get("pattern"),)
        groups.setdefault(key, []).append(rec)
    rows = []
    for key, recs in groups.items():
        ok = [r for r in recs if r.get("status") == "ok" and r.get("ln_z_mis") is not None]
        lz = np.array([r["ln_z_mis"] for r in ok], dtype=float)
        sis = [r["ln_z_sis"] for r in ok if r.get("ln_z_sis") is not None]
        mean = _mean(lz)
        ref = reference_log_evidence(key[1], key[2]) if key[1] in BENCHMARKS else None
        std = float(np.std(lz, ddof=1)) if lz.size >= 2 else math.nan
        row = OrderedDict(
            algorithm=key[0], example=key[1], dim=key[2],
            reps=len(ok), failed=len(recs) - len(ok),
            mean_ln_z=mean, std_ln_z=std,
            reference=ref,
            rel_bias=(mean / ref - 1.0) if ref is not None and lz.size else math.nan,
            cov=(std / abs(mean)) if lz.size >= 2 and mean != 0 else math.nan,
            mean_ln_z_sis=_mean(sis), std_ln_z_sis=float(np.std(sis, ddof=1)) if len(sis) >= 2 else math.nan,
            mean_ess_ratio=_mean([r["ess"] / r["n_cal"] for r in ok]),
            mean_n_cal=_mean([r["n_cal"] for r in ok]),
        )
        if len(key) == 4:
            row["pattern"] = key[3]
        if dumps and key[1] == "nlg" and key[:3] in dumps:
            per_rep = dumps[key[:3]]
            for j in range(key[2]):
                ks = [ks_statistic(d[:, j], lambda x, j=j: nlg_marginal_cdf(j, x, key[2]))
                      for d in per_rep.values()]
                row[f"ks_{j + 1}"] = _mean(ks)
        rows.append(row)
    return rows


def report_csv(rows: List[dict]) -> str:
    cols: List[str] = []
    for row in rows:
        cols += [c for c in row if c not in cols]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c)
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(fmt_float(v))
            else:
                cells.append(str(v))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def report_table(rows: List[dict]) -> str:
    head = ("algorithm", "example", "dim", "reps", "mean ln z", "reference", "rel bias", "c.o.v.",
            "ESS/n_cal", "mean n_cal")
    lines = [head]
    for r in rows:
        ref = "-" if r["reference"] is None else f"{r['reference']:.2f}"
        lines.append((r["algorithm"], r["example"], str(r["dim"]), str(r["reps"]),
                      f"{r['mean_ln_z']:.4f}", ref, f"{r['rel_bias']:.4%}", f"{r['cov']:.4%}",
                      f"{r['mean_ess_ratio']:.4%}", f"{r['mean_n_cal']:.0f}"))
    widths = [max(len(line[i]) for line in lines) for i in range(len(head))]
    text = "\n".join("  ".join(cell.rjust(w) for cell, w in zip(line, widths)) for line in lines)
    ks_rows = [r for r in rows if any(k.startswith("ks_") for k in r)]
    for r in ks_rows:
        vals = " ".join(f"{r[k]:.3f}" for k in r if k.startswith("ks_"))
        text += f"\nK-S {r['algorithm']} {r['example']} {r['dim']}D: {vals}"
    return text + "\n"


def report_command(args: argparse.Namespace) -> int:
    records = read_records(args.records)
    if not records:
        raise UsageError("records: no records found")
    dumps = read_posterior_dumps(args.posterior) if args.posterior else None
    rows = aggregate(records, dumps)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(report_csv(rows))
    sys.stdout.write(report_table(rows))
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _add_run_flags(p: argparse.ArgumentParser, fem_only: bool = False):
    p.add_argument("--config", help="JSON config; flags override its fields")
    if not fem_only:
        p.add_argument("--example", choices=BENCHMARKS)
        p.add_argument("--dim", type=int)
        p.add_argument("--algorithm", choices=("semis", "sus"))
        p.add_argument("--reps", type=int)
        p.add_argument("--dump-posterior", dest="dump_posterior", help="CSV of resampled posterior draws")
        p.add_argument("--fem", action="store_true", default=None, help="run the FEM damage demo instead")
    p.add_argument("--n", type=int, help="samples per level")
    p.add_argument("--p", type=float, help="level probability")
    p.add_argument("--seed", type=int, help="base seed; repetition k uses seed + k")
    p.add_argument("--max-levels", dest="max_levels", type=int)
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--workers", type=int, help="threads for chain sampling")
    p.add_argument("--pattern", type=int, choices=(0, 1, 2), help="FEM damage pattern")
    p.add_argument("--noise-scale", dest="noise_scale", type=float, help="FEM data noise scale")
    p.add_argument("--records", help="FEM: also write run records (JSONL) here")
    p.add_argument("--timing", action="store_true", default=None, help="record wall-clock times")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqmis", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="repeated evidence estimation on a benchmark"))
    _add_run_flags(sub.add_parser("fem", help="shear-building damage demo"), fem_only=True)
    rep = sub.add_parser("report", help="aggregate run records")
    rep.add_argument("records", nargs="+", help="JSONL record files")
    rep.add_argument("--posterior", action="append", help="posterior dump CSV (repeatable)")
    rep.add_argument("--out", help="aggregate CSV path")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return report_command(args)
        if args.command == "fem":
            args.fem = True
        return run_command(resolve_config(args))
    except UsageError as exc:
        print(f"seqmis: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"seqmis: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
