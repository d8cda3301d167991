"""Command line harness: ``gen``, ``verify`` and ``report``.

``verify`` exits with status 1 when any applicable certificate fails and
dumps the first failing instance and certificate under ``<out>/witness``.
"""
from __future__ import annotations

import argparse
import csv
import fnmatch
import json
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .harness import (CSV_COLUMNS, ExperimentConfig, Instance, certificate_row, filter_certificates,
                      format_float, generate, run_suite)


def _load_config(args) -> ExperimentConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    if getattr(args, "seed", None) is not None:
        data["seeds"] = [args.seed]
    if getattr(args, "out", None):
        data["output"] = args.out
    return ExperimentConfig.from_dict(data)


def cmd_gen(cfg: ExperimentConfig) -> list[Path]:
    """Write one filtration/measures/operator triple per sweep tuple, plus a manifest."""
    out = Path(cfg.output) / "instances"
    out.mkdir(parents=True, exist_ok=True)
    names, paths = [], []
    for inst in generate(cfg):
        paths += inst.write(out)
        names.append(inst.name)
    config = {k: v for k, v in cfg.to_dict().items() if k != "output"}
    manifest = {"config": config, "instances": names}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return paths


def load_instances(directory) -> list[Instance]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    return [Instance.read(directory, name) for name in manifest["instances"]]


def _write_results(out: Path, certs) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "certificates.jsonl", "w") as fh:
        for c in certs:
            fh.write(json.dumps(c.to_dict(), sort_keys=True) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for c in certs:
            row = certificate_row(c)
            w.writerow([format_float(row[k]) if isinstance(row[k], float) else row[k] for k in CSV_COLUMNS])


def _dump_witness(out: Path, inst: Instance, cert) -> Path:
    wdir = out / "witness"
    inst.write(wdir)
    doc = {"instance": inst.name, "certificate": cert.to_dict()}
    path = wdir / "first_failure.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


def cmd_verify(cfg: ExperimentConfig, *, instances_dir=None, pattern: str | None = None) -> int:
    """Certify every instance; returns the process exit code."""
    out = Path(cfg.output)
    instances = load_instances(instances_dir) if instances_dir else generate(cfg)
    per_instance = run_suite(instances, cfg.variants) if cfg.variants else [[] for _ in instances]
    all_certs, failure = [], None
    for inst, certs in zip(instances, per_instance):
        certs = filter_certificates(certs, pattern)
        all_certs += certs
        if failure is None:
            bad = next((c for c in certs if not c.passed), None)
            if bad is not None:
                failure = (inst, bad)
    _write_results(out, all_certs)
    n_fail = sum(not c.passed for c in all_certs)
    print(f"{len(all_certs)} certificates on {len(instances)} instances, {n_fail} failed")
    if failure is not None:
        path = _dump_witness(out, *failure)
        print(f"first failure: {failure[1].name} on {failure[0].name}; witness in {path}", file=sys.stderr)
        return 1
    return 0


def read_results(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "certificates.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no results at {path}")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize(rows: list[dict]) -> list[dict]:
    """Per certificate name: counts, minimum slack and the worst instance; failures first."""
    groups = defaultdict(list)
    for r in rows:
        groups[r["name"]].append(r)
    table = []
    for name, rs in groups.items():
        applicable = [r for r in rs if r["applicable"]]
        worst = min(applicable, key=lambda r: r["slack"], default=None)
        table.append({
            "name": name,
            "count": len(rs),
            "applicable": len(applicable),
            "failed": sum(not r["pass"] for r in rs),
            "min_slack": worst["slack"] if worst else float("nan"),
            "worst_instance": worst["params"].get("instance") if worst else "",
        })
    table.sort(key=lambda t: (t["failed"] == 0, t["name"]))
    return table


def slack_histogram(rows: list[dict], bins: int = 20) -> list[tuple]:
    """Counts of relative slack ``slack / max(1, rhs)`` per certificate name."""
    groups = defaultdict(list)
    for r in rows:
        if r["applicable"]:
            groups[r["name"]].append(r["slack"] / max(1.0, r["rhs"]))
    out = []
    for name in sorted(groups):
        counts, edges = np.histogram(groups[name], bins=bins)
        out += [(name, float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]
    return out


def cmd_report(results, *, histogram=None, pattern: str | None = None) -> int:
    rows = read_results(results)
    if pattern:
        rows = [r for r in rows if fnmatch.fnmatch(r["name"], pattern)]
    table = summarize(rows)
    header = f"{'certificate':40s} {'count':>6s} {'appl':>6s} {'fail':>5s} {'min slack':>12s}  worst instance"
    print(header)
    for t in table:
        print(f"{t['name']:40s} {t['count']:6d} {t['applicable']:6d} {t['failed']:5d} "
              f"{t['min_slack']:12.4g}  {t['worst_instance']}")
    if histogram:
        with open(histogram, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "bin_lo", "bin_hi", "count"])
            w.writerows(slack_histogram(rows))
    return 1 if any(t["failed"] for t in table) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="matdyadic", description="Generate and certify matrix-weighted dyadic instances.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="run a single seed instead of the config's list")
        sp.add_argument("--out", help="output directory (overrides the config)")

    g = sub.add_parser("gen", help="write instance files")
    common(g)
    v = sub.add_parser("verify", help="run certificates; nonzero exit on failure")
    common(v)
    v.add_argument("--instances", help="directory written by gen (default: generate in memory)")
    v.add_argument("--filter", help="certificate name glob")
    r = sub.add_parser("report", help="summarize a verify run")
    r.add_argument("results", help="results directory or certificates.jsonl")
    r.add_argument("--histogram", help="write slack histogram CSV here")
    r.add_argument("--filter", help="certificate name glob")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "report":
        try:
            return cmd_report(args.results, histogram=args.histogram, pattern=args.filter)
        except FileNotFoundError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    cfg = _load_config(args)
    if args.command == "gen":
        paths = cmd_gen(cfg)
        print(f"wrote {len(paths) // 3} instances to {Path(cfg.output) / 'instances'}")
        return 0
    return cmd_verify(cfg, instances_dir=args.instances, pattern=args.filter)


if __name__ == "__main__":
    sys.exit(main())
