#!/usr/bin/env python3
"""
NOON interference harness.
Generates interference scans with the analytic, Fock-oracle or Gaussian engine,
analyzes stored scans, and runs the engine cross-checks from one command line.
"""

import argparse
import json
import os
import sys
import logging
from contextlib import contextmanager
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml

from src import analytic_model, crosscheck, fock_oracle, gaussian_engine
from src.noon_config import DEFAULT_CONFIG_PATH, NoonConfig, config_sha, get_config
from src.noon_errors import AnalysisError, ConfigError, NoonError, ScanFormatError
from src.noon_types import DetectionScheme, PatternScan, ValidatedBundle, checked
from src.pattern_analysis import metrics, visibility
from src.scan_io import _atomic_write, read_scan, write_grid, write_scan

logger = logging.getLogger(__name__)

ENGINES = ("analytic", "oracle", "gaussian")
TABLE1_PATH = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "table1.yaml")
TREND_MUS = (0.01, 0.1, 0.6)
CHUNK_SIZE = 8


def worker_count() -> int:
    """CPU count, capped by ``NOON_MAX_WORKERS`` when set."""
    workers = os.cpu_count() or 1
    cap = os.getenv("NOON_MAX_WORKERS")
    if cap:
        try:
            limit = int(cap)
        except ValueError:
            raise ConfigError("invalid NOON_MAX_WORKERS", [f"expected a positive integer, got {cap!r}"]) from None
        if limit < 1:
            raise ConfigError("invalid NOON_MAX_WORKERS", [f"expected a positive integer, got {cap!r}"])
        workers = min(workers, limit)
    return workers


@contextmanager
def point_mapper(workers: Optional[int] = None) -> Iterator:
    """Order-preserving map over scan points; a process pool when more than one worker is allowed."""
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield partial(pool.map, chunksize=CHUNK_SIZE)


def default_output(engine: str, scheme: DetectionScheme, mode: str) -> str:
    return os.path.join("results", f"scan_{engine}_{scheme.m}-{scheme.n}_{mode}.csv")


def counts_path(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}_counts{ext or '.csv'}"


def sample_counts(scan: PatternScan, rep_rate: float, integration_time: float, seed: int) -> PatternScan:
    """Poisson counts with mean p * rep_rate * integration_time; the same seed gives the same counts."""
    rng = np.random.default_rng(seed)
    return scan.with_counts(rng.poisson(scan.probabilities * rep_rate * integration_time))


def format_summary(label: str, stats: Dict[str, Any]) -> str:
    """One ``m/n | shape | L mm | T ps | V`` row; fields a scan could not provide print as ``-``."""
    length = stats.get("coherence_length")
    duration = stats.get("coherence_time")
    vis = stats.get("visibility")
    return " | ".join(
        [
            label,
            stats.get("shape") or "-",
            f"{length * 1e3:.3f} mm" if length is not None else "-",
            f"{duration * 1e12:.2f} ps" if duration is not None else "-",
            f"{vis:.3f}" if vis is not None else "-",
        ]
    )


def load_table1(path: str = TABLE1_PATH) -> Dict[str, Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return (yaml.safe_load(f) or {}).get("rows", {})


class NoonHarness:
    """Runs scans, analysis and cross-checks against one effective configuration."""

    def __init__(self, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None):
        self.config_path = config_path or os.getenv("NOON_CONFIG") or DEFAULT_CONFIG_PATH
        self.config = self._apply_overrides(get_config(self.config_path), overrides or {})
        self.sha = config_sha(self.config)
        logger.info(f"Loaded config {self.config_path} (sha {self.sha[:12]})")

    @staticmethod
    def _apply_overrides(config: NoonConfig, overrides: Dict[str, Any]) -> NoonConfig:
        """Command-line values for mu, eta and dc win over file and environment."""
        raw = config.model_dump()
        changed = False
        for key, section in (("mu", "source"), ("eta", "scan"), ("dc", "scan")):
            if overrides.get(key) is not None:
                raw[section][key] = overrides[key]
                changed = True
        if not changed:
            return config
        return checked(NoonConfig, raw)

    def bundle(self, scheme: str, mode: Optional[str] = None) -> ValidatedBundle:
        return self.config.bundle(scheme, mode)

    def generate(self, engine: str, bundle: ValidatedBundle, mapper=map) -> PatternScan:
        """Produce the scan for ``bundle`` with the chosen engine."""
        if engine == "analytic":
            return analytic_model.pattern(bundle.scheme, bundle.spec, bundle.scan)
        if engine == "oracle":
            return fock_oracle.oracle_pattern(bundle.scheme, bundle.spec, bundle.scan, mapper)
        if engine == "gaussian":
            return gaussian_engine.multipair_pattern(bundle.scheme, bundle.spec, bundle.scan, mapper)
        raise ConfigError(f"unknown engine {engine!r}", [f"choose one of {', '.join(ENGINES)}"])

    def scan(
        self,
        engine: str,
        scheme: str,
        mode: Optional[str] = None,
        output: Optional[str] = None,
        sample: bool = False,
        seed: int = 0,
    ) -> Dict[str, Any]:
        """Generate and store one scan (plus sampled counts when ``sample`` is set)."""
        bundle = self.bundle(scheme, mode)
        output = output or default_output(engine, bundle.scheme, bundle.scan.mode)
        logger.info(f"Scanning {bundle.scheme.label} with the {engine} engine ({bundle.scan.mode}, {bundle.scan.count} points)")
        with point_mapper() as mapper:
            result = self.generate(engine, bundle, mapper)
        extra = {"config": self.config.model_dump(mode="json"), "config_sha": self.sha}
        files = [write_scan(output, result, extra)]
        if sample:
            sampled = sample_counts(result, bundle.spec.rep_rate, bundle.scan.integration_time, seed)
            files.append(write_scan(counts_path(output), sampled, dict(extra, seed=seed), include_counts=True))
        return {"status": "SUCCESS", "scheme": bundle.scheme.label, "engine": engine, "files": files}

    def analyze(
        self,
        scan_path: str,
        fine_path: Optional[str] = None,
        scheme: Optional[str] = None,
        json_path: Optional[str] = None,
        compare_table1: bool = False,
    ) -> Dict[str, Any]:
        """Envelope shape, coherence length/time and visibility of stored scans."""
        limit = self.config.limits.max_photons
        scans = [read_scan(scan_path, scheme, limit)[0]]
        if fine_path:
            scans.append(read_scan(fine_path, scheme, limit)[0])
        labels = {s.scheme.label for s in scans}
        if len(labels) > 1:
            raise AnalysisError("scans belong to different schemes", sorted(labels))
        by_unit = {s.delay_unit: s for s in scans}
        if len(by_unit) < len(scans):
            raise AnalysisError("pass one coarse (path_m) and one fine (phase_rad) scan")

        stats = metrics(
            coarse=by_unit.get("path_m"),
            fine=by_unit.get("phase_rad"),
            spec=self.config.source,
            tolerance=self.config.analysis.symmetric_tolerance,
            baseline_fraction=self.config.analysis.baseline_fraction,
        )
        label = scans[0].scheme.label
        report = {
            "status": "SUCCESS",
            "scheme": label,
            "engine": scans[0].engine,
            "reconstructed": any(s.reconstructed for s in scans),
            "stats": stats.model_dump(),
            "summary": format_summary(label, stats.model_dump()),
        }
        if compare_table1:
            report["table1"] = load_table1().get(label)
        if json_path:
            _atomic_write(json_path, json.dumps(report, indent=2, sort_keys=True) + "\n")
            logger.info(f"Wrote analysis to {json_path}")
        return report

    def crosscheck(self, schemes: str = "all", grid: str = "5x17", export_dir: Optional[str] = None) -> Dict[str, Any]:
        """Run every equivalence suite; oracle grids go to ``export_dir`` as CSV when given."""
        selected = crosscheck.parse_schemes(schemes)
        frames: Dict[str, pd.DataFrame] = {}
        with point_mapper() as mapper:
            results = crosscheck.run_all(selected, crosscheck.parse_grid(grid), mapper, frames)
        files = []
        if export_dir:
            for label, frame in frames.items():
                path = os.path.join(export_dir, f"oracle_grid_{label.replace('/', '-')}.csv")
                files.append(write_grid(path, frame))
        failed = [r for r in results if not r.passed]
        return {
            "status": "SUCCESS" if not failed else "FAIL",
            "files": files,
            "results": [r.model_dump() for r in results],
            "matrix": crosscheck.render_matrix(results),
        }

    def forms(self, schemes: str = "all", output_dir: Optional[str] = None) -> Dict[str, Any]:
        """Text dump of the harmonic forms; six-photon forms are reconstructed from the oracle."""
        texts = {}
        for scheme in crosscheck.parse_schemes(schemes):
            texts[scheme.label] = analytic_model.form_for(scheme).to_text()
        files = []
        if output_dir:
            for label, text in texts.items():
                path = os.path.join(output_dir, f"P_{label.replace('/', '-')}.txt")
                _atomic_write(path, text)
                files.append(path)
        return {"status": "SUCCESS", "forms": texts, "files": files}

    def trends(self, schemes: str = "all", mus: Sequence[float] = TREND_MUS, output: Optional[str] = None) -> Dict[str, Any]:
        """Fine-scan visibility of every scheme at each mu, with the ordering checks it supports."""
        selected = crosscheck.parse_schemes(schemes)
        rows: List[Dict[str, Any]] = []
        with point_mapper() as mapper:
            for mu in mus:
                spec = self.config.source.model_copy(update={"mu": mu})
                cfg = self.config.scan_config("fine")
                for scheme in selected:
                    result = gaussian_engine.multipair_pattern(scheme, spec, cfg, mapper)
                    rows.append({"scheme": scheme.label, "mu": mu, "visibility": visibility(result)})
        frame = pd.DataFrame(rows)
        table = frame.pivot(index="scheme", columns="mu", values="visibility").reindex([s.label for s in selected])

        def v(label: str, mu: float) -> Optional[float]:
            if label in table.index and mu in table.columns:
                return float(table.loc[label, mu])
            return None

        orderings = {}
        for high, low in (("4/0", "3/1"), ("6/0", "4/2")):
            for mu in mus:
                a, b = v(high, mu), v(low, mu)
                if a is not None and b is not None:
                    orderings[f"V({high}) > V({low}) at mu={mu:g}"] = a > b
        for label in table.index:
            first, last = v(label, min(mus)), v(label, max(mus))
            if label != "1/0" and first is not None and last is not None and len(mus) > 1:
                orderings[f"V({label}) falls from mu={min(mus):g} to {max(mus):g}"] = first > last
        if output:
            _atomic_write(output, frame.to_csv(index=False, float_format="%.6g", lineterminator="\n"))
            logger.info(f"Wrote visibility trends to {output}")
        return {"status": "SUCCESS", "table": table, "orderings": orderings}


def _parse_mus(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError("invalid --mus", [f"expected comma-separated numbers, got {text!r}"]) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="NOON interference simulation harness",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  noon-harness scan --engine analytic --scheme 3/1 --mode coarse --out results/scan_3-1_coarse.csv
  noon-harness scan --engine gaussian --scheme 2/2 --mode fine --mu 0.1 --sample --seed 7
  noon-harness analyze results/scan_3-1_coarse.csv --fine results/scan_3-1_fine.csv --compare-table1
  noon-harness crosscheck --schemes all --grid 5x17
  noon-harness forms --schemes 3/3,4/2,5/1,6/0
  noon-harness trends --mus 0.01,0.1,0.6 --out results/trends.csv
        """,
    )
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    scan_parser = subparsers.add_parser("scan", help="Generate a scan")
    scan_parser.add_argument("--config", help="Path to config file")
    scan_parser.add_argument("--engine", choices=ENGINES, default="analytic", help="Probability engine")
    scan_parser.add_argument("--scheme", required=True, help="Detection scheme m/n")
    scan_parser.add_argument("--mode", choices=("coarse", "fine"), help="Scan mode (defaults to scan.mode)")
    scan_parser.add_argument("--mu", type=float, help="Override source.mu")
    scan_parser.add_argument("--eta", type=float, help="Override scan.eta")
    scan_parser.add_argument("--dc", type=float, help="Override scan.dc")
    scan_parser.add_argument("--out", help="Output CSV")
    scan_parser.add_argument("--sample", action="store_true", help="Also write Poisson-sampled counts")
    scan_parser.add_argument("--seed", type=int, default=0, help="Seed for sampled counts")

    analyze_parser = subparsers.add_parser("analyze", help="Analyze stored scans")
    analyze_parser.add_argument("scan", help="Scan CSV (coarse or fine)")
    analyze_parser.add_argument("--fine", help="Fine scan CSV for the visibility")
    analyze_parser.add_argument("--scheme", help="Scheme m/n for headerless files")
    analyze_parser.add_argument("--config", help="Path to config file")
    analyze_parser.add_argument("--json", dest="json_path", help="Write the report as JSON")
    analyze_parser.add_argument("--compare-table1", action="store_true", help="Print the published row alongside")

    cross_parser = subparsers.add_parser("crosscheck", help="Cross-check the engines")
    cross_parser.add_argument("--config", help="Path to config file")
    cross_parser.add_argument("--schemes", default="all", help="'all' or a list such as 1/1,3/1")
    cross_parser.add_argument("--grid", default="5x17", help="Intensity x phase grid for the oracle check")
    cross_parser.add_argument("--export-grid", dest="export_grid", help="Directory for the oracle grids as CSV")

    forms_parser = subparsers.add_parser("forms", help="Print the harmonic forms")
    forms_parser.add_argument("--config", help="Path to config file")
    forms_parser.add_argument("--schemes", default="3/3,4/2,5/1,6/0", help="'all' or a list of schemes")
    forms_parser.add_argument("--out", help="Directory for one text file per form")

    trends_parser = subparsers.add_parser("trends", help="Visibility against mu")
    trends_parser.add_argument("--config", help="Path to config file")
    trends_parser.add_argument("--schemes", default="all", help="'all' or a list of schemes")
    trends_parser.add_argument("--mus", default=",".join(str(m) for m in TREND_MUS), help="Comma-separated mu values")
    trends_parser.add_argument("--eta", type=float, help="Override scan.eta")
    trends_parser.add_argument("--dc", type=float, help="Override scan.dc")
    trends_parser.add_argument("--out", help="CSV with one row per scheme and mu")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 0

    try:
        overrides = {key: getattr(args, key, None) for key in ("mu", "eta", "dc")}
        harness = NoonHarness(getattr(args, "config", None), overrides)

        if args.command == "scan":
            result = harness.scan(args.engine, args.scheme, args.mode, args.out, args.sample, args.seed)
            print(f"Scan written: {', '.join(result['files'])}")

        elif args.command == "analyze":
            result = harness.analyze(args.scan, args.fine, args.scheme, args.json_path, args.compare_table1)
            print(result["summary"])
            if args.compare_table1:
                row = result.get("table1")
                if row is None:
                    print(f"{result['scheme']} | no published row")
                else:
                    print(
                        f"{result['scheme']} | {row['shape']} | {row['coherence_length_mm']:.2f} mm | "
                        f"{row['coherence_time_ps']:.2f} ps | {row['visibility']:.2f}  (published)"
                    )
            if result["reconstructed"]:
                print("note: six-photon values come from a reconstructed form")

        elif args.command == "crosscheck":
            result = harness.crosscheck(args.schemes, args.grid, args.export_grid)
            print(result["matrix"])
            if result["files"]:
                print(f"Oracle grids written: {', '.join(result['files'])}")
            if result["status"] != "SUCCESS":
                return 3

        elif args.command == "forms":
            result = harness.forms(args.schemes, args.out)
            for text in result["forms"].values():
                print(text)

        elif args.command == "trends":
            result = harness.trends(args.schemes, _parse_mus(args.mus), args.out)
            print(result["table"].to_string(float_format=lambda x: f"{x:.3f}"))
            for check, holds in result["orderings"].items():
                print(f"{'✅' if holds else '❌'} {check}")

        return 0

    except NoonError as e:
        logger.error(f"Error running {args.command}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, OSError) as e:
        logger.error(f"Error running {args.command}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return ScanFormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
