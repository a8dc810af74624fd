"""fairdrop: audit dropout-prediction models for protected-attribute fairness.

Usage:
  fairdrop synth --profile NAME [--n N] [--seed SEED] [--out DIR] [--protected-effect X] [--gender-signal X] [--log-level LEVEL]
  fairdrop audit --config FILE [--out DIR] [--workers N] [--log-level LEVEL]
  fairdrop report --in DIR [--format FMT] [--out DIR] [--log-level LEVEL]
  fairdrop (-h | --help)
  fairdrop --version

Options:
  --profile NAME          Synthetic population: online or residential.
  --n N                   Number of students to generate.
  --seed SEED             Generator seed [default: 0].
  --out DIR               Output directory.
  --protected-effect X    Direct share of the protected-group dropout shift.
  --gender-signal X       Gender shift in the seminar/lab course mix.
  --config FILE           Audit configuration (YAML).
  --workers N             Worker threads for cross-validation.
  --in DIR                Directory holding a previous report.json.
  --format FMT            Bundle to re-emit: csv, json or md [default: csv].
  --log-level LEVEL       Logging level (defaults to FAIRDROP_LOG_LEVEL).
  -h --help               Show this screen.
  --version               Show version.

Exit codes: 0 success, 2 configuration error, 3 pipeline error.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from docopt import docopt
from pydantic import ValidationError

from app.core.config import get_settings, load_audit_config
from app.core.errors import ConfigError, FairdropError
from app.core.logging import configure_logging
from app.services.audit_engine import AuditEngine
from app.services.reporting import BUNDLES, emit_report, load_report
from services.cohort_data import write_table
from services.synth_cohort import generate, profile_by_name, validate_marginals


logger = logging.getLogger("fairdrop")

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PIPELINE = 3


def _int_option(args: Dict[str, Any], name: str) -> Optional[int]:
    value = args.get(name)
    if value is None:
        return None
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{name} expects an integer, got {value!r}") from exc


def _float_option(args: Dict[str, Any], name: str) -> Optional[float]:
    value = args.get(name)
    if value is None:
        return None
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"{name} expects a number, got {value!r}") from exc


def run_synth(args: Dict[str, Any]) -> int:
    seed = _int_option(args, "--seed") or 0
    overrides: Dict[str, Any] = {}
    protected_effect = _float_option(args, "--protected-effect")
    if protected_effect is not None:
        overrides["protected_effect"] = protected_effect
    gender_signal = _float_option(args, "--gender-signal")
    if gender_signal is not None:
        overrides["gender_signal"] = gender_signal
    try:
        profile = profile_by_name(args["--profile"], n=_int_option(args, "--n"), seed=seed)
        if overrides:
            profile = profile.with_overrides(**overrides)
    except (ValidationError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = Path(args["--out"] or get_settings().output_dir / "synth" / profile.format)
    students, courses = generate(profile)
    write_table(students, out_dir / "students.csv")
    write_table(courses, out_dir / "courses.csv")
    marginals = validate_marginals(students, courses, profile)
    (out_dir / "marginals.yaml").write_text(marginals.to_yaml(), encoding="utf-8")
    logger.info(
        "Wrote %d students and %d course records to %s (%d/%d marginals within tolerance)",
        len(students),
        len(courses),
        out_dir,
        len(marginals.checks) - len(marginals.failures()),
        len(marginals.checks),
    )
    return EXIT_OK


def run_audit_command(args: Dict[str, Any]) -> int:
    config = load_audit_config(args["--config"])
    out_dir = Path(args["--out"] or config.output_dir or get_settings().output_dir)
    workers = _int_option(args, "--workers") or config.workers or get_settings().workers
    engine = AuditEngine(config, workers=workers)
    report = engine.run()
    emit_report(report, out_dir)
    engine.artifacts.write(out_dir)
    return EXIT_OK


def run_report(args: Dict[str, Any]) -> int:
    bundle = args["--format"]
    if bundle not in BUNDLES:
        raise ConfigError(f"--format must be one of {', '.join(BUNDLES)}")
    in_dir = Path(args["--in"])
    report = load_report(in_dir)
    emit_report(report, Path(args["--out"] or in_dir), bundles=[bundle])
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = docopt(__doc__, argv=argv, version=f"fairdrop {__version__}")
    try:
        configure_logging(args["--log-level"] or get_settings().log_level)
        if args["synth"]:
            return run_synth(args)
        if args["audit"]:
            return run_audit_command(args)
        return run_report(args)
    except ConfigError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except FairdropError as exc:
        stage = getattr(exc, "stage", None)
        if stage:
            logger.error("Pipeline failed in stage %s: %s", stage, exc)
        else:
            logger.error("Pipeline failed: %s", exc)
        return EXIT_PIPELINE
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_PIPELINE


if __name__ == "__main__":
    raise SystemExit(main())
