"""Command-line entry point: ``rankverify verify|bounds|fuzz``.

Exit codes: 0 when every rule is Verified (or fuzzing found nothing), 1 when
any rule is Invalid, 2 when some rule is Unknown or Unsupported and none is
Invalid, 3 on a tool error such as an unreadable rule file or a missing
solver.
"""

from __future__ import annotations

import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import click

from . import __version__, analysis, concrete, rulefile, verifier
from .errors import SamplingExhausted, VerifierError
from .report import EXIT_ERROR, Report, RuleError, render_text

log = logging.getLogger("rankverify")


def _pairs(text, what, value=str):
    out = {}
    if not text:
        return out
    for item in text.split(","):
        key, sep, val = item.partition("=")
        if not sep or not key.strip() or not val.strip():
            raise click.BadParameter(f"expected {what} as name=value, got {item!r}")
        try:
            out[key.strip()] = value(val.strip())
        except ValueError:
            raise click.BadParameter(f"bad value in {item!r}") from None
    return out


def _load(paths, report):
    """Rule objects with their paths; unreadable files become report errors."""
    try:
        files = rulefile.discover(paths)
    except VerifierError as exc:
        report.errors.append(RuleError(str(getattr(exc, "path", "") or ""), str(exc), type(exc).__name__))
        return []
    rules = []
    for f in files:
        try:
            rules.append((rulefile.load_path(f), str(f)))
        except VerifierError as exc:
            report.errors.append(RuleError(str(f), str(exc), type(exc).__name__))
    return rules


def _emit(report, fmt, output):
    report.exit_code = report.compute_exit_code()
    text = report.dumps() if fmt == "json" else render_text(report)
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    return report.exit_code


_format = click.option("--format", "fmt", type=click.Choice(["json", "text"]), default="text", show_default=True)
_output = click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write the report here instead of stdout.")
_paths = click.argument("paths", nargs=-1, required=True, type=click.Path())


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="rankverify")
@click.option("-v", "--verbose", count=True, help="Log progress to stderr (repeat for more).")
def cli(verbose):
    """Verify tensor rewrite rules for every rank at once."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command()
@_paths
@click.option("--solver", default=None, help="Solver binary name or path [default: $RANKVERIFY_SOLVER or z3].")
@click.option("--timeout-ms", type=click.IntRange(min=1), default=10000, show_default=True,
              help="Per-query solver timeout.")
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--dump-smt", type=click.Path(file_okay=False), default=None,
              help="Write every query to <dir>/<rule>/<task>/<obligation>.smt2.")
@click.option("--max-rank-override", default="", metavar="RCLASS=K,...",
              help="Use these ranks instead of the inferred bounds; lower ranks make the verdict non-conclusive.")
@click.option("--oracle-check", is_flag=True, help="Cross-check Verified rules by differential testing.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--assume-alias", multiple=True, metavar="T1=T2", help="Treat tensor T1 as the same tensor as T2.")
@click.option("--keep-going", is_flag=True, help="Run every task even after a confirmed counterexample.")
@_format
@_output
def verify(paths, solver, timeout_ms, jobs, dump_smt, max_rank_override, oracle_check, seed, assume_alias,
           keep_going, fmt, output):
    """Verify rule files (directories are searched for *.json)."""
    start = time.monotonic()
    override = _pairs(max_rank_override, "rank override", int)
    alias = {}
    for item in assume_alias:
        alias.update(_pairs(item, "alias"))
    report = Report("verify", {
        "solver": solver, "timeout_ms": timeout_ms, "jobs": jobs, "dump_smt": dump_smt,
        "max_rank_override": override, "oracle_check": oracle_check, "seed": seed,
        "assume_alias": alias, "keep_going": keep_going,
    })
    rules = _load(paths, report)
    many = len(rules) > 1 and jobs > 1
    config = verifier.VerifyConfig(solver=solver, timeout_ms=timeout_ms, jobs=1 if many else jobs,
                                   dump_dir=dump_smt, rank_override=override, alias=alias,
                                   oracle_check=oracle_check, seed=seed, keep_going=keep_going)

    def one(item):
        rule, path = item
        log.info("verifying %s", path)
        try:
            return verifier.verify(rule, config, path)
        except VerifierError as exc:
            return RuleError(path, str(exc), type(exc).__name__)

    if many:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, rules))
    else:
        results = [one(item) for item in rules]
    for r in results:
        (report.errors if isinstance(r, RuleError) else report.verdicts).append(r)
    report.seconds = time.monotonic() - start
    sys.exit(_emit(report, fmt, output))


@cli.command()
@_paths
@_format
@_output
def bounds(paths, fmt, output):
    """Print the inferred rank bound of every RClass."""
    start = time.monotonic()
    report = Report("bounds")
    for rule, path in _load(paths, report):
        try:
            reports = analysis.bound_reports(rule)
        except VerifierError as exc:
            report.errors.append(RuleError(path, str(exc), type(exc).__name__))
            continue
        report.bounds.append({"rule": rule.name, "path": path, "bounds": reports})
    report.seconds = time.monotonic() - start
    sys.exit(_emit(report, fmt, output))


@cli.command()
@_paths
@click.option("--ranks", default="", metavar="RCLASS=K,...",
              help="Test only this rank tuple [default: every tuple up to the inferred bounds].")
@click.option("--trials", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--size-cap", type=click.IntRange(min=0), default=4, show_default=True)
@click.option("--value-cap", type=click.IntRange(min=0), default=4, show_default=True)
@click.option("--all-mismatches", is_flag=True, help="Keep sampling after the first mismatch.")
@_format
@_output
def fuzz(paths, ranks, trials, seed, size_cap, value_cap, all_mismatches, fmt, output):
    """Compare both sides of each rule on random concrete inputs."""
    start = time.monotonic()
    fixed = _pairs(ranks, "rank", int)
    report = Report("fuzz", {"ranks": fixed, "trials": trials, "seed": seed, "size_cap": size_cap,
                             "value_cap": value_cap})
    for rule, path in _load(paths, report):
        try:
            if fixed:
                tuples = [{c: fixed.get(c, 1) for c in rule.rclasses}]
            else:
                bounds_ = {c: b.bound for c, b in analysis.bound_reports(rule).items()}
                tuples = analysis.task_set(rule, bounds_)
        except VerifierError as exc:
            report.errors.append(RuleError(path, str(exc), type(exc).__name__))
            continue
        for rk in tuples:
            try:
                rep = concrete.differential_test(rule, rk, trials=trials, seed=seed, size_cap=size_cap,
                                                 value_cap=value_cap, stop_at_first=not all_mismatches)
            except SamplingExhausted as exc:
                report.fuzz.append({"rule": rule.name, "ranks": dict(rk), "error": str(exc)})
                continue
            except VerifierError as exc:
                report.errors.append(RuleError(path, str(exc), type(exc).__name__))
                break
            report.fuzz.append(rep.to_json())
    report.seconds = time.monotonic() - start
    sys.exit(_emit(report, fmt, output))


def run(argv=None):
    """Run the CLI and return its exit code; usage errors count as tool errors."""
    try:
        cli.main(args=argv, prog_name="rankverify", standalone_mode=False)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_ERROR
    except click.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except click.exceptions.Abort:
        return EXIT_ERROR
    return 0


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":  # pragma: no cover
    main()
