"""Batch command-line interface: generate, run, compare.

Configuration files are INI-style key-value text with nested section names
(``[dataset.<name>]``).  Command-line flags take precedence over file
values.  The ``CHURNLEARN_OUT`` environment variable supplies the default
output root when ``--out`` is omitted.

Exit codes: 0 on success, 1 on configuration errors, 2 when some runs of a
batch failed.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

from .classifiers import RC_NAMES
from .experiment import (
    DatasetSpec,
    ExperimentManifest,
    compare_runs,
    run_experiment,
)
from .inference import CI_NAMES, CiConfig
from .synthgen import SynthConfig, generate

OUT_ENV_VAR = "CHURNLEARN_OUT"


class ConfigError(ValueError):
    """Anything wrong with flags or configuration files."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; we want 1
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="churnlearn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate synthetic CDR datasets")
    gen.add_argument("--config", required=True, help="INI file with [dataset.<name>] sections")
    gen.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV_VAR})")

    run = sub.add_parser("run", help="run the learner grid over the manifest's datasets")
    run.add_argument("--manifest", required=True, help="INI experiment manifest")
    run.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV_VAR})")
    run.add_argument("--jobs", type=int, default=None, help="worker count (default: logical cores)")
    run.add_argument(
        "--filter",
        default=None,
        help="comma-separated classifier/inference names restricting the grid, e.g. nlb,none",
    )
    run.add_argument("--seed", type=int, default=None, help="override the manifest's global seed")
    run.add_argument("--gamma", type=float, default=None, help="override the decay constant (1/day)")

    cmp_ = sub.add_parser("compare", help="rank-based statistical comparison of an evaluation table")
    cmp_.add_argument("--eval", dest="eval_path", required=True, help="evaluation CSV from `run`")
    cmp_.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV_VAR})")
    cmp_.add_argument("--alpha", type=float, default=0.05, help="significance level (bundled: 0.05)")
    return parser


def _resolve_out(out: str | None) -> Path:
    if out is None:
        out = os.environ.get(OUT_ENV_VAR)
    if not out:
        raise ConfigError(f"--out is required (or set ${OUT_ENV_VAR})")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _read_ini(path) -> configparser.ConfigParser:
    if not Path(path).exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parser


_SYNTH_FIELDS = {
    "n_customers": int,
    "target_churn_rate": float,
    "target_sparsity": float,
    "homophily_strength": float,
    "months": int,
    "rng_seed": int,
    "calls_per_edge_per_month": float,
    "duration_mean_s": float,
}


def _synth_config(section: configparser.SectionProxy, defaults: dict, index: int, seed: int) -> SynthConfig:
    kwargs: dict = dict(defaults)
    for key, cast in _SYNTH_FIELDS.items():
        if key in section:
            kwargs[key] = cast(section[key])
    kwargs.setdefault("rng_seed", seed * 1000 + index)
    try:
        return SynthConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad synthetic dataset config: {exc}") from exc


def cmd_generate(config_path, out_dir) -> int:
    ini = _read_ini(config_path)
    out = _resolve_out(out_dir)
    defaults: dict = {}
    seed = 0
    if ini.has_section("defaults"):
        sec = ini["defaults"]
        seed = int(sec.get("seed", "0"))
        for key, cast in _SYNTH_FIELDS.items():
            if key in sec:
                defaults[key] = cast(sec[key])
    names = [s for s in ini.sections() if s.startswith("dataset.")]
    if not names:
        raise ConfigError("no [dataset.<name>] sections found")
    for index, section_name in enumerate(names):
        name = section_name.split(".", 1)[1]
        config = _synth_config(ini[section_name], defaults, index, seed)
        dataset = generate(config)
        cdr_path = out / f"{name}.cdr"
        truth_path = out / f"{name}.truth.tsv"
        dataset.write(cdr_path, truth_path)
        print(
            f"generated {name}: {len(dataset.events)} calls, "
            f"{len(dataset.churn_schedule)} churners -> {cdr_path}"
        )
    return 0


def _parse_filter(token: str | None) -> tuple[tuple[str, ...], tuple[str, ...]]:
    if not token:
        return RC_NAMES, CI_NAMES
    rcs: list[str] = []
    cis: list[str] = []
    for piece in token.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if piece in RC_NAMES:
            rcs.append(piece)
        elif piece in CI_NAMES:
            cis.append(piece)
        else:
            raise ConfigError(
                f"unknown --filter token {piece!r}; classifiers: {', '.join(RC_NAMES)}; "
                f"inference methods: {', '.join(CI_NAMES)}"
            )
    return tuple(rcs) or RC_NAMES, tuple(cis) or CI_NAMES


def _manifest_from_ini(ini: configparser.ConfigParser, manifest_path, out: Path, args) -> ExperimentManifest:
    exp = ini["experiment"] if ini.has_section("experiment") else {}
    gamma = float(exp.get("gamma", "0.0"))
    seed = int(exp.get("seed", "0"))
    horizons = tuple(h.strip() for h in exp.get("horizons", "short,long").split(",") if h.strip())
    edge_types = tuple(e.strip() for e in exp.get("edge_types", "call_count,call_duration").split(",") if e.strip())
    rcs = tuple(r.strip() for r in exp.get("rcs", ",".join(RC_NAMES)).split(",") if r.strip())
    cis = tuple(c.strip() for c in exp.get("cis", ",".join(CI_NAMES)).split(",") if c.strip())

    ci_kwargs: dict = {}
    if ini.has_section("ci"):
        sec = ini["ci"]
        for key, cast in (
            ("max_iters", int),
            ("burn_in", int),
            ("early_stop_threshold", float),
            ("rl_beta0", float),
            ("rl_decay", float),
        ):
            if key in sec:
                ci_kwargs[key] = cast(sec[key])
    spread_factor = 0.5
    nlb_l2 = 1e-4
    if ini.has_section("rc"):
        sec = ini["rc"]
        spread_factor = float(sec.get("spread_factor", spread_factor))
        nlb_l2 = float(sec.get("nlb_l2", nlb_l2))

    if args.filter is not None:
        rcs, cis = _parse_filter(args.filter)
    if args.seed is not None:
        seed = args.seed
    if args.gamma is not None:
        gamma = args.gamma

    base_dir = Path(manifest_path).parent
    datasets: list[DatasetSpec] = []
    defaults: dict = {}
    if ini.has_section("defaults"):
        sec = ini["defaults"]
        for key, cast in _SYNTH_FIELDS.items():
            if key in sec:
                defaults[key] = cast(sec[key])
    for index, section_name in enumerate(s for s in ini.sections() if s.startswith("dataset.")):
        name = section_name.split(".", 1)[1]
        section = ini[section_name]
        if "path" in section:
            path = Path(section["path"])
            if not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise ConfigError(f"dataset {name!r}: file not found: {path}")
            datasets.append(DatasetSpec(name=name, path=str(path)))
        else:
            datasets.append(DatasetSpec(name=name, synth=_synth_config(section, defaults, index, seed)))
    if not datasets:
        raise ConfigError("no [dataset.<name>] sections found in the manifest")

    try:
        return ExperimentManifest(
            datasets=tuple(datasets),
            out_dir=str(out),
            gamma=gamma,
            horizons=horizons,
            edge_types=edge_types,
            rcs=rcs,
            cis=cis,
            seed=seed,
            ci_base=CiConfig(**ci_kwargs),
            spread_factor=spread_factor,
            nlb_l2=nlb_l2,
            jobs=args.jobs if args.jobs is not None else 0,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(args) -> int:
    ini = _read_ini(args.manifest)
    out = _resolve_out(args.out)
    manifest = _manifest_from_ini(ini, args.manifest, out, args)
    result = run_experiment(manifest)
    done = len(result.rows)
    print(
        f"completed {done} runs, skipped {result.skipped} already done, "
        f"{result.failed} failed -> {out / 'eval.csv'}"
    )
    return 2 if result.failed else 0


def cmd_compare(args) -> int:
    out = _resolve_out(args.out)
    if not Path(args.eval_path).exists():
        raise ConfigError(f"evaluation table not found: {args.eval_path}")
    try:
        report = compare_runs(args.eval_path, out, alpha=args.alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for metric, cmp_obj in report.learners.items():
        best = cmp_obj.method_order()[0]
        print(f"{metric}: best {best} (Friedman p = {cmp_obj.friedman_p:.3g}, CD = {cmp_obj.cd:.3f})")
    print(f"wrote {len(report.files)} artifacts -> {out}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "generate":
            return cmd_generate(args.config, args.out)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "compare":
            return cmd_compare(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
