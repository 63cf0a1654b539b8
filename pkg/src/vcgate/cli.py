"""Command-line front end.

    vcgate test --config model.json --data data.csv --out result.json
    vcgate simulate --manifest scenarios.json --out results/ --profile desk

Exit codes: 0 success, 2 model or data error, 3 numerical failure with no
usable result.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, expfam, nulldist
from .exceptions import ConvergenceError, IngestionError, VcgateError
from .lmm import LmmDesign, RandomTerm
from .pql import GlmmSpec
from .simharness import DESK_B, METHODS, SimScenario, SimTable, run_scenario
from .splines import SplineBasisSpec, smooth_design
from .vctest import TestProblem, TestResult, normalize_null_kind, run_test

SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_MODEL = 2
EXIT_NUMERIC = 3
_MISSING = {"", "na", "nan", "null", "none"}

logger = logging.getLogger("vcgate")


@dataclass
class ModelConfig:
    response: str | dict
    family: str
    random: list[dict]
    test: str
    fixed: list = field(default_factory=list)
    intercept: bool = True
    denominator: int | None = None
    null: str = "finite"
    B: int = nulldist.DEFAULT_B
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> ModelConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise IngestionError(f"unknown config keys: {sorted(unknown)}")
        for key in ("response", "family", "random", "test"):
            if key not in raw:
                raise IngestionError(f"config is missing {key!r}")
        cfg = cls(**raw)
        if not cfg.random:
            raise IngestionError("config needs at least one random term")
        names = [term_name(t) for t in cfg.random]
        if len(set(names)) != len(names):
            raise IngestionError(f"duplicate random term names: {names}")
        if cfg.test not in names:
            raise IngestionError(f"tested term {cfg.test!r} is not among {names}")
        normalize_null_kind(cfg.null)
        return cfg

    @classmethod
    def load(cls, path) -> ModelConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestionError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)


def term_name(term: dict) -> str:
    if "name" in term:
        return term["name"]
    if "smooth" in term:
        return f"smooth({term['smooth']})"
    if "slope" in term:
        return f"{term['slope']}|{term['group']}"
    return term.get("group", "?")


class Dataset:
    """Column-named table read from a CSV file with a header row."""

    def __init__(self, columns: dict[str, list[str]], path: str = "<memory>"):
        self.columns = columns
        self.path = path
        lengths = {len(v) for v in columns.values()}
        self.N = lengths.pop() if lengths else 0

    @classmethod
    def read_csv(cls, path) -> Dataset:
        try:
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if not header:
                    raise IngestionError(f"{path}: missing header row")
                header = [h.strip() for h in header]
                cols = {h: [] for h in header}
                for lineno, row in enumerate(reader, start=2):
                    if not row:
                        continue
                    if len(row) != len(header):
                        raise IngestionError(
                            f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
                    for h, v in zip(header, row):
                        cols[h].append(v.strip())
        except OSError as exc:
            raise IngestionError(f"cannot read data {path}: {exc}") from exc
        return cls(cols, str(path))

    def raw(self, name: str) -> list[str]:
        if name not in self.columns:
            raise IngestionError(f"column {name!r} not found in {self.path}")
        values = self.columns[name]
        for i, v in enumerate(values):
            if v.lower() in _MISSING:
                raise IngestionError(f"missing value in column {name!r} at data row {i + 1}")
        return values

    def numeric(self, name: str) -> np.ndarray:
        out = np.empty(self.N)
        for i, v in enumerate(self.raw(name)):
            try:
                out[i] = float(v)
            except ValueError:
                raise IngestionError(
                    f"non-numeric value {v!r} in column {name!r} at data row {i + 1}") from None
        return out

    def categorical(self, name: str, levels=None):
        values = self.raw(name)
        if levels is None:
            levels = sorted(set(values), key=_natural_key)
        else:
            levels = [str(lv) for lv in levels]
            extra = set(values) - set(levels)
            if extra:
                raise IngestionError(f"column {name!r} has levels {sorted(extra)} not in config")
        index = {lv: k for k, lv in enumerate(levels)}
        codes = np.array([index[v] for v in values])
        return codes, list(levels)


def _natural_key(s: str):
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def _indicator(codes: np.ndarray, k: int) -> np.ndarray:
    return np.eye(k)[codes]


def build_model(data: Dataset, cfg: ModelConfig):
    """Turn a dataset and config into ``(spec, y, fixed_names, term_names, tested_index)``."""
    # response
    denominator = cfg.denominator
    if isinstance(cfg.response, dict):
        if cfg.family != expfam.BINOMIAL:
            raise IngestionError("successes/trials responses require the binomial family")
        succ = data.numeric(cfg.response["successes"])
        if "trials" in cfg.response:
            trials = data.numeric(cfg.response["trials"])
            if np.any(trials < 1) or np.any(trials != np.round(trials)):
                raise IngestionError("trials column must hold positive integers")
            denominator = trials.astype(int) if np.ptp(trials) else int(trials[0])
        if denominator is None:
            raise IngestionError("binomial response needs a trials column or a denominator")
        y = succ / np.asarray(denominator, dtype=float)
    else:
        y = data.numeric(cfg.response)
    try:
        family = expfam.make_family(cfg.family, denominator)
    except VcgateError as exc:
        raise IngestionError(str(exc)) from exc

    # fixed effects
    cols, names = [], []
    if cfg.intercept:
        cols.append(np.ones(data.N))
        names.append("(Intercept)")
    for term in cfg.fixed:
        if isinstance(term, str):
            cols.append(data.numeric(term))
            names.append(term)
        elif isinstance(term, dict) and "factor" in term:
            codes, levels = data.categorical(term["factor"], term.get("levels"))
            dummies = _indicator(codes, len(levels))
            keep = range(1, len(levels)) if cfg.intercept else range(len(levels))
            for k in keep:
                cols.append(dummies[:, k])
                names.append(f"{term['factor']}[{levels[k]}]")
        else:
            raise IngestionError(f"cannot interpret fixed term {term!r}")

    # random effects
    randoms, term_names = [], []
    for term in cfg.random:
        name = term_name(term)
        if "smooth" in term:
            t = data.numeric(term["smooth"])
            sd = smooth_design(t, SplineBasisSpec(K=int(term.get("K", 30))))
            if not cfg.intercept and "(Intercept)" not in names:
                cols.insert(0, np.ones(data.N))
                names.insert(0, "(Intercept)")
            if term["smooth"] not in names:
                cols.append(t)
                names.append(term["smooth"])
            randoms.append(RandomTerm(sd.Z_smooth, sd.D, name))
        elif "group" in term:
            codes, levels = data.categorical(term["group"])
            Z = _indicator(codes, len(levels))
            if "slope" in term:
                Z = Z * data.numeric(term["slope"])[:, None]
            randoms.append(RandomTerm(Z, None, name))
        else:
            raise IngestionError(f"random term {term!r} needs 'group' or 'smooth'")
        term_names.append(name)

    if not cols:
        raise IngestionError("model has no fixed effects")
    X = np.column_stack(cols)
    spec = GlmmSpec(family, LmmDesign(X, tuple(randoms)))
    return spec, y, names, term_names, term_names.index(cfg.test)


def load_csv(path, config: ModelConfig):
    """Read ``path`` and build the model described by ``config``.

    Returns ``(dataset, spec, y)``.
    """
    data = Dataset.read_csv(path)
    spec, y, *_ = build_model(data, config)
    return data, spec, y


def _floats(values) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=float).ravel()]


def result_to_dict(result: TestResult, fixed_names, term_names, cfg: ModelConfig) -> dict:
    pql = result.pql
    null = result.null_distribution

    def fit_dict(fit):
        return {
            "ratios": dict(zip(term_names, _floats(fit.ratios))),
            "sigma2": dict(zip(term_names, _floats(fit.sigma2))),
            "sigma2_e": float(fit.sigma2_e),
            "rel": float(fit.rel),
            "converged": bool(fit.converged),
        }

    estimates = {
        "fixed": dict(zip(fixed_names, _floats(pql.beta))),
        "variance_components": dict(zip(term_names, _floats(pql.sigma2))),
        "working_residual_variance": float(pql.sigma2_e),
    }
    if pql.family.kind == expfam.NORMAL:
        estimates["dispersion"] = float(pql.family.dispersion)
    return {
        "schema_version": SCHEMA_VERSION,
        "vcgate_version": __version__,
        "method": result.method,
        "tested_term": cfg.test,
        "family": pql.family.kind,
        "statistic": float(result.statistic),
        "p_value": float(result.p_value),
        "seed": int(cfg.seed),
        "B": int(cfg.B),
        "null_distribution": null.summary(),
        "N": int(result.pql.eta_star.size),
        "p": len(fixed_names),
        "estimates": estimates,
        "pql": {"iterations": int(pql.iterations), "converged": bool(pql.converged),
                "clamped": int(pql.clamped)},
        "null_fit": fit_dict(result.null_fit),
        "alt_fit": fit_dict(result.alt_fit),
        "warnings": list(result.warnings),
    }


def cmd_test(args) -> int:
    cfg = ModelConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.null is not None:
        cfg.null = args.null
    if args.B is not None:
        cfg.B = args.B
    data = Dataset.read_csv(args.data)
    spec, y, fixed_names, term_names, tested = build_model(data, cfg)
    problem = TestProblem(spec, y, tested, cfg.null, cfg.B, cfg.seed)
    result = run_test(problem)
    report = result_to_dict(result, fixed_names, term_names, cfg)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(f"{result.method} {cfg.test}: statistic={result.statistic:.4f} "
          f"p={result.p_value:.4g} (null={report['null_distribution']['kind']}, "
          f"B={cfg.B}, seed={cfg.seed}, N={report['N']})")
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


PROFILES = {
    "desk": {"type1": 1000, "power": 300, "B": DESK_B},
    "paper": {"type1": 5000, "power": 1000, "B": nulldist.DEFAULT_B},
}


def scenarios_from_manifest(manifest: dict, profile: str, seed=None, B=None):
    entries = manifest.get("scenarios")
    if not isinstance(entries, list) or not entries:
        raise IngestionError("manifest has no scenarios")
    prof = PROFILES[profile]
    out = []
    for i, entry in enumerate(entries):
        entry = dict(entry)
        effect = float(entry.get("effect", 0.0))
        default_reps = prof["type1"] if effect == 0 else prof["power"]
        if profile == "paper":
            entry["replicates"] = default_reps
            entry["B"] = prof["B"]
        else:
            entry.setdefault("replicates", default_reps)
            entry.setdefault("B", prof["B"])
        if B is not None:
            entry["B"] = B
        if seed is not None:
            entry["seed"] = seed + i
        if "fixed_effects" in entry:
            entry["fixed_effects"] = tuple(entry["fixed_effects"])
        try:
            out.append(SimScenario(**entry))
        except TypeError as exc:
            raise IngestionError(f"scenario {i}: {exc}") from exc
    return out


def cmd_simulate(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestionError(f"cannot read manifest {args.manifest}: {exc}") from exc
    scenarios = scenarios_from_manifest(manifest, args.profile, args.seed, args.B)
    methods = tuple(manifest.get("methods", METHODS))
    for m in methods:
        if m not in METHODS:
            raise IngestionError(f"unknown method {m!r}; choose from {METHODS}")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)

    def progress(s, rows):
        rates = ", ".join(f"{r.method}={r.rate:.3f}" for r in rows)
        print(f"[{s.label()}] reps={s.replicates} failures={rows[0].failures} "
              f"nonconverged={rows[0].nonconverged} {rates}",
              file=sys.stderr, flush=True)

    table = SimTable(metadata={
        "schema_version": SCHEMA_VERSION,
        "profile": args.profile,
        "replicates_type1": PROFILES[args.profile]["type1"],
        "replicates_power": PROFILES[args.profile]["power"],
        "methods": list(methods),
        "scenarios": [{"label": s.label(), "replicates": s.replicates, "B": s.B,
                       "seed": s.seed} for s in scenarios],
    })
    for s in scenarios:
        table.rows.extend(run_scenario(s, methods, progress))
    table.to_csv(outdir / "simtable.csv")
    table.to_json(outdir / "simtable.json")
    print(f"wrote {outdir / 'simtable.csv'} ({len(table.rows)} rows)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vcgate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--B", type=int)

    t = sub.add_parser("test", parents=[common], help="test one variance component")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out")
    t.add_argument("--null", choices=["finite", "mixture"])
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", parents=[common], help="run simulation scenarios")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    s.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (VcgateError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
