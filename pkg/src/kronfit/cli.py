"""Command-line front end: ``kronfit {estimate,test,simulate}``.

Results are written as one JSON document. Floats are serialized with
``repr`` so every value reads back bit-for-bit, and no timestamps are
included, so identical inputs give byte-identical output.

Exit codes: 0 success, 2 bad input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .design import FactorDims, build_design, theta_to_correlation, theta_to_factor_logs
from .errors import (
    DataError,
    EmptyFile,
    KronfitError,
    NonNumericCell,
    NotOveridentified,
    NumericalError,
    RaggedRows,
    UnsupportedFactorDim,
)
from .infer import EstimateReport, overid_test
from .matfun import eig_tol, spd_exp
from .mc import DgpSpec, StudyOptions, kronecker_theta, run_study
from .mdest import WeightSpec, md_estimate
from .moments import Panel, Regime, compute_moments
from .qmle import LikelihoodContext, one_step
from .shrink import renormalize, shrink_model

__all__ = ["RunConfig", "ingest_csv", "main", "run"]

EXIT_OK, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3


def _parse_float(text: str) -> float | None:
    try:
        value = float(text)
    except ValueError:
        return None
    return value


def ingest_csv(path) -> Panel:
    """Read a numeric CSV (rows are time points) into a :class:`Panel`.

    A first row in which no cell parses as a number is taken as a header.
    Blank lines are skipped. Row numbers in errors are 1-based file lines.

    Raises
    ------
    EmptyFile, RaggedRows, NonNumericCell
    """
    text = Path(path).read_text(encoding="utf-8-sig")
    rows = [(i + 1, r) for i, r in enumerate(csv.reader(io.StringIO(text)))
            if r and any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyFile(f"{path}: no data")
    names = None
    first_line, first = rows[0]
    if all(_parse_float(c.strip()) is None for c in first):
        names = tuple(c.strip() for c in first)
        rows = rows[1:]
        if not rows:
            raise EmptyFile(f"{path}: header but no data rows")
    width = len(names) if names is not None else len(rows[0][1])
    data = np.empty((len(rows), width))
    for k, (line, row) in enumerate(rows):
        if len(row) != width:
            raise RaggedRows(line, width, len(row))
        for j, cell in enumerate(row):
            value = _parse_float(cell.strip())
            if value is None or not math.isfinite(value):
                raise NonNumericCell(line, j + 1, cell)
            data[k, j] = value
    return Panel(data, names)


# name -> (default, description); every field is echoed in the output
_DEFAULTS = {
    "input": None,
    "dims": None,
    "weight": "identity",
    "regime": "estimated-d",
    "d_known": None,
    "estimators": "md,onestep",
    "shrink": "none",
    "out": None,
    "csv_out": None,
    "seed": 0,
    "reps": 200,
    "workers": 1,
    "T": 2000,
    "correlations": None,
    "d0": "1",
    "innovation": "gaussian",
    "corr_shift": 0.0,
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration with the source (default, config, flag) of every field."""

    subcommand: str
    values: dict
    sources: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def echo(self) -> dict:
        return {k: {"value": self.values[k], "source": self.sources[k]}
                for k in sorted(self.values)}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kronfit", description="Kronecker correlation estimation")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values (flags take precedence)")
        sp.add_argument("--dims", help="factor dimensions, e.g. 2x2x3")
        sp.add_argument("--out", help="output JSON path (default: stdout)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--weight", help="identity, optimal or file:PATH (whitespace matrix)")
        sp.add_argument("--regime", choices=["known-d", "estimated-d"])
        sp.add_argument("--d-known", dest="d_known", help="comma-separated known variances")

    est = sub.add_parser("estimate", help="estimate theta from a CSV panel")
    common(est)
    est.add_argument("input", nargs="?")
    est.add_argument("--estimators", help="comma list from {md,onestep}")
    est.add_argument("--shrink", choices=["none", "renorm", "2x2"])
    est.add_argument("--csv-out", dest="csv_out", help="also write theta with standard errors as CSV")

    tst = sub.add_parser("test", help="over-identification test of the Kronecker structure")
    common(tst)
    tst.add_argument("input", nargs="?")

    sim = sub.add_parser("simulate", help="Monte Carlo study on a Kronecker DGP")
    common(sim)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--workers", type=int)
    sim.add_argument("--T", dest="T", type=int)
    sim.add_argument("--correlations", help="comma list, common off-diagonal per factor")
    sim.add_argument("--d0", help="comma list of true variances (or one value)")
    sim.add_argument("--innovation", help="gaussian or t:DF")
    sim.add_argument("--corr-shift", dest="corr_shift", type=float)
    return p


def _resolve(args: argparse.Namespace) -> RunConfig:
    cli = {k: v for k, v in vars(args).items() if k not in ("subcommand", "config")}
    file_values = {}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_values, dict):
            raise DataError("config file must hold a JSON object")
        unknown = sorted(set(file_values) - set(_DEFAULTS))
        if unknown:
            raise DataError(f"unknown config keys: {unknown}")
    values, sources = {}, {}
    for key, default in _DEFAULTS.items():
        if cli.get(key) is not None:
            values[key], sources[key] = cli[key], "flag"
        elif key in file_values:
            values[key], sources[key] = file_values[key], "config"
        else:
            values[key], sources[key] = default, "default"
    return RunConfig(args.subcommand, values, sources)


def _floats(text, name: str) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise DataError(f"--{name.replace('_', '-')}: expected comma-separated numbers") from None


def _weight(cfg: RunConfig) -> WeightSpec:
    w = str(cfg.weight)
    if w == "identity":
        return WeightSpec.identity()
    if w == "optimal":
        return WeightSpec.optimal()
    if w.startswith("file:"):
        try:
            m = np.loadtxt(w[5:], ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read weight file: {exc}") from None
        return WeightSpec.supplied(m)
    raise DataError(f"unknown weight {w!r}")


def _mat(a) -> list:
    return [[float(x) for x in row] for row in np.asarray(a)]


def _vecl(a) -> list:
    return [float(x) for x in np.asarray(a).reshape(-1)]


def _provenance(cfg: RunConfig) -> dict:
    return {
        "subcommand": cfg.subcommand,
        "config": cfg.echo(),
        "eig_tol": eig_tol(),
        "versions": {
            "kronfit": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def _load(cfg: RunConfig):
    if cfg.input is None:
        raise DataError("an input CSV path is required")
    if cfg.dims is None:
        raise DataError("--dims is required")
    try:
        panel = ingest_csv(cfg.input)
    except OSError as exc:
        raise DataError(f"cannot read {cfg.input}: {exc}") from None
    design = build_design(FactorDims.parse(str(cfg.dims)))
    if panel.n != design.n:
        raise DataError(f"panel has {panel.n} series but dims {design.dims} need {design.n}")
    mom = compute_moments(panel)
    regime = Regime(cfg.regime)
    if cfg.d_known is not None:
        mom = mom.with_known_d(_floats(cfg.d_known, "d_known"))
    elif regime is Regime.KNOWN_D:
        raise DataError("--regime known-d needs --d-known")
    return panel, design, mom, regime


def _test_dict(res) -> dict:
    return {
        "statistic": res.statistic,
        "df": res.df,
        "p_chi2": res.p_chi2,
        "z_diag": res.z_diag,
        "p_normal": res.p_normal,
        "p_normal_two_sided": res.p_normal_two_sided,
        "regime": res.regime,
        "clipped_eigenvalues": res.clipped,
    }


def _estimate(cfg: RunConfig) -> dict:
    panel, design, mom, regime = _load(cfg)
    estimators = {e.strip() for e in str(cfg.estimators).split(",") if e.strip()}
    if not estimators <= {"md", "onestep"}:
        raise DataError(f"unknown estimators: {sorted(estimators - {'md', 'onestep'})}")
    if cfg.shrink == "2x2" and any(d != 2 for d in design.dims.dims):
        raise UnsupportedFactorDim("--shrink 2x2 needs every factor to be 2 x 2")
    md = md_estimate(mom, design, _weight(cfg), regime)
    doc = {
        "dims": list(design.dims.dims),
        "n": design.n,
        "T": panel.T,
        "s": design.s,
        "series": list(panel.names) if panel.names else None,
        "labels": design.labels(),
        "md": {
            "theta": _vecl(md.theta),
            "se": _vecl(md.se),
            "J": _mat(md.J),
            "weight": md.weight.kind.value,
            "regime": md.regime.value,
            "clipped_eigenvalues": md.clipped,
        },
    }
    os_ = None
    if "onestep" in estimators:
        ctx = LikelihoodContext.from_moments(mom, design, regime)
        os_ = one_step(md, ctx)
        doc["onestep"] = {
            "theta": _vecl(os_.theta),
            "se": _vecl(os_.se),
            "upsilon": _mat(os_.upsilon),
            "variance": _mat(os_.variance),
        }
    corr, dev = theta_to_correlation(design, md.theta)
    doc["theta_matrix"] = _mat(corr.array)
    doc["max_diag_deviation"] = dev
    raw = [spd_exp(lg).array for lg in theta_to_factor_logs(design, md.theta)]
    factors = {"raw": [_mat(f) for f in raw], "shrunk": None}
    if cfg.shrink == "renorm":
        shrunk = renormalize(corr)
        factors["shrunk"] = [_mat(renormalize(f).array) for f in raw]
        doc["shrunk_matrix"] = _mat(shrunk.array)
    elif cfg.shrink == "2x2":
        sm = shrink_model(design, md.theta)
        factors["shrunk"] = [_mat(f) for f in sm.factors]
        doc["shrunk_matrix"] = _mat(sm.matrix.array)
    doc["factors"] = factors
    try:
        doc["overid"] = _test_dict(overid_test(md, mom, design, regime))
    except NotOveridentified as exc:
        doc["overid"] = {"error": "NotOveridentified", "message": str(exc)}
    if cfg.csv_out:
        _write_csv(cfg.csv_out, EstimateReport.build(md, os_))
    return doc


def _write_csv(path, report: EstimateReport) -> None:
    rows = report.rows()
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _test(cfg: RunConfig) -> dict:
    _, design, mom, regime = _load(cfg)
    res = overid_test(None, mom, design, regime)
    return {"dims": list(design.dims.dims), "T": mom.T, "overid": _test_dict(res),
            "theta": _vecl(res.theta)}


def _innovation(text):
    text = str(text)
    if text == "gaussian":
        return "gaussian"
    if text.startswith("t:"):
        return ("t", float(text[2:]))
    raise DataError(f"unknown innovation {text!r}")


def _simulate(cfg: RunConfig) -> dict:
    if cfg.dims is None:
        raise DataError("--dims is required")
    dims = FactorDims.parse(str(cfg.dims))
    corr = _floats(cfg.correlations, "correlations") if cfg.correlations is not None \
        else [0.5] * dims.v
    if len(corr) != dims.v:
        raise DataError(f"need {dims.v} correlations, got {len(corr)}")
    d0 = _floats(cfg.d0, "d0")
    spec = DgpSpec(dims, kronecker_theta(dims, corr), d0 if len(d0) > 1 else d0[0],
                   int(cfg.T), int(cfg.seed), _innovation(cfg.innovation),
                   corr_shift=float(cfg.corr_shift))
    opts = StudyOptions(overid_regime=Regime(cfg.regime))
    summary = run_study(spec, int(cfg.reps), opts, workers=int(cfg.workers))
    return {"dims": list(dims.dims), "theta0": _vecl(spec.theta0), "summary": summary.to_dict()}


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    """Execute ``cfg`` and return the process exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    handler = {"estimate": _estimate, "test": _test, "simulate": _simulate}[cfg.subcommand]
    try:
        doc = handler(cfg)
    except DataError as exc:
        print(f"kronfit: data error ({type(exc).__name__}): {exc}", file=stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"kronfit: numerical error ({type(exc).__name__}): {exc}", file=stderr)
        return EXIT_NUMERICAL
    doc = {"provenance": _provenance(cfg), **doc}
    text = json.dumps(doc, indent=2, allow_nan=True) + "\n"
    if cfg.out:
        try:
            Path(cfg.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            print(f"kronfit: data error: cannot write {cfg.out}: {exc}", file=stderr)
            return EXIT_DATA
    else:
        stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
    except KronfitError as exc:
        print(f"kronfit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
