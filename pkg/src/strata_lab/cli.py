"""Command-line entry points: simulate, estimate, sim-study.

Exit codes: 0 ok, 2 invalid input, 3 I/O failure, 4 estimation failure.  Every
failure prints one line ``strata-lab:error:<kind>:<where>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .bench import REPORT_FORMATS, StudyDesign, bootstrap_ci, default_workers, render_report, run_study
from .data import Dataset, Stratum
from .dgp import SimConfig, generate
from .errors import InvalidArgumentError, InvalidEvidenceError, StrataLabError
from .estimate import Evidence, PipelineConfig, run_pipeline
from .numerics.rng import SeedSpec

__all__ = [
    "EXIT_OK",
    "EXIT_INPUT",
    "EXIT_IO",
    "EXIT_ESTIMATION",
    "InputError",
    "load_config",
    "read_dataset",
    "write_dataset",
    "read_evidence",
    "main",
]

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_ESTIMATION = 0, 2, 3, 4
REQUIRED = ("z", "s", "a", "w", "c")


class InputError(Exception):
    """Invalid user input; ``where`` locates it (field path or row number)."""

    def __init__(self, where: str, detail: str):
        super().__init__(f"{where}: {detail}")
        self.where = where
        self.detail = detail


# ---------------------------------------------------------------------------
# configuration


def _schema() -> dict:
    text = resources.files("strata_lab").joinpath("schema/run_config.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_config(path) -> dict:
    """Read and schema-validate a JSON run configuration (unknown keys rejected)."""
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError("config", f"not valid JSON ({exc})") from exc
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/" + "/".join(str(p) for p in err.absolute_path)
        raise InputError(f"config{where}", err.message)
    return cfg


def sim_config(cfg: dict) -> SimConfig:
    block = dict(cfg.get("dgp", {}))
    case = block.pop("case", None)
    try:
        sim = SimConfig(**block)
        return sim.for_case(case) if case else sim
    except InvalidArgumentError as exc:
        raise InputError("config/dgp", str(exc)) from exc


def pipeline_config(cfg: dict, **override) -> PipelineConfig:
    block = {**cfg.get("pipeline", {}), **override}
    for key in ("bridge_instruments", "outcome_instruments"):
        if key in block:
            block[key] = tuple(block[key])
    try:
        return PipelineConfig(**block)
    except InvalidArgumentError as exc:
        raise InputError("config/pipeline", str(exc)) from exc


# ---------------------------------------------------------------------------
# CSV data


def _num(text: str) -> str:
    return format(float(text), ".17g")


def write_dataset(data: Dataset, path, latent: bool = False) -> None:
    """Write z, s, y, a, w, c[, c2, ...][, u, g] with 17 significant digits."""
    cnames = ["c"] + [f"c{j + 1}" for j in range(1, data.k)]
    header = ["z", "s", "y", "a", "w", *cnames]
    if latent:
        if not data.has_latent:
            raise InvalidArgumentError("dataset carries no latent columns")
        header += ["u", "g"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for i in range(data.n):
            y = "" if data.y is None or math.isnan(data.y[i]) else format(data.y[i], ".17g")
            row = [int(data.z[i]), int(data.s[i]), y, format(data.a[i], ".17g"), format(data.w[i], ".17g")]
            row += [format(v, ".17g") for v in data.c[i]]
            if latent:
                row += [format(data.u[i], ".17g"), Stratum(int(data.g[i])).token]
            wr.writerow(row)


def _c_columns(header) -> list:
    extra = sorted(
        (h for h in header if h.startswith("c") and h[1:].isdigit() and int(h[1:]) >= 2), key=lambda h: int(h[1:])
    )
    for j, h in enumerate(extra):
        if h != f"c{j + 2}":
            raise InputError("header", f"extra covariate columns must run c2, c3, ... without gaps (found {h})")
    return ["c", *extra]


def _rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rd = csv.DictReader(fh)
        header = rd.fieldnames or []
        yield header
        yield from rd


def _binary(row, name, lineno):
    val = (row.get(name) or "").strip()
    if val not in ("0", "1"):
        raise InputError(f"row {lineno}", f"{name} must be 0 or 1, got {val!r}")
    return int(val)


def _finite(row, name, lineno):
    val = (row.get(name) or "").strip()
    try:
        x = float(val)
    except ValueError:
        raise InputError(f"row {lineno}", f"{name} must be a decimal number, got {val!r}") from None
    if not math.isfinite(x):
        raise InputError(f"row {lineno}", f"{name} must be finite")
    return x


def read_dataset(path, truncated: bool = False) -> Dataset:
    """Parse and validate a data CSV.  Rows are numbered from 1 after the header.

    A blank y is legal only where s = 0 and only when ``truncated`` is set.
    Optional ``u`` and ``g`` columns are loaded as latent truth.
    """
    it = _rows(path)
    header = next(it)
    missing = [h for h in REQUIRED if h not in header]
    if missing:
        raise InputError("header", f"missing required columns {missing}")
    ccols = _c_columns(header)
    known = set(REQUIRED) | set(ccols) | {"y", "u", "g"}
    unknown = [h for h in header if h not in known]
    if unknown:
        raise InputError("header", f"unknown columns {unknown}")
    has_y = "y" in header
    latent = "g" in header
    cols = {k: [] for k in ("z", "s", "a", "w", "y", "u", "g")}
    cvals = []
    for lineno, row in enumerate(it, start=1):
        z = _binary(row, "z", lineno)
        s = _binary(row, "s", lineno)
        cols["z"].append(z)
        cols["s"].append(s)
        cols["a"].append(_finite(row, "a", lineno))
        cols["w"].append(_finite(row, "w", lineno))
        cvals.append([_finite(row, h, lineno) for h in ccols])
        if has_y:
            raw = (row.get("y") or "").strip()
            if raw == "":
                if s == 1:
                    raise InputError(f"row {lineno}", "y is blank but s = 1")
                if not truncated:
                    raise InputError(f"row {lineno}", "y is blank where s = 0 but truncated mode is off")
                cols["y"].append(float("nan"))
            else:
                cols["y"].append(_finite(row, "y", lineno))
        if latent:
            tok = (row.get("g") or "").strip()
            try:
                cols["g"].append(int(Stratum.from_token(tok)))
            except (ValueError, KeyError):
                raise InputError(f"row {lineno}", f"g must be one of ss, sc, nn; got {tok!r}") from None
            cols["u"].append(_finite(row, "u", lineno) if "u" in header else float("nan"))
    c = np.array(cvals, dtype=float).reshape(len(cvals), len(ccols))
    return Dataset(
        z=cols["z"],
        s=cols["s"],
        a=cols["a"],
        w=cols["w"],
        c=c,
        y=cols["y"] if has_y else None,
        u=cols["u"] if latent and "u" in header else None,
        g=cols["g"] if latent else None,
    )


def read_evidence(path) -> Evidence:
    """Evidence rows (z, s, a, w, c[, c2, ...][, y]); (z, s) must be (1, 1) or (0, 0)."""
    it = _rows(path)
    header = next(it)
    missing = [h for h in REQUIRED if h not in header]
    if missing:
        raise InputError("evidence header", f"missing required columns {missing}")
    ccols = _c_columns(header)
    z, s, a, w, c, y = [], [], [], [], [], []
    for lineno, row in enumerate(it, start=1):
        zi, si = _binary(row, "z", lineno), _binary(row, "s", lineno)
        if zi != si:
            raise InputError(f"evidence row {lineno}", "(z, s) must be (1, 1) for PN or (0, 0) for PS")
        z.append(zi)
        s.append(si)
        a.append(_finite(row, "a", lineno))
        w.append(_finite(row, "w", lineno))
        c.append([_finite(row, h, lineno) for h in ccols])
        raw = (row.get("y") or "").strip()
        if raw == "":
            y.append(float("nan"))
        elif raw in ("0", "1"):
            y.append(float(raw))
        else:
            raise InputError(f"evidence row {lineno}", f"y must be 0, 1 or blank; got {raw!r}")
    if not z:
        raise InputError("evidence", "no rows")
    return Evidence(z=z, s=s, a=a, w=w, c=np.array(c), y=y)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    sim = sim_config(cfg)
    n = args.n if args.n is not None else sim.n
    data = generate(sim, SeedSpec(args.seed), n)
    write_dataset(data, args.out, latent=args.latent)
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    pcfg = pipeline_config(cfg)
    data = read_dataset(args.data, truncated=pcfg.truncated)
    if not data.has_outcome:
        raise InputError("header", "estimation needs a y column")
    pnps_path = args.pnps or cfg.get("io", {}).get("pnps")
    evidence = read_evidence(pnps_path) if pnps_path else None
    if evidence is not None and evidence.c.shape[1] != data.k:
        raise InputError("evidence header", f"evidence has {evidence.c.shape[1]} C columns, data has {data.k}")
    report = run_pipeline(data, pcfg, evidence=evidence)
    boot = cfg.get("bootstrap", {})
    resamples = args.bootstrap if args.bootstrap is not None else boot.get("resamples")
    out = report.to_dict()
    if resamples:
        bs = bootstrap_ci(
            data, pcfg, int(resamples), float(boot.get("level", 0.95)), SeedSpec(int(boot.get("seed", 0))), report
        )
        out["bootstrap"] = bs.to_dict()
    text = json.dumps(out, indent=2, sort_keys=True, default=_jsonable) + "\n"
    _write_text(args.out or cfg.get("io", {}).get("out"), text)
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_sim_study(args) -> int:
    cfg = load_config(args.config)
    if "study" not in cfg:
        raise InputError("config/study", "sim-study needs a study block")
    st = cfg["study"]
    dgp = dict(cfg.get("dgp", {}))
    if "case" in dgp:
        raise InputError("config/dgp/case", "the case is set per study cell")
    pipe = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.get("pipeline", {}).items() if k != "case"}
    try:
        design = StudyDesign(
            cells=tuple((c["n"], c["zeta_u"], c["case"]) for c in st["cells"]),
            reps=st.get("reps", 200),
            boots=st.get("boots", 200),
            seed=st.get("seed", 0),
            level=st.get("level", 0.95),
            dgp=dgp,
            pipeline=pipe,
        )
    except InvalidArgumentError as exc:
        raise InputError("config/study", str(exc)) from exc
    workers = args.threads if args.threads is not None else default_workers()
    result = run_study(design, workers=workers)
    fmt = args.out_format or cfg.get("io", {}).get("format", "markdown")
    _write_text(args.out or cfg.get("io", {}).get("out"), render_report(result, fmt))
    for label in result.failures:
        print(f"strata-lab: cell failed: {label}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="strata-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic dataset to CSV")
    s.add_argument("config", nargs="?", help="JSON run config (dgp block used)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=None, help="override dgp.n")
    s.add_argument("--out", required=True)
    s.add_argument("--latent", action="store_true", help="add latent u and g columns")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="run the estimation pipeline on a CSV dataset")
    e.add_argument("data")
    e.add_argument("config", nargs="?", help="JSON run config (pipeline and bootstrap blocks used)")
    e.add_argument("--bootstrap", type=int, default=None, metavar="N", help="bootstrap resamples (>= 50)")
    e.add_argument("--pnps", default=None, metavar="EVIDENCE_CSV")
    e.add_argument("--out", default=None, help="JSON report path (default stdout)")
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("sim-study", help="run a replication study")
    m.add_argument("config")
    m.add_argument("--threads", type=int, default=None, help="worker processes (env STRATA_LAB_THREADS)")
    m.add_argument("--out-format", choices=REPORT_FORMATS, default=None)
    m.add_argument("--out", default=None)
    m.set_defaults(func=cmd_sim_study)
    return p


def _fail(kind: str, where: str, detail: str, code: int) -> int:
    detail = " ".join(str(detail).split())
    print(f"strata-lab:error:{kind}:{where}: {detail}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        return _fail("input", "--threads", "must be >= 1", EXIT_INPUT)
    try:
        return args.func(args)
    except InputError as exc:
        return _fail("input", exc.where, exc.detail, EXIT_INPUT)
    except (InvalidArgumentError, InvalidEvidenceError) as exc:
        return _fail("input", type(exc).__name__, str(exc), EXIT_INPUT)
    except OSError as exc:
        return _fail("io", getattr(exc, "filename", None) or "file", exc.strerror or str(exc), EXIT_IO)
    except StrataLabError as exc:
        where = getattr(exc, "stage", None) or "estimation"
        kind = type(getattr(exc, "cause", exc)).__name__
        return _fail("estimation", f"{where}:{kind}", str(exc), EXIT_ESTIMATION)


if __name__ == "__main__":
    sys.exit(main())
