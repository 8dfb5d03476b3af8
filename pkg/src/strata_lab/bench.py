"""Bootstrap intervals and the replication study harness."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, Stratum
from .dgp import SimConfig, generate, oracle_truth
from .errors import InvalidArgumentError, StrataLabError, UnreliableInferenceError
from .estimate import EstimateReport, PipelineConfig, run_pipeline
from .models import CASES
from .numerics.rng import SeedSpec, generator

__all__ = [
    "MIN_RESAMPLES",
    "MAX_FAILURE_FRACTION",
    "BootstrapResult",
    "bootstrap_ci",
    "Cell",
    "StudyDesign",
    "CellResult",
    "StudyResult",
    "run_study",
    "emit_report",
    "load_result",
    "REPORT_FORMATS",
    "render_report",
    "summarize",
    "default_workers",
]

MIN_RESAMPLES = 50
MAX_FAILURE_FRACTION = 0.2
REPORT_FORMATS = ("csv", "json", "markdown")
ESTIMANDS = tuple(f"delta_{g.token}" for g in (Stratum.SS, Stratum.SC, Stratum.NN))


@dataclass(frozen=True)
class BootstrapResult:
    level: float
    resamples: int
    failures: int
    point: dict  # estimand -> full-sample estimate
    intervals: dict  # estimand -> (lower, upper)
    draws: dict = field(repr=False, default_factory=dict)  # estimand -> successful resample values

    @property
    def failure_fraction(self) -> float:
        return self.failures / self.resamples

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "resamples": self.resamples,
            "failures": self.failures,
            "failure_fraction": self.failure_fraction,
            "intervals": {k: list(v) for k, v in self.intervals.items()},
        }


def bootstrap_ci(
    data: Dataset,
    cfg: PipelineConfig | None = None,
    resamples: int = 500,
    level: float = 0.95,
    seed: SeedSpec = SeedSpec(0),
    point: EstimateReport | None = None,
) -> BootstrapResult:
    """Percentile intervals from re-running the whole pipeline on case resamples.

    Resample b draws its row indices from ``seed.child(b)``, so endpoints are
    a pure function of (data, cfg, resamples, level, seed).  Resamples whose
    pipeline fails are dropped and counted.  Intervals are widened to contain
    the full-sample estimate when the percentile pair misses it.
    """
    if resamples < MIN_RESAMPLES:
        raise InvalidArgumentError(f"bootstrap needs at least {MIN_RESAMPLES} resamples")
    if not 0.0 < level < 1.0:
        raise InvalidArgumentError("level must lie in (0, 1)")
    cfg = cfg or PipelineConfig()
    quiet = PipelineConfig(**{**cfg.to_dict(), "diagnostics": False})
    if point is None:
        point = run_pipeline(data, quiet)
    names = list(point.estimands())
    draws = {k: [] for k in names}
    failures = 0
    for b in range(resamples):
        idx = generator(seed.child(b)).integers(0, data.n, data.n)
        try:
            rep = run_pipeline(data.take(idx), quiet, start=point)
            vals = rep.estimands()
            if any(k not in vals or not math.isfinite(vals[k]) for k in names):
                raise ArithmeticError("non-finite estimate")
        except (StrataLabError, ArithmeticError, np.linalg.LinAlgError):
            failures += 1
            continue
        for k in names:
            draws[k].append(vals[k])
    if failures > MAX_FAILURE_FRACTION * resamples:
        raise UnreliableInferenceError(
            f"{failures} of {resamples} bootstrap resamples failed (> {MAX_FAILURE_FRACTION:.0%})"
        )
    tail = (1.0 - level) / 2.0
    est = point.estimands()
    intervals = {}
    arrays = {}
    for k in names:
        arr = np.asarray(draws[k])
        arrays[k] = arr
        lo, hi = np.quantile(arr, [tail, 1.0 - tail])
        intervals[k] = (float(min(lo, est[k])), float(max(hi, est[k])))
    return BootstrapResult(level, resamples, failures, est, intervals, arrays)


# ---------------------------------------------------------------------------
# replication study


@dataclass(frozen=True)
class Cell:
    n: int
    zeta_u: float
    case: str

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n > 0):
            raise InvalidArgumentError("cell n must be a positive integer")
        if self.case not in CASES:
            raise InvalidArgumentError(f"cell case must be one of {CASES}")
        object.__setattr__(self, "zeta_u", float(self.zeta_u))

    @property
    def key(self) -> int:
        """Stable stream index: a cell's draws do not depend on the rest of the grid."""
        return zlib.crc32(f"{self.n}|{self.zeta_u!r}|{self.case}".encode())

    def label(self) -> str:
        return f"n={self.n}, zeta_u={self.zeta_u:g}, case ({self.case})"


@dataclass(frozen=True)
class StudyDesign:
    cells: tuple
    reps: int = 200
    boots: int = 200  # 0 disables intervals and coverage
    seed: int = 0
    level: float = 0.95
    dgp: dict = field(default_factory=dict)  # SimConfig overrides shared by all cells
    pipeline: dict = field(default_factory=dict)  # PipelineConfig options besides the case

    def __post_init__(self):
        cells = tuple(c if isinstance(c, Cell) else Cell(*c) for c in self.cells)
        if not cells:
            raise InvalidArgumentError("design has no cells")
        object.__setattr__(self, "cells", cells)
        if not (isinstance(self.reps, int) and self.reps >= 1):
            raise InvalidArgumentError("reps must be >= 1")
        if not (isinstance(self.boots, int) and (self.boots == 0 or self.boots >= MIN_RESAMPLES)):
            raise InvalidArgumentError(f"boots must be 0 or >= {MIN_RESAMPLES}")
        if not 0.0 < self.level < 1.0:
            raise InvalidArgumentError("level must lie in (0, 1)")
        pipe = {k: tuple(v) if isinstance(v, (list, tuple)) else v for k, v in self.pipeline.items()}
        object.__setattr__(self, "pipeline", pipe)
        object.__setattr__(self, "dgp", dict(self.dgp))
        if "case" in self.pipeline:
            raise InvalidArgumentError("the case is set per cell, not in the pipeline block")
        for c in cells:
            self.sim_config(c)
            self.pipeline_config(c)

    def sim_config(self, cell: Cell) -> SimConfig:
        return SimConfig(**{**self.dgp, "zeta_u": cell.zeta_u, "n": cell.n}).for_case(cell.case)

    def pipeline_config(self, cell: Cell) -> PipelineConfig:
        opts = {"link": self.sim_config(cell).link, **self.pipeline, "case": cell.case, "diagnostics": False}
        if self.sim_config(cell).truncated:
            opts["truncated"] = True
        return PipelineConfig(**opts)

    def to_dict(self) -> dict:
        return {
            "cells": [asdict(c) for c in self.cells],
            "reps": self.reps,
            "boots": self.boots,
            "seed": self.seed,
            "level": self.level,
            "dgp": dict(self.dgp),
            "pipeline": {k: list(v) if isinstance(v, tuple) else v for k, v in self.pipeline.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StudyDesign":
        cells = tuple(Cell(int(c["n"]), float(c["zeta_u"]), c["case"]) for c in d["cells"])
        return cls(cells, d["reps"], d["boots"], d["seed"], d["level"], dict(d["dgp"]), dict(d["pipeline"]))


@dataclass(frozen=True)
class CellResult:
    cell: Cell
    truth: dict  # estimand -> true value
    raw: tuple  # per replication: {"rep", "ok", "error", "estimates", "intervals", "boot_failures"}
    summary: dict  # estimand -> {"bias", "sd", "cp", "reps"} on the x100 scale
    failed: bool

    def to_dict(self) -> dict:
        return {
            "cell": asdict(self.cell),
            "truth": self.truth,
            "raw": list(self.raw),
            "summary": self.summary,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        raw = tuple(_normalize_rep(r) for r in d["raw"])
        cell = Cell(int(d["cell"]["n"]), float(d["cell"]["zeta_u"]), d["cell"]["case"])
        return cls(cell, dict(d["truth"]), raw, {k: dict(v) for k, v in d["summary"].items()}, bool(d["failed"]))


def _normalize_rep(r: dict) -> dict:
    out = dict(r)
    if out.get("intervals") is not None:
        out["intervals"] = {k: tuple(v) for k, v in out["intervals"].items()}
    return out


@dataclass(frozen=True)
class StudyResult:
    design: StudyDesign
    cells: tuple

    def to_dict(self) -> dict:
        return {"design": self.design.to_dict(), "cells": [c.to_dict() for c in self.cells]}

    @classmethod
    def from_dict(cls, d: dict) -> "StudyResult":
        return cls(StudyDesign.from_dict(d["design"]), tuple(CellResult.from_dict(c) for c in d["cells"]))

    def cell(self, n: int, zeta_u: float, case: str) -> CellResult:
        for c in self.cells:
            if c.cell == Cell(n, zeta_u, case):
                return c
        raise KeyError((n, zeta_u, case))

    @property
    def failures(self) -> list:
        return [c.cell.label() for c in self.cells if c.failed]


def _truth(cfg: SimConfig, seed: int) -> dict:
    if cfg.link == "linear":
        delta = cfg.true_delta()
    else:
        delta = oracle_truth(cfg, n_mc=200_000, seed=SeedSpec(seed, 0, (1,))).delta_mc
    return {f"delta_{g.token}": float(v) for g, v in delta.items()}


def _replicate(design: StudyDesign, cell: Cell, rep: int) -> dict:
    """One replication: draw, estimate, bootstrap.  Never raises."""
    stream = SeedSpec(design.seed, cell.key, (rep,))
    out = {"rep": rep, "ok": False, "error": None, "estimates": None, "intervals": None, "boot_failures": None}
    cfg = design.pipeline_config(cell)
    try:
        data = generate(design.sim_config(cell), stream.child(0), cell.n)
        point = run_pipeline(data, cfg)
        out["estimates"] = point.estimands()
        if design.boots:
            bs = bootstrap_ci(data, cfg, design.boots, design.level, stream.child(1), point=point)
            out["intervals"] = bs.intervals
            out["boot_failures"] = bs.failures
        out["ok"] = True
    except (StrataLabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def _replicate_task(args):
    return _replicate(*args)


def summarize(truth: dict, raw, with_ci: bool) -> dict:
    """Bias, SD and CP (all x100) per estimand from the successful replications."""
    ok = [r for r in raw if r["ok"]]
    out = {}
    for name, true in truth.items():
        vals = np.array([r["estimates"][name] for r in ok if name in r["estimates"]], dtype=float)
        if vals.size == 0:
            continue
        bias = 100.0 * (float(vals.mean()) - true)
        sd = 100.0 * float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        cp = None
        if with_ci:
            cover = [r["intervals"][name][0] <= true <= r["intervals"][name][1] for r in ok if name in r["intervals"]]
            cp = 100.0 * float(np.mean(cover))
        out[name] = {"bias": bias, "sd": sd, "cp": cp, "reps": int(vals.size)}
    return out


def run_study(design: StudyDesign, workers: int = 1) -> StudyResult:
    """Run every replication of every cell and aggregate per cell.

    Each replication has its own seed stream, so results do not depend on
    ``workers`` or on the order in which tasks finish.
    """
    if not (isinstance(workers, int) and workers >= 1):
        raise InvalidArgumentError("workers must be a positive integer")
    tasks = [(design, cell, r) for cell in design.cells for r in range(design.reps)]
    if workers == 1:
        raws = [_replicate_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raws = list(pool.map(_replicate_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    cells = []
    for j, cell in enumerate(design.cells):
        raw = tuple(raws[j * design.reps : (j + 1) * design.reps])
        truth = _truth(design.sim_config(cell), design.seed)
        if design.pipeline_config(cell).truncated:
            truth = {"delta_ss": truth["delta_ss"]}
        failed = not any(r["ok"] for r in raw)
        summary = {} if failed else summarize(truth, raw, design.boots > 0)
        cells.append(CellResult(cell, truth, raw, summary, failed))
    return StudyResult(design, tuple(cells))


# ---------------------------------------------------------------------------
# reports


def _fmt(v, digits=1):
    return "" if v is None else f"{v:.{digits}f}"


def _csv_text(result: StudyResult) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["n", "zeta_u", "case", "estimand", "truth", "bias_x100", "sd_x100", "cp_x100", "reps_ok", "reps_failed", "failed"])
    for c in result.cells:
        failed_reps = sum(not r["ok"] for r in c.raw)
        names = list(c.truth) if c.failed else list(c.summary)
        for name in names:
            s = c.summary.get(name, {})
            wr.writerow(
                [
                    c.cell.n,
                    repr(c.cell.zeta_u),
                    c.cell.case,
                    name,
                    repr(c.truth[name]),
                    "" if not s else repr(s["bias"]),
                    "" if not s else repr(s["sd"]),
                    "" if s.get("cp") is None else repr(s["cp"]),
                    s.get("reps", 0),
                    failed_reps,
                    int(c.failed),
                ]
            )
    return buf.getvalue()


def _markdown_text(result: StudyResult) -> str:
    names = [e for e in ESTIMANDS if any(e in c.truth for c in result.cells)]
    heads = ["n", "zeta_u", "case"]
    sub = ["", "", ""]
    for name in names:
        heads += [name, "", ""]
        sub += ["Bias", "Sd", "CP"]
    lines = ["| " + " | ".join(heads) + " |", "|" + "---|" * len(heads), "| " + " | ".join(sub) + " |"]
    for c in result.cells:
        row = [str(c.cell.n), f"{c.cell.zeta_u:g}", f"({c.cell.case})"]
        for name in names:
            s = c.summary.get(name)
            row += ["failed" if c.failed else "", "", ""] if s is None else [_fmt(s["bias"]), _fmt(s["sd"]), _fmt(s["cp"])]
        lines.append("| " + " | ".join(row) + " |")
    if result.failures:
        lines += ["", "Failed cells: " + "; ".join(result.failures)]
    return "\n".join(lines) + "\n"


def render_report(result: StudyResult, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return _csv_text(result)
    if fmt == "markdown":
        return _markdown_text(result)
    raise InvalidArgumentError(f"format must be one of {REPORT_FORMATS}")


def emit_report(result: StudyResult, fmt: str, path) -> Path:
    """Write the study report; raises OSError when the path is not writable."""
    text = render_report(result, fmt)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def load_result(path) -> StudyResult:
    with open(path, encoding="utf-8") as fh:
        return StudyResult.from_dict(json.load(fh))


def default_workers() -> int:
    env = os.environ.get("STRATA_LAB_THREADS")
    return int(env) if env and env.isdigit() and int(env) > 0 else 1
