"""Seeded experiment runner and report assembly.

Monte Carlo work is split into batches; batch ``i`` always draws from
``stream(seed, i)`` and partial results are merged in batch order, so serial
and pooled runs produce identical reports.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .ces import sample_nc_ces
from .config import (
    ConfigError, ExperimentConfig, build_doa_model, build_generator, build_param_model, model_dimension,
)
from .doa import (
    DoaModel, build_nc_projector_bundle, build_projector_bundle, scrb_circular, scrb_from_general,
    scrb_noncircular, scrb_noncircular_from_general,
)
from .errors import CesBoundError
from .fisher import ScoreMoments, _score_batch, fim_ncces
from .generators import xi_coefficients
from .rng import batch_sizes, stream

SE_MULTIPLE = 3.0
QUAD_TOL = 1e-8
SCRB_RTOL = {"circular": 1e-8, "noncircular": 1e-6}
ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class Record:
    """One checked quantity. ``tolerance`` is absolute; statistical ones are ``3 * stderr``."""

    name: str
    analytic: float
    empirical: float
    stderr: float | None
    tolerance: float
    passed: bool

    @classmethod
    def algebraic(cls, name, analytic, empirical, tolerance):
        a, e = float(analytic), float(empirical)
        return cls(name, a, e, None, float(tolerance), bool(abs(a - e) <= tolerance))

    @classmethod
    def relative(cls, name, analytic, empirical, rtol):
        return cls.algebraic(name, analytic, empirical, rtol * max(abs(float(analytic)), 1e-300))

    @classmethod
    def statistical(cls, name, analytic, empirical, stderr, k=SE_MULTIPLE):
        a, e, s = float(analytic), float(empirical), float(stderr)
        return cls(name, a, e, s, k * s, bool(abs(a - e) <= k * s))


@dataclass
class Report:
    kind: str
    records: list[Record] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def summary(self) -> dict:
        failed = sum(not r.passed for r in self.records)
        return {"total": len(self.records), "failed": failed, "passed": failed == 0}

    def body(self) -> dict:
        """Everything except wall time; byte-stable for a given config and seed."""
        meta = {k: v for k, v in self.metadata.items() if k != "wall_time"}
        return {
            "kind": self.kind, "records": [asdict(r) for r in self.records],
            "summary": self.summary(), "metadata": meta,
        }

    def body_json(self) -> str:
        return json.dumps(_finite(self.body()), sort_keys=True, indent=2)

    def to_json(self) -> str:
        full = self.body()
        full["metadata"] = dict(self.metadata)
        return json.dumps(_finite(full), sort_keys=True, indent=2)


def _finite(obj):
    # JSON has no NaN/Infinity; encode them as strings
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


# -- Monte Carlo plumbing ----------------------------------------------------

def mc_reduce(n: int, seed: int, batch: int, work: Callable, merge: Callable, workers: int = 1,
              key: Sequence[int] = ()):
    """Run ``work(rng, size)`` over batches of ``n`` draws and fold with ``merge`` in batch order."""
    sizes = batch_sizes(n, batch)
    jobs = [(stream(seed, *key, i), size) for i, size in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: work(*job), jobs))
    else:
        parts = [work(*job) for job in jobs]
    acc = parts[0]
    for part in parts[1:]:
        acc = merge(acc, part)
    return acc


@dataclass
class Moments:
    """Running first and second moments of several scalar statistics."""

    n: int
    s1: np.ndarray
    s2: np.ndarray

    @classmethod
    def of(cls, values: np.ndarray) -> "Moments":
        values = np.asarray(values, dtype=float)
        return cls(values.shape[0], values.sum(axis=0), (values * values).sum(axis=0))

    def merge(self, other: "Moments") -> "Moments":
        return Moments(self.n + other.n, self.s1 + other.s1, self.s2 + other.s2)

    @property
    def mean(self):
        return self.s1 / self.n

    @property
    def stderr(self):
        var = np.clip(self.s2 / self.n - self.mean**2, 0.0, None) * self.n / (self.n - 1)
        return np.sqrt(var / self.n)


# -- experiments -------------------------------------------------------------

def _xi_records(cfg: ExperimentConfig) -> list[Record]:
    gen = build_generator(cfg)
    m = model_dimension(cfg)
    xi = xi_coefficients(gen, m)
    records = []
    e_qphi = gen.expect(lambda q: q * float(gen.phi(q, m)), m)
    records.append(Record.algebraic("E[Q phi(Q)] quadrature", -m, e_qphi, QUAD_TOL))
    if gen.finite_mean:
        records.append(Record.algebraic("E[Q] quadrature", m, gen.expect(lambda q: q, m), QUAD_TOL))
    if hasattr(gen, "xi_closed_form"):
        closed = gen.xi_closed_form(m)
        records.append(Record.relative("xi1 closed form", closed.xi1, xi.xi1, QUAD_TOL))
        records.append(Record.relative("xi2 closed form", closed.xi2, xi.xi2, QUAD_TOL))
    records.append(Record.algebraic("xi1 shortfall below 1", 0.0, max(0.0, 1.0 - xi.xi1), 1e-9))

    def work(rng, size):
        q = gen.sample_q(m, size, rng)
        phi = gen.phi(q, m)
        cols = [q * phi**2 / m, (q * phi) ** 2 / (m * (m + 1)), q * phi]
        if gen.finite_mean and getattr(gen, "nu", math.inf) > 4:
            cols.append(q)
        return Moments.of(np.stack(cols, axis=1))

    mom = mc_reduce(cfg.samples, cfg.seed, cfg.batch, work, Moments.merge, cfg.workers)
    names = ["xi1", "xi2", "E[Q phi(Q)]", "E[Q]"]
    targets = [xi.xi1, xi.xi2, -m, m]
    for j in range(mom.mean.shape[0]):
        records.append(Record.statistical(f"{names[j]} monte carlo", targets[j], mom.mean[j], mom.stderr[j]))
    return records


def _fim_records(cfg: ExperimentConfig) -> list[Record]:
    pm = build_param_model(cfg)
    model = pm.model()
    xi = xi_coefficients(model.generator, model.m)
    fim = fim_ncces(pm, xi).entries
    mus, gammas = pm.derivatives()

    def work(rng, size):
        z = sample_nc_ces(model, size, rng)
        return ScoreMoments(pm.size).add(_score_batch(z, model, mus, gammas))

    emp = mc_reduce(cfg.samples, cfg.seed, cfg.batch, work, ScoreMoments.merge, cfg.workers).result()
    names = pm.names or tuple(f"alpha{k}" for k in range(pm.size))
    records = []
    for k in range(pm.size):
        records.append(Record.statistical(f"score mean {names[k]}", 0.0, emp.score_mean[k], emp.score_stderr[k]))
    for k in range(pm.size):
        for l in range(k, pm.size):
            records.append(Record.statistical(
                f"fim[{names[k]},{names[l]}]", fim[k, l], emp.entries[k, l], emp.stderr[k, l]))
    return records


def _scrb_records(cfg: ExperimentConfig) -> list[Record]:
    model = build_doa_model(cfg)
    xi2 = cfg.model.get("xi2")
    if xi2 is None:
        xi2 = xi_coefficients(build_generator(cfg), model.m).xi2
    xi2 = float(xi2)
    circular = isinstance(model, DoaModel)
    if circular:
        bound, oracle = scrb_circular(model, xi2), scrb_from_general(model, xi2)
        bundle = build_projector_bundle(model, xi2)
        labels = [f"theta{k}" for k in range(model.k)]
    else:
        bound, oracle = scrb_noncircular(model, xi2), scrb_noncircular_from_general(model, xi2)
        bundle = build_nc_projector_bundle(model, xi2)
        labels = [f"theta{k}" for k in range(model.k)] + [f"phi{k}" for k in range(model.k)]
    rtol = SCRB_RTOL["circular" if circular else "noncircular"]
    scale = float(np.max(np.abs(oracle)))
    records = []
    for k in range(bound.shape[0]):
        for l in range(k, bound.shape[0]):
            records.append(Record.algebraic(f"crb[{labels[k]},{labels[l]}]", bound[k, l], oracle[k, l], rtol * scale))
    resid = float(np.max(bundle.orthogonality_residual()))
    records.append(Record.algebraic("orthogonality residual", 0.0, resid, ORTHO_TOL))
    return records


def _validate_records(cfg: ExperimentConfig) -> list[Record]:
    from .checks import run_all

    return run_all(cfg.seed, cfg.samples, cfg.batch, cfg.workers)


_RUNNERS = {"xi": _xi_records, "fim": _fim_records, "scrb": _scrb_records, "validate": _validate_records}


class ExperimentError(CesBoundError):
    """A numeric failure while running an experiment; carries the experiment context."""


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> Report:
    """Run ``cfg`` and return its report (written to ``cfg.output_path`` when set)."""
    start = time.perf_counter()
    try:
        records = _RUNNERS[cfg.kind](cfg)
    except ConfigError:
        raise
    except (CesBoundError, np.linalg.LinAlgError, ArithmeticError) as exc:
        raise ExperimentError(f"{cfg.kind} experiment (seed {cfg.seed}): {exc}") from exc
    report = Report(cfg.kind, records, {
        "config_hash": cfg.digest(), "seed": cfg.seed, "samples": cfg.samples,
        "backend": kernels.BACKEND, "wall_time": time.perf_counter() - start,
    })
    if write and cfg.output_path:
        write_reports(cfg, [({}, report)])
    return report


@dataclass
class SweepResult:
    axes: list[str]
    points: list[tuple[dict, Report]]

    @property
    def passed(self) -> bool:
        return all(r.passed for _, r in self.points)


def sweep(cfg: ExperimentConfig, write: bool = True) -> SweepResult:
    """One report per point of the Cartesian grid over ``cfg.sweep``."""
    if not cfg.sweep:
        raise ConfigError("sweep grid is empty", ("sweep",))
    axes = [axis["path"] for axis in cfg.sweep]
    grid = list(itertools.product(*(axis["values"] for axis in cfg.sweep)))

    def run_point(values):
        point_cfg = cfg
        for path, value in zip(axes, values):
            point_cfg = point_cfg.with_value(path, value)
        point_cfg.sweep, point_cfg.workers = [], 1
        return dict(zip(axes, values)), run_experiment(point_cfg, write=False)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            points = list(pool.map(run_point, grid))
    else:
        points = [run_point(values) for values in grid]
    result = SweepResult(axes, points)
    if write and cfg.output_path:
        write_reports(cfg, points, axes)
    return result


CSV_FIELDS = ["name", "analytic", "empirical", "stderr", "tolerance", "passed"]


def to_csv(points, axes: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*axes, *CSV_FIELDS])
    for values, report in points:
        for r in report.records:
            row = asdict(r)
            writer.writerow([*(repr(values[a]) for a in axes),
                             *(repr(row[f]) if isinstance(row[f], float) else row[f] for f in CSV_FIELDS)])
    return buf.getvalue()


def render(cfg: ExperimentConfig, points, axes: Sequence[str] = ()) -> str:
    if cfg.output_format == "csv":
        return to_csv(points, axes)
    if not axes:
        return points[0][1].to_json() + "\n"
    payload = {"axes": list(axes), "points": [
        {"values": values, "report": json.loads(report.to_json())} for values, report in points]}
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_reports(cfg: ExperimentConfig, points, axes: Sequence[str] = ()) -> Path:
    path = Path(cfg.output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render(cfg, points, axes))
    return path
