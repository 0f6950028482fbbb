"""Multi-start experiments: seeded batches of runs, Pareto fronts and result files.

Seeds. Every random stream is derived from the master seed with
``numpy.random.SeedSequence``:

* uncertainty matrices of delta index ``d``: ``SeedSequence([master, 0, d])``
* start point of run ``r`` at delta index ``d``: ``SeedSequence([master, 1, d, r])``

The 64-bit integer recorded for each stream is the first word of
``generate_state`` and reproduces it through ``numpy.random.default_rng``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import ConfigurationError, PDFPMError, UsageError
from .model import ProblemSpec, Zero, eval_F, load_problem
from .robust import UncertaintySpec, gen_uncertainty, robustify
from .solver import SolverConfig, Status, run

__all__ = [
    "ExperimentSpec",
    "RunRecord",
    "SettingReport",
    "ExperimentReport",
    "PUBLISHED_TABLE",
    "child_seed",
    "run_experiment",
    "pareto_filter",
    "count_outcomes",
    "emit_csv",
    "emit_svg",
    "objective_grid",
    "comparison_table",
]

log = logging.getLogger(__name__)

PARETO_TOL = 1e-12
DEDUP_TOL = 1e-6
DEFAULT_GRID = 201
DEFAULT_DELTAS = (0.0, 0.02, 0.05, 0.1)
# successes out of 200 runs for delta = 0, 0.02, 0.05, 0.1
PUBLISHED_TABLE = {
    "aas1": {0.0: 132, 0.02: 149, 0.05: 150, 0.1: 141},
    "aas2": {0.0: 187, 0.02: 191, 0.05: 198, 0.1: 193},
}
ERROR_STATUS = "error"


def child_seed(master, *path):
    """64-bit seed of the stream identified by ``(master, *path)``."""
    ss = np.random.SeedSequence([int(master), *map(int, path)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentSpec:
    problem: object = "aas1"  # preset name, path of a problem document, or a ProblemSpec
    deltas: tuple = DEFAULT_DELTAS
    runs: int = 200
    seed: int = 0
    config: SolverConfig = SolverConfig()
    out_dir: Optional[Path] = None
    x0: Optional[tuple] = None  # force this start for every run
    plot: bool = False
    grid: int = DEFAULT_GRID

    def __post_init__(self):
        if int(self.runs) != self.runs or self.runs < 1:
            raise ConfigurationError(f"runs must be a positive integer, got {self.runs}")
        deltas = tuple(float(d) for d in self.deltas)
        if not deltas:
            raise ConfigurationError("need at least one delta")
        if any(not (math.isfinite(d) and d >= 0) for d in deltas):
            raise ConfigurationError(f"deltas must be finite and nonnegative, got {deltas}")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigurationError(f"seed must be a nonnegative integer, got {self.seed}")
        if self.plot and self.grid < 1:
            raise ConfigurationError(f"grid resolution must be positive, got {self.grid}")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "runs", int(self.runs))
        if self.out_dir is not None:
            object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def base_problem(self) -> ProblemSpec:
        if isinstance(self.problem, ProblemSpec):
            return self.problem
        return load_problem(self.problem)


@dataclass
class RunRecord:
    run_id: int
    seed: int
    x0: np.ndarray
    status: str
    iterations: int
    sigma_final: float
    xstar: np.ndarray
    F: np.ndarray
    certificate: float = math.nan
    message: str = ""

    @property
    def converged(self):
        return self.status == Status.CONVERGED.value


@dataclass
class SettingReport:
    problem: str
    delta: float
    uncertainty: UncertaintySpec
    records: list
    success: int = 0
    distinct: int = 0
    front: list = field(default_factory=list)  # indices into records

    @property
    def runs(self):
        return len(self.records)

    @property
    def success_rate(self):
        return self.success / self.runs if self.runs else 0.0

    def front_records(self):
        return [self.records[i] for i in self.front]


@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    settings: list = field(default_factory=list)
    files: list = field(default_factory=list)


def _one_run(problem, config, run_id, seed, x0):
    try:
        res = run(problem, x0, config)
    except PDFPMError as exc:
        log.warning("run %d failed: %s", run_id, exc)
        nan = np.full(problem.n, np.nan)
        return RunRecord(run_id, seed, x0, ERROR_STATUS, 0, math.nan, nan, np.full(problem.m, np.nan),
                         message=str(exc))
    cert = res.certificate if res.certificate is not None else math.nan
    return RunRecord(run_id, seed, x0, res.status.value, res.accepted_steps, res.sigma_final,
                     res.x, res.F, cert, res.message)


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Run every (delta, start) combination and write the result files if an output dir is set."""
    base = spec.base_problem()
    if not all(isinstance(h, Zero) for h in base.nonsmooth):
        raise ConfigurationError("experiments need a base problem without nonsmooth parts")
    report = ExperimentReport(spec)
    lo, hi = base.start_box[:, 0], base.start_box[:, 1]
    for d_idx, delta in enumerate(spec.deltas):
        u = gen_uncertainty(child_seed(spec.seed, 0, d_idx), base.n, base.m).with_delta(delta)
        problem = robustify(base, u, delta)
        records = []
        for r in range(spec.runs):
            seed = child_seed(spec.seed, 1, d_idx, r)
            if spec.x0 is not None:
                x0 = np.array(spec.x0)
            else:
                x0 = np.random.default_rng(seed).uniform(lo, hi)
            records.append(_one_run(problem, spec.config, r, seed, x0))
        setting = SettingReport(base.name, delta, u, records)
        setting.success, setting.distinct = count_outcomes(records)
        conv = [i for i, rec in enumerate(records) if rec.converged]
        setting.front = [conv[i] for i in pareto_filter([records[i].F for i in conv])]
        log.info("%s delta=%g: %d/%d converged, %d distinct, %d on the front",
                 base.name, delta, setting.success, setting.runs, setting.distinct, len(setting.front))
        report.settings.append(setting)
    if spec.out_dir is not None:
        spec.out_dir.mkdir(parents=True, exist_ok=True)
        report.files.extend(emit_csv(report, spec.out_dir))
        report.files.append(write_config_echo(report, spec.out_dir))
        if spec.plot:
            if base.m == 2:
                report.files.extend(emit_svg(report, spec.grid, spec.out_dir))
            else:
                log.warning("plots need two objectives; %d given, SVG output skipped", base.m)
    return report


def pareto_filter(points: Sequence[Sequence[float]], tol: float = PARETO_TOL) -> list:
    """Indices of the nondominated points.

    ``v`` dominates ``u`` when ``v <= u + tol`` in every component and
    ``v < u - tol`` in at least one. Points equal within ``tol`` in every
    component are duplicates; only the first one is kept.
    """
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return []
    P = P.reshape(len(points), -1)
    if not np.all(np.isfinite(P)):
        raise ConfigurationError("pareto_filter needs finite points")
    le = np.all(P[None, :, :] <= P[:, None, :] + tol, axis=2)  # le[i, k]: P[k] <= P[i]
    lt = np.any(P[None, :, :] < P[:, None, :] - tol, axis=2)
    dominated = np.any(le & lt, axis=1)
    same = np.all(np.abs(P[None, :, :] - P[:, None, :]) <= tol, axis=2)
    earlier_twin = np.any(np.tril(same, k=-1), axis=1)
    return [int(i) for i in np.flatnonzero(~dominated & ~earlier_twin)]


def count_outcomes(records, tol: float = DEDUP_TOL):
    """(converged runs, converged runs with distinct final points at Euclidean tolerance ``tol``)."""
    kept = []
    success = 0
    for rec in records:
        if not rec.converged:
            continue
        success += 1
        x = np.asarray(rec.xstar, dtype=float)
        if all(np.linalg.norm(x - y) > tol for y in kept):
            kept.append(x)
    return success, len(kept)


# -- files ---------------------------------------------------------------------


def _num(v):
    return "%.17e" % float(v)


def _tag(delta):
    return f"{delta:g}"


def _writer(path):
    fh = open(path, "w", newline="", encoding="utf-8")
    return fh, csv.writer(fh, lineterminator="\n")


def emit_csv(report: ExperimentReport, out_dir) -> list:
    """Write runs_/front_ files per setting and summary.csv; return the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for st in report.settings:
        n = len(st.records[0].x0) if st.records else 0
        m = st.uncertainty.m
        path = out_dir / f"runs_{st.problem}_{_tag(st.delta)}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow(
                ["run_id", "seed"] + [f"x0_{i + 1}" for i in range(n)] + ["status", "iters", "sigma_final"]
                + [f"xstar_{i + 1}" for i in range(n)] + [f"F_{j + 1}" for j in range(m)] + ["certificate"]
            )
            for rec in st.records:
                w.writerow(
                    [rec.run_id, rec.seed] + [_num(v) for v in rec.x0] + [rec.status, rec.iterations,
                                                                         _num(rec.sigma_final)]
                    + [_num(v) for v in rec.xstar] + [_num(v) for v in rec.F] + [_num(rec.certificate)]
                )
        files.append(path)
        path = out_dir / f"front_{st.problem}_{_tag(st.delta)}.csv"
        fh, w = _writer(path)
        with fh:
            w.writerow([f"F_{j + 1}" for j in range(m)] + [f"xstar_{i + 1}" for i in range(n)])
            for rec in st.front_records():
                w.writerow([_num(v) for v in rec.F] + [_num(v) for v in rec.xstar])
        files.append(path)
    path = out_dir / "summary.csv"
    fh, w = _writer(path)
    with fh:
        w.writerow(["problem", "delta", "runs", "success", "distinct", "success_rate"])
        for st in report.settings:
            w.writerow([st.problem, _num(st.delta), st.runs, st.success, st.distinct, _num(st.success_rate)])
    files.append(path)
    return files


def write_config_echo(report: ExperimentReport, out_dir) -> Path:
    """All effective settings, seeds and uncertainty matrices as JSON."""
    spec = report.spec
    base = spec.base_problem()
    doc = {
        "problem": base.to_config(),
        "deltas": list(spec.deltas),
        "runs": spec.runs,
        "master_seed": spec.seed,
        "seed_derivation": "SeedSequence([master, 0, delta_index]) for uncertainty, "
                           "SeedSequence([master, 1, delta_index, run_index]) for starts; "
                           "first uint64 of generate_state",
        "x0": None if spec.x0 is None else list(spec.x0),
        "solver": spec.config.to_dict(),
        "plot": spec.plot,
        "grid": spec.grid,
        "settings": [
            {
                "delta": st.delta,
                "uncertainty": st.uncertainty.to_config(),
                "run_seeds": [rec.seed for rec in st.records],
            }
            for st in report.settings
        ],
    }
    path = Path(out_dir) / "config_echo.json"
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


# -- plots -----------------------------------------------------------------------


def objective_grid(problem: ProblemSpec, resolution: int = DEFAULT_GRID) -> np.ndarray:
    """F on a resolution x resolution grid over the start box (n = 2), shape (resolution**2, m)."""
    if resolution < 1:
        raise ConfigurationError(f"grid resolution must be positive, got {resolution}")
    if problem.n != 2:
        raise ConfigurationError("objective grids need n = 2")
    (a, b), (c, d) = problem.start_box
    xs = np.linspace(a, b, resolution)
    ys = np.linspace(c, d, resolution)
    return np.array([eval_F(problem, np.array([x, y])) for x in xs for y in ys])


def _ticks(lo, hi, count=5):
    """Round tick values covering [lo, hi]."""
    span = hi - lo
    if span <= 0:
        return [lo]
    raw = span / count
    mag = 10.0 ** math.floor(math.log10(raw))
    step = min((k * mag for k in (1, 2, 5, 10) if k * mag >= raw), default=10 * mag)
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int(math.floor((hi - first) / step + 1e-9)) + 1)]


def emit_svg(report: ExperimentReport, grid_resolution: int, out_dir) -> list:
    """One static scatter plot per setting: grid cloud (gray), converged F (red), front (ringed)."""
    if grid_resolution < 1:
        raise ConfigurationError(f"grid resolution must be positive, got {grid_resolution}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = report.spec.base_problem()
    if base.m != 2:
        raise UsageError(f"scatter plots need two objectives, got {base.m}")
    files = []
    for st in report.settings:
        problem = robustify(base, st.uncertainty, st.delta)
        cloud = objective_grid(problem, grid_resolution)
        conv = np.array([rec.F for rec in st.records if rec.converged]).reshape(-1, 2)
        front = np.array([rec.F for rec in st.front_records()]).reshape(-1, 2)
        path = out_dir / f"front_{st.problem}_{_tag(st.delta)}.svg"
        path.write_text(_scatter_svg(cloud, conv, front, f"{st.problem}, delta = {st.delta:g}"),
                        encoding="utf-8")
        files.append(path)
    return files


def _scatter_svg(cloud, conv, front, title, width=640, height=520, pixels=320):
    left, right, top, bottom = 70, 20, 40, 55
    pts = np.vstack([cloud, conv, front])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = np.where(hi > lo, 0.03 * (hi - lo), 1.0)
    lo, hi = lo - pad, hi + pad
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - lo[0]) / (hi[0] - lo[0]) * pw

    def sy(v):
        return top + ph - (v - lo[1]) / (hi[1] - lo[1]) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15" '
        f'font-family="sans-serif">{escape(title)}</text>',
    ]
    # the grid cloud is binned to a pixel lattice, one square per occupied cell
    cell_w, cell_h = pw / pixels, ph / pixels
    ix = np.clip(((cloud[:, 0] - lo[0]) / (hi[0] - lo[0]) * pixels).astype(int), 0, pixels - 1)
    iy = np.clip(((cloud[:, 1] - lo[1]) / (hi[1] - lo[1]) * pixels).astype(int), 0, pixels - 1)
    out.append('<g id="cloud" fill="#bbbbbb">')
    for i, j in sorted(set(zip(ix.tolist(), iy.tolist()))):
        out.append(f'<rect x="{left + i * cell_w:.2f}" y="{top + ph - (j + 1) * cell_h:.2f}" '
                   f'width="{cell_w:.2f}" height="{cell_h:.2f}"/>')
    out.append("</g>")
    out.append('<g id="converged" fill="#d62728">')
    for f1, f2 in conv:
        out.append(f'<circle cx="{sx(f1):.2f}" cy="{sy(f2):.2f}" r="2.5"/>')
    out.append("</g>")
    out.append('<g id="front" fill="none" stroke="black" stroke-width="1.2">')
    for f1, f2 in front:
        out.append(f'<circle class="front" cx="{sx(f1):.2f}" cy="{sy(f2):.2f}" r="4.5" '
                   f'data-f1="{f1:.17e}" data-f2="{f2:.17e}"/>')
    out.append("</g>")
    # axes
    x0, y0 = left, top + ph
    out.append(f'<g stroke="black" stroke-width="1"><line x1="{x0}" y1="{y0}" x2="{x0 + pw}" y2="{y0}"/>'
               f'<line x1="{x0}" y1="{top}" x2="{x0}" y2="{y0}"/></g>')
    out.append('<g font-size="11" font-family="sans-serif">')
    for v in _ticks(lo[0], hi[0]):
        x = sx(v)
        out.append(f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y0 + 18}" text-anchor="middle">{v:g}</text>')
    for v in _ticks(lo[1], hi[1]):
        y = sy(v)
        out.append(f'<line x1="{x0 - 5}" y1="{y:.2f}" x2="{x0}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{x0 - 8}" y="{y + 4:.2f}" text-anchor="end">{v:g}</text>')
    out.append("</g>")
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" font-size="13" '
               f'font-family="sans-serif">F1</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.1f}" text-anchor="middle" font-size="13" '
               f'font-family="sans-serif" transform="rotate(-90 18 {top + ph / 2:.1f})">F2</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def comparison_table(report: ExperimentReport) -> str:
    """Plain-text table of success counts next to the published counts, where available."""
    lines = [f"{'problem':<8} {'delta':>6} {'success':>9} {'rate':>8} {'distinct':>9} {'published':>10}"]
    for st in report.settings:
        ref = PUBLISHED_TABLE.get(st.problem, {}).get(st.delta)
        ref_txt = f"{ref}/200" if ref is not None else "-"
        lines.append(f"{st.problem:<8} {st.delta:>6g} {st.success:>5}/{st.runs:<3} "
                     f"{100 * st.success_rate:>7.1f}% {st.distinct:>9} {ref_txt:>10}")
    return "\n".join(lines)

