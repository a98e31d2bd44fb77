"""Parameter sweeps, monotone-trend verdicts and exact/simulation/maxent comparisons."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import exact as ex
from .errors import BlockMaxentError, InputError, MixedSpec, UnstableSystem
from .maxent import entropy_closed_form, entropy_direct, kl_divergence, maxent_distribution
from .model import Params, StabilityReport, stability_check, validate_params
from .simulation import SimConfig, SimEstimate, simulate

SOURCES = ("exact", "simulator", "table")
PARAM_NAMES = ("lam", "mu1", "mu2", "b")
_ALIASES = {"lambda": "lam", "lam": "lam", "mu1": "mu1", "mu2": "mu2", "b": "b"}

SWEEP_COLUMNS = [
    "lambda", "mu1", "mu2", "b", "source", "status",
    "I", "J", "y", "z", "x", "H_maxent", "H_exact", "kl", "tail_exact", "tail_approx", "ms",
]
COMPARE_COLUMNS = SWEEP_COLUMNS + [
    "n_seeds", "I_sim", "J_sim", "seeds_inside_I", "seeds_inside_J",
]


def param_name(name: str) -> str:
    try:
        return _ALIASES[name]
    except KeyError:
        raise InputError(f"unknown parameter {name!r}; expected one of lambda, mu1, mu2, b") from None


def open_interval_grid(lo: float, hi: float, n: int = 20) -> tuple[float, ...]:
    """``n`` equally spaced interior points of ``(lo, hi)``."""
    return tuple(float(v) for v in np.linspace(lo, hi, n + 2)[1:-1])


@dataclass(frozen=True)
class SweepSpec:
    swept: str
    grid: tuple[float, ...]
    fixed: dict
    family: str
    family_values: tuple[float, ...]
    source: str = "exact"
    seeds: tuple[int, ...] = (0,)
    horizon: float = 1e5
    table: str | None = None
    jmax: int | None = None
    tail_eps: float = ex.DEFAULT_TAIL_EPS
    tol: float = 1e-12
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "swept", param_name(self.swept))
        object.__setattr__(self, "family", param_name(self.family))
        object.__setattr__(self, "fixed", {param_name(k): v for k, v in self.fixed.items()})
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "family_values", tuple(self.family_values))
        object.__setattr__(self, "seeds", tuple(self.seeds))

    def validate(self) -> "SweepSpec":
        if self.swept == self.family:
            raise InputError("swept and family parameters must differ")
        missing = set(PARAM_NAMES) - {self.swept, self.family} - set(self.fixed)
        if missing:
            raise InputError(f"sweep spec lacks fixed values for {sorted(missing)}")
        for values, what in ((self.grid, "grid"), (self.family_values, "family values")):
            if any(b <= a for a, b in zip(values, values[1:])):
                raise InputError(f"{what} must be strictly increasing")
        if self.source not in SOURCES:
            raise InputError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.source == "table" and not self.table:
            raise InputError("source 'table' requires a table path")
        return self

    def key(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]

    def points(self) -> list[tuple[float, int, Params]]:
        out = []
        for fv in self.family_values:
            for k, gv in enumerate(self.grid):
                values = dict(self.fixed)
                values[self.family] = fv
                values[self.swept] = gv
                values["b"] = int(values["b"])
                out.append((fv, k, Params(**values)))
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        grid = d.pop("grid")
        if isinstance(grid, dict):
            lo, hi = grid["open_interval"]
            grid = open_interval_grid(lo, hi, int(grid.get("n", 20)))
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown sweep spec keys: {sorted(unknown)}")
        return cls(grid=grid, **d)

    @classmethod
    def from_file(cls, path) -> "SweepSpec":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read sweep spec {path}: {exc}") from exc
        return cls.from_dict(data)


def example_spec(n: int, **overrides) -> SweepSpec:
    """Sweeps behind the three worked examples (1 and 2 share a table)."""
    if n in (1, 2):
        spec = SweepSpec(
            swept="lam", grid=open_interval_grid(1.0, 3.5),
            fixed={"mu2": 2.0, "b": 80}, family="mu1", family_values=(6.0, 7.5, 10.0),
            name=f"example-{n}",
        )
    elif n == 3:
        spec = SweepSpec(
            swept="mu1", grid=open_interval_grid(1.0, 2.5),
            fixed={"lam": 1.5, "mu2": 2.0}, family="b", family_values=(40, 80, 160),
            name="example-3",
        )
    else:
        raise InputError(f"no example {n}; choose 1, 2 or 3")
    if overrides:
        spec = SweepSpec(**{**asdict(spec), **overrides})
    return spec


@dataclass
class ComparisonRecord:
    params: Params
    source: str
    status: str = "ok"
    stability: StabilityReport | None = None
    I: float | None = None
    J: float | None = None
    y: float | None = None
    z: float | None = None
    x: float | None = None
    H_maxent: float | None = None
    H_exact: float | None = None
    kl: float | None = None
    tail_exact: float | None = None
    tail_approx: float | None = None
    ms: float | None = None
    residuals: tuple[float, float, float] | None = None
    jmax: int | None = None
    family_value: float | None = None
    grid_index: int | None = None
    spec_key: str | None = None
    sim: list[SimEstimate] = field(default_factory=list)
    inside_I: int | None = None
    inside_J: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self, timing: bool = True) -> dict:
        p = self.params
        out = {
            "lambda": p.lam, "mu1": p.mu1, "mu2": p.mu2, "b": p.b,
            "source": self.source, "status": self.status,
        }
        for k in SWEEP_COLUMNS[6:]:
            out[k] = getattr(self, k)
        if not timing:
            out["ms"] = None
        if self.sim:
            out["n_seeds"] = len(self.sim)
            out["I_sim"] = float(np.mean([s.I_hat for s in self.sim]))
            out["J_sim"] = float(np.mean([s.J_hat for s in self.sim]))
            out["seeds_inside_I"] = self.inside_I
            out["seeds_inside_J"] = self.inside_J
        return out

    def to_json(self, timing: bool = True) -> dict:
        out = self.row(timing)
        out["residuals"] = list(self.residuals) if self.residuals else None
        out["jmax"] = self.jmax
        if self.stability is not None:
            out["bound"] = self.stability.bound
            out["stable"] = self.stability.stable
        if self.sim:
            out["sim"] = [
                {"seed": s.config.seed, "I_hat": s.I_hat, "I_se": s.I_se,
                 "J_hat": s.J_hat, "J_se": s.J_se, "n_events": s.n_events}
                for s in self.sim
            ]
        return out


@dataclass
class SweepTable:
    spec: SweepSpec
    records: list[ComparisonRecord]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def load_moment_table(path) -> dict[tuple[float, float, float, int], tuple[float, float]]:
    """CSV with columns lambda, mu1, mu2, b, I, J."""
    out = {}
    try:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                key = (float(row["lambda"]), float(row["mu1"]), float(row["mu2"]), int(row["b"]))
                out[key] = (float(row["I"]), float(row["J"]))
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read moment table {path}: {exc}") from exc
    return out


def _fill_maxent(rec: ComparisonRecord, I: float, J: float, b: int, tol: float):
    s = maxent_distribution(I, J, b, tol)
    rec.I, rec.J = I, J
    rec.y, rec.z, rec.x = s.y, s.z, s.x
    rec.H_maxent = entropy_closed_form(s)
    rec.residuals = s.residuals
    return s


def evaluate_point(
    p: Params,
    source: str = "exact",
    *,
    jmax: int | None = None,
    tail_eps: float = ex.DEFAULT_TAIL_EPS,
    tol: float = 1e-12,
    seeds: Sequence[int] = (0,),
    horizon: float = 1e5,
    table: dict | None = None,
) -> ComparisonRecord:
    """One sweep point; failures are reported in ``status`` rather than raised."""
    t0 = time.perf_counter()
    rec = ComparisonRecord(params=p, source=source)
    try:
        validate_params(p)
        rec.stability = stability_check(p)
        if not rec.stability.stable and source != "table":
            rec.status = "unstable"
            return rec
        if source == "exact":
            d = ex.solve_params(p, jmax=jmax, tail_eps=tail_eps)
            m = ex.moments(d)
            s = _fill_maxent(rec, m.I, m.J, p.b, tol)
            rec.jmax = d.jmax
            rec.H_exact = entropy_direct(d)
            rec.kl, rec.tail_exact, rec.tail_approx = kl_divergence(d, s)
        elif source == "simulator":
            rec.sim = [simulate(p, SimConfig(horizon=horizon, seed=sd)) for sd in seeds]
            I = float(np.mean([e.I_hat for e in rec.sim]))
            J = float(np.mean([e.J_hat for e in rec.sim]))
            _fill_maxent(rec, min(max(I, 0.0), p.b), max(J, 0.0), p.b, tol)
        else:
            key = (float(p.lam), float(p.mu1), float(p.mu2), int(p.b))
            if table is None or key not in table:
                raise InputError(f"no moments for {key} in table")
            I, J = table[key]
            _fill_maxent(rec, I, J, p.b, tol)
    except BlockMaxentError as exc:
        rec.status = f"error: {exc}"
    finally:
        rec.ms = (time.perf_counter() - t0) * 1e3
    return rec


def _evaluate_task(args):
    fv, k, p, kwargs, key = args
    rec = evaluate_point(p, **kwargs)
    rec.family_value, rec.grid_index, rec.spec_key = fv, k, key
    return rec


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepTable:
    """Evaluate every (family value, grid point); rows stay in grid order."""
    spec.validate()
    table = load_moment_table(spec.table) if spec.source == "table" else None
    kwargs = dict(
        source=spec.source, jmax=spec.jmax, tail_eps=spec.tail_eps, tol=spec.tol,
        seeds=spec.seeds, horizon=spec.horizon, table=table,
    )
    key = spec.key()
    tasks = [(fv, k, p, kwargs, key) for fv, k, p in spec.points()]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_evaluate_task, tasks))
    else:
        records = [_evaluate_task(t) for t in tasks]
    return SweepTable(spec, records)


# ---------------------------------------------------------------------------
# trends

INCREASING = "strictly-increasing"
DECREASING = "strictly-decreasing"
NON_MONOTONE = "non-monotone"
INCOMPLETE = "incomplete"


def monotone_verdict(values: Sequence[float | None], tie_rtol: float = 1e-9) -> tuple[str, int | None]:
    """Classify a sequence; differences within ``tie_rtol`` (relative) count as ties.

    Returns ``(verdict, first_violation)`` where the index refers to the
    difference ``values[k+1] - values[k]``.
    """
    for k, v in enumerate(values):
        if v is None or not math.isfinite(v):
            return INCOMPLETE, k
    signs = []
    for a, b in zip(values, values[1:]):
        d = b - a
        if abs(d) <= tie_rtol * max(abs(a), abs(b)):
            signs.append(0)
        else:
            signs.append(1 if d > 0 else -1)
    if not signs or signs[0] == 0:
        return NON_MONOTONE, 0
    for k, s in enumerate(signs):
        if s != signs[0]:
            return NON_MONOTONE, k
    return (INCREASING if signs[0] > 0 else DECREASING), None


@dataclass(frozen=True)
class Curve:
    label: float
    xs: tuple[float, ...]
    values: tuple[float | None, ...]
    verdict: str
    violation: int | None


@dataclass(frozen=True)
class TrendReport:
    response: str
    swept: str
    family: str
    curves: tuple[Curve, ...]  # response vs swept value, one per family value
    across: tuple[Curve, ...]  # response vs family value, one per grid point

    def along(self) -> set[str]:
        return {c.verdict for c in self.curves}

    def pointwise(self) -> set[str]:
        return {c.verdict for c in self.across}

    def lines(self) -> list[str]:
        out = []
        for c in self.curves:
            out.append(f"{self.response} vs {self.swept} at {self.family}={c.label:g}: {c.verdict}"
                       + ("" if c.violation is None else f" (first violation at {c.violation})"))
        verdicts = sorted(self.pointwise())
        out.append(f"{self.response} vs {self.family} pointwise over {len(self.across)} points: "
                   + ", ".join(verdicts))
        return out


def trend_check(t: SweepTable | Iterable[ComparisonRecord], response: str, tie_rtol: float = 1e-9) -> TrendReport:
    if response not in ("y", "z"):
        raise InputError(f"response must be 'y' or 'z', got {response!r}")
    if isinstance(t, SweepTable):
        spec, records = t.spec, list(t.records)
        keys = {r.spec_key for r in records}
        if keys - {spec.key()}:
            raise MixedSpec("table contains records from another sweep spec")
    else:
        records = list(t)
        keys = {r.spec_key for r in records}
        if len(keys) > 1 or None in keys:
            raise MixedSpec("records come from incompatible sweep specs")
        spec = None

    swept = spec.swept if spec else _infer_axis(records, "grid")
    family = spec.family if spec else _infer_axis(records, "family")
    by_family: dict[float, list[ComparisonRecord]] = {}
    for r in records:
        by_family.setdefault(r.family_value, []).append(r)
    labels = sorted(by_family)
    curves = []
    for fv in labels:
        rs = sorted(by_family[fv], key=lambda r: r.grid_index)
        vals = tuple(getattr(r, response) for r in rs)
        verdict, k = monotone_verdict(vals, tie_rtol)
        curves.append(Curve(fv, tuple(getattr(r.params, swept) for r in rs), vals, verdict, k))
    across = []
    n = min((len(c.values) for c in curves), default=0)
    for k in range(n):
        vals = tuple(c.values[k] for c in curves)
        verdict, v = monotone_verdict(vals, tie_rtol)
        across.append(Curve(curves[0].xs[k], tuple(labels), vals, verdict, v))
    return TrendReport(response, swept, family, tuple(curves), tuple(across))


def _infer_axis(records, which):
    # the family parameter is constant within a family, the swept one varies
    if not records:
        return "lam"
    for name in PARAM_NAMES:
        vals = {}
        for r in records:
            vals.setdefault(r.family_value, set()).add(getattr(r.params, name))
        varies_within = any(len(v) > 1 for v in vals.values())
        if which == "grid" and varies_within:
            return name
        if which == "family" and not varies_within and len({next(iter(v)) for v in vals.values()}) > 1:
            return name
    return "lam"


# ---------------------------------------------------------------------------
# comparison harness


def compare_run(
    p: Params,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    horizon: float = 1e6,
    *,
    jmax: int | None = None,
    tail_eps: float = ex.DEFAULT_TAIL_EPS,
    tol: float = 1e-12,
    n_sigma: float = 3.0,
    workers: int = 1,
) -> ComparisonRecord:
    """Exact solve -> moments -> maxent -> KL, plus one simulation per seed.

    Raises :class:`UnstableSystem` for parameters violating the stability condition.
    """
    report = stability_check(p)
    if not report.stable:
        raise UnstableSystem(report)
    t0 = time.perf_counter()
    d = ex.solve_params(p, jmax=jmax, tail_eps=tail_eps)
    m = ex.moments(d)
    rec = ComparisonRecord(params=p, source="exact", stability=report, jmax=d.jmax)
    s = _fill_maxent(rec, m.I, m.J, p.b, tol)
    rec.H_exact = entropy_direct(d)
    rec.kl, rec.tail_exact, rec.tail_approx = kl_divergence(d, s)
    configs = [SimConfig(horizon=horizon, seed=sd) for sd in seeds]
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rec.sim = list(pool.map(simulate, [p] * len(configs), configs))
    else:
        rec.sim = [simulate(p, c) for c in configs]
    rec.inside_I = sum(abs(e.I_hat - m.I) <= n_sigma * e.I_se for e in rec.sim)
    rec.inside_J = sum(abs(e.J_hat - m.J) <= n_sigma * e.J_se for e in rec.sim)
    rec.ms = (time.perf_counter() - t0) * 1e3
    return rec


# ---------------------------------------------------------------------------
# output


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(rows: Iterable[dict], columns: Sequence[str], fh) -> None:
    w = csv.writer(fh, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])


def csv_text(rows: Iterable[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    write_csv(rows, columns, buf)
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json_lines(objs: Iterable[dict], fh) -> None:
    for o in objs:
        fh.write(json.dumps(_jsonable(o), sort_keys=True) + "\n")
