"""End-to-end run: prices -> returns -> change points -> per-segment structure.

Everything written by :func:`run_pipeline` is a pure function of the input
file and the configuration, so two runs with the same seed produce
byte-identical reports.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import io
import json
import logging
import math
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._accel import NUMBA_AVAILABLE, numba_enabled
from .cdnod import augment_with_time, cdnod_skeleton
from .changepoint import DeclarationRule, NIGPrior, bocpd, mean_return_series, segment
from .gin import orient_all, report_json
from .graph import Orientation
from .latent import find_atomic_covers, refine_clusters
from .mle import fit_coefficients
from .simulate import Dataset
from .skeleton import pc_skeleton

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
FREQUENCIES = ("daily", "hourly")


class InputError(ValueError):
    """Bad input file or configuration (CLI exit code 2)."""


class StageError(RuntimeError):
    """A pipeline stage failed (CLI exit code 3)."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --------------------------------------------------------------------------
# ingestion


_EPOCH = _dt.datetime(1970, 1, 1)


def _seconds(stamp: str) -> int:
    """Seconds since 1970 for a naive ISO stamp (offset-aware stamps are converted to UTC)."""
    t = _dt.datetime.fromisoformat(stamp)
    if t.tzinfo is not None:
        t = t.astimezone(_dt.timezone.utc).replace(tzinfo=None)
    return int((t - _EPOCH).total_seconds())


def _parse_stamp(s: str, line: int) -> _dt.datetime:
    try:
        return _dt.datetime.fromisoformat(s.strip())
    except ValueError:
        raise InputError(f"line {line}: cannot parse timestamp {s!r}") from None


def ingest_prices(source, text: bool = False, positive: bool = True) -> Dataset:
    """Read a ``date,<ticker>...`` CSV into an aligned panel.

    Rows with an empty cell are dropped; the count is kept in
    ``meta["dropped_rows"]`` and the ISO stamps in ``meta["stamps"]``.
    ``positive=False`` accepts arbitrary values (used for return files).
    """
    try:
        raw = source if text else Path(source).read_text()
    except OSError as e:
        raise InputError(f"cannot read {source}: {e}") from None
    rows = list(csv.reader(io.StringIO(raw)))
    if not rows or not any(c.strip() for c in rows[0]):
        raise InputError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() not in ("date", "time", "timestamp"):
        raise InputError("line 1: header must be 'date,<ticker>,...'")
    tickers = header[1:]
    if len(set(tickers)) != len(tickers):
        raise InputError("line 1: duplicate ticker names")
    stamps: list[str] = []
    values: list[list[float]] = []
    dropped = 0
    for line, r in enumerate(rows[1:], start=2):
        if not r or not any(c.strip() for c in r):
            continue
        if len(r) != len(header):
            raise InputError(f"line {line}: expected {len(header)} fields, got {len(r)}")
        when = _parse_stamp(r[0], line)
        cells = [c.strip() for c in r[1:]]
        if any(c == "" or c.lower() == "nan" for c in cells):
            dropped += 1
            continue
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise InputError(f"line {line}: non-numeric value") from None
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"line {line}: non-finite value")
        if positive:
            bad = [t for t, v in zip(tickers, vals) if v <= 0]
            if bad:
                raise InputError(f"line {line}: non-positive price for {', '.join(bad)}")
        if stamps and when <= _dt.datetime.fromisoformat(stamps[-1]):
            raise InputError(f"line {line}: timestamps must be strictly increasing")
        stamps.append(when.isoformat())
        values.append(vals)
    if not values:
        raise InputError("no complete rows")
    if dropped:
        log.warning("dropped %d row(s) with missing values", dropped)
    t = np.array([_seconds(s) for s in stamps])
    return Dataset(tickers, np.array(values), t, {"stamps": stamps, "dropped_rows": dropped})


def log_returns(prices: Dataset) -> Dataset:
    """r_t = log(p_t / p_{t-1}); one row shorter than the input."""
    if prices.n < 2:
        raise InputError("need at least two price rows")
    if np.any(prices.samples <= 0):
        raise InputError("prices must be positive")
    R = np.diff(np.log(prices.samples), axis=0)
    ti = None if prices.time_index is None else prices.time_index[1:]
    meta = dict(prices.meta)
    if "stamps" in meta:
        meta["stamps"] = list(meta["stamps"][1:])
    return Dataset(list(prices.columns), R, ti, meta)


def normalize(data: Dataset) -> tuple[Dataset, dict]:
    """Zero mean, unit variance per column; also returns the means and sds used."""
    mu = data.samples.mean(axis=0)
    sd = data.samples.std(axis=0)
    for c, s in zip(data.columns, sd):
        if not s > 0:
            raise InputError(f"column {c} is constant")
    Z = (data.samples - mu) / sd
    stats = {c: {"mean": float(m), "sd": float(s)} for c, m, s in zip(data.columns, mu, sd)}
    return Dataset(list(data.columns), Z, data.time_index, dict(data.meta)), stats


def daily_groups(stamps: list[str]) -> list[int]:
    """Start index of each calendar day in a sorted list of ISO stamps."""
    starts, last = [], None
    for i, s in enumerate(stamps):
        day = s[:10]
        if day != last:
            starts.append(i)
            last = day
    return starts


# --------------------------------------------------------------------------
# configuration and report


@dataclass
class PipelineConfig:
    """Run settings; relative paths resolve against the config file.

    ``frequency`` describes the input rows. With hourly input and
    ``cpd_frequency = "daily"`` change points are found on daily sums of the
    returns and mapped back to the first hourly row of that day.
    """

    input: str
    output_dir: str = "out"
    frequency: str = "daily"
    cpd_frequency: str = "daily"
    alpha_skeleton: float = 0.01
    alpha_rank: float = 0.01
    alpha_gin: float = 0.01
    alpha_cdnod: float = 0.01
    hazard: float = 1 / 250
    max_run: int = DeclarationRule.max_run
    min_segment: int = 100
    k_max: int = 4
    restarts: int = 10
    gin_permutations: int = 200
    kci_cap: int = 1000
    cdnod: bool = True
    cdnod_max_cond: int = 1
    seed: int = 0
    workers: int = 1
    sector_colors: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("alpha_skeleton", "alpha_rank", "alpha_gin", "alpha_cdnod", "hazard"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 < v < 1.0):
                raise InputError(f"{name} must lie in (0, 1), got {v!r}")
        for name in ("frequency", "cpd_frequency"):
            if getattr(self, name) not in FREQUENCIES:
                raise InputError(f"{name} must be one of {FREQUENCIES}")
        if self.frequency == "daily" and self.cpd_frequency == "hourly":
            raise InputError("cannot detect change points at a finer frequency than the input")
        for name in ("k_max", "restarts", "gin_permutations", "kci_cap", "min_segment", "workers", "max_run"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"{name} must be positive")

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        p = Path(path)
        try:
            d = json.loads(p.read_text())
        except OSError as e:
            raise InputError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise InputError(f"config {path}: line {e.lineno}: {e.msg}") from None
        return cls.from_dict(d, base=p.parent)

    @classmethod
    def from_dict(cls, d: dict, base=None) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown config keys: {sorted(extra)}")
        if "input" not in d:
            raise InputError("config needs an 'input' path")
        d = dict(d)
        if base is not None:
            for k in ("input", "output_dir"):
                if k in d and not Path(d[k]).is_absolute():
                    d[k] = str(Path(base) / d[k])
        try:
            return cls(**d)
        except TypeError as e:
            raise InputError(str(e)) from None

    def settings(self) -> dict:
        """Everything except paths; hashed into the provenance block."""
        d = asdict(self)
        d.pop("input")
        d.pop("output_dir")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.settings(), sort_keys=True).encode()).hexdigest()


@dataclass
class SegmentResult:
    index: int
    start: int
    stop: int
    graph: dict | None = None
    latents: list[str] = field(default_factory=list)
    edges: list[dict] = field(default_factory=list)
    orientation: list[dict] = field(default_factory=list)
    fit: dict | None = None
    flags: list[str] = field(default_factory=list)
    errors: list[dict] = field(default_factory=list)
    dot: str = ""
    trace: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "start": self.start,
            "stop": self.stop,
            "latents": self.latents,
            "graph": self.graph,
            "edges": self.edges,
            "orientation": self.orientation,
            "fit": self.fit,
            "flags": self.flags,
            "errors": self.errors,
        }


@dataclass
class PipelineReport:
    change_points: list[int]
    change_dates: list[str]
    segments: list[SegmentResult]
    cdnod: dict | None
    provenance: dict
    errors: list[dict] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.errors) or any(s.errors for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "change_points": self.change_points,
            "change_dates": self.change_dates,
            "segments": [s.to_dict() for s in self.segments],
            "cdnod": self.cdnod,
            "errors": self.errors,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# stages


def _segment_job(cfg: PipelineConfig, seg: Dataset, index: int, start: int) -> SegmentResult:
    out = SegmentResult(index, start, start + seg.n)
    stage = "skeleton"
    try:
        sk = pc_skeleton(seg, "fisherz", cfg.alpha_skeleton)
        out.trace["skeleton"] = sk.to_dict()
        stage = "latent_discovery"
        state = find_atomic_covers(seg, sk, cfg.alpha_rank, k_max=cfg.k_max)
        state = refine_clusters(seg, state, cfg.alpha_rank)
        out.trace["discovery"] = state.to_dict()
        out.flags += state.flags
        out.latents = state.latent_names
    except Exception as e:  # noqa: BLE001 - reported per stage
        out.errors.append({"stage": stage, "message": f"{type(e).__name__}: {e}"})
        return out
    graph = state.current_graph
    try:
        graph, rep = orient_all(graph, seg, cfg.alpha_gin, cfg.gin_permutations, seed=cfg.seed + index)
        out.orientation = json.loads(report_json(rep))
    except Exception as e:  # noqa: BLE001 - orientation failures are flagged, not fatal
        out.flags.append(f"orientation failed: {type(e).__name__}: {e}")
    out.graph = graph.to_dict()
    coefs: dict[tuple[str, str], float] = {}
    status = "unfit"
    try:
        dag = graph.expand(seg.columns, out.latents)
        if dag.edges:
            fit = fit_coefficients(dag, seg, restarts=cfg.restarts, seed=cfg.seed + index)
            out.fit = fit.to_dict()
            coefs = fit.A_hat
            status = "fit"
            if not fit.converged:
                out.flags.append("coefficient fit did not converge")
    except Exception as e:  # noqa: BLE001
        out.flags.append(f"coefficient fit skipped: {type(e).__name__}: {e}")
    undirected = {
        (str(p), str(c))
        for e in graph.edges if e.orientation is Orientation.UNDIRECTED
        for p in e.parent for c in e.child
    }
    for p, c in sorted((str(p), str(c)) for p, c in graph.variable_edges()):
        coef = coefs.get((p, c))
        mark = status if coef is not None else "unfit"
        if (p, c) in undirected:
            mark = "unoriented"
        out.edges.append({"from": p, "to": c, "coef": coef, "status": mark})
    out.dot = graph.to_dot(out.latents, name=f"segment{index}", coefficients=coefs)
    if cfg.sector_colors:
        out.dot = _color_dot(out.dot, cfg.sector_colors)
    return out


def _color_dot(dot: str, colors: dict[str, str]) -> str:
    lines = dot.splitlines()
    for i, ln in enumerate(lines):
        for name, col in sorted(colors.items()):
            if ln.startswith(f'  "{name}"[') and "->" not in ln:
                lines[i] = ln.replace("];", f' color="{col}"];')
    return "\n".join(lines) + "\n"


def _detect(cfg: PipelineConfig, returns: Dataset):
    series = mean_return_series(returns)
    offset_map = None
    if cfg.frequency == "hourly" and cfg.cpd_frequency == "daily":
        starts = daily_groups(returns.meta["stamps"])
        series = np.add.reduceat(series, starts)
        offset_map = starts
    sd = series.std()
    if not sd > 0:
        raise StageError("changepoint", "mean return series is constant")
    z = (series - series.mean()) / sd
    rep = bocpd(z, cfg.hazard, NIGPrior(), DeclarationRule(max_run=cfg.max_run))
    cps = rep.change_points
    if offset_map is not None:
        cps = [offset_map[c] for c in cps]
    return cps, rep


def run_from_panel(cfg: PipelineConfig, prices: Dataset, input_digest: str,
                   trace: dict | None = None) -> PipelineReport:
    """All stages after ingestion. ``trace`` (if given) is filled with stage outputs."""
    errors: list[dict] = []
    returns = log_returns(prices)
    data, norm = normalize(returns)
    try:
        cps, cpd = _detect(cfg, returns)
    except StageError:
        raise
    except Exception as e:  # noqa: BLE001
        raise StageError("changepoint", f"{type(e).__name__}: {e}") from e
    pieces = segment(data, cps, cfg.min_segment)
    starts = np.cumsum([0] + [p.n for p in pieces[:-1]]).tolist()
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        segs = list(pool.map(lambda a: _segment_job(cfg, *a),
                             [(p, i, s) for i, (p, s) in enumerate(zip(pieces, starts))]))
    cd = None
    if cfg.cdnod:
        try:
            res = cdnod_skeleton(augment_with_time(data), cfg.alpha_cdnod, cfg.kci_cap,
                                 max_cond=cfg.cdnod_max_cond, seed=cfg.seed)
            cd = res.to_dict()
        except Exception as e:  # noqa: BLE001
            errors.append({"stage": "cdnod", "message": f"{type(e).__name__}: {e}"})
    stamps = returns.meta.get("stamps", [])
    provenance = {
        "config_hash": cfg.digest(),
        "settings": cfg.settings(),
        "input_sha256": input_digest,
        "seed": cfg.seed,
        "rows": {"prices": prices.n, "returns": returns.n, "dropped": prices.meta.get("dropped_rows", 0)},
        "normalization": norm,
        "versions": {
            "latentcausal": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "numba_kernels": NUMBA_AVAILABLE and numba_enabled(),
        },
    }
    if trace is not None:
        trace["returns"] = returns
        trace["cpd"] = cpd
        trace["segments"] = segs
    return PipelineReport(
        change_points=list(cps),
        change_dates=[stamps[c] for c in cps] if stamps else [],
        segments=segs,
        cdnod=cd,
        provenance=provenance,
        errors=errors,
    )


def run_pipeline(cfg: PipelineConfig, trace_dir=None) -> PipelineReport:
    """Run every stage and write ``report.json`` plus one DOT file per segment."""
    raw = _read_input(cfg.input)
    prices = ingest_prices(raw, text=True)
    digest = hashlib.sha256(raw.encode()).hexdigest()
    stages: dict | None = {} if trace_dir else None
    report = run_from_panel(cfg, prices, digest, stages)
    write_outputs(report, cfg.output_dir)
    if trace_dir:
        dump_trace(trace_dir, cfg, prices, digest, stages)
    return report


def _read_input(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None


def write_outputs(report: PipelineReport, output_dir) -> list[Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json"]
    paths[0].write_text(report.to_json())
    for s in report.segments:
        if s.dot:
            p = out / f"segment_{s.index}.dot"
            p.write_text(s.dot)
            paths.append(p)
    return paths


# --------------------------------------------------------------------------
# tracing


def dump_trace(trace_dir, cfg: PipelineConfig, prices: Dataset, digest: str, stages: dict) -> None:
    d = Path(trace_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n")
    panel = {
        "columns": prices.columns,
        "stamps": prices.meta.get("stamps", []),
        "dropped_rows": prices.meta.get("dropped_rows", 0),
        "input_sha256": digest,
        "values": prices.samples.tolist(),
    }
    (d / "prices.json").write_text(json.dumps(panel) + "\n")
    stages["returns"].to_csv(d / "returns.csv")
    (d / "cpd.json").write_text(stages["cpd"].to_json() + "\n")
    (d / "cpd_mode_path.csv").write_text(stages["cpd"].mode_path_csv())
    for s in stages["segments"]:
        sd = d / f"segment_{s.index}"
        sd.mkdir(exist_ok=True)
        for k, v in sorted(s.trace.items()):
            (sd / f"{k}.json").write_text(json.dumps(v, indent=2, sort_keys=True) + "\n")
        (sd / "orientation.json").write_text(json.dumps(s.orientation, indent=2, sort_keys=True) + "\n")
        (sd / "fit.json").write_text(json.dumps(s.fit, indent=2, sort_keys=True) + "\n")


def replay_trace(trace_dir) -> PipelineReport:
    """Rebuild the report from a trace directory without touching the original input."""
    d = Path(trace_dir)
    cfg = PipelineConfig.from_dict(json.loads((d / "config.json").read_text()))
    panel = json.loads((d / "prices.json").read_text())
    stamps = panel["stamps"]
    t = np.array([_seconds(s) for s in stamps]) if stamps else None
    prices = Dataset(panel["columns"], np.array(panel["values"]), t,
                     {"stamps": stamps, "dropped_rows": panel["dropped_rows"]})
    return run_from_panel(cfg, prices, panel["input_sha256"])
