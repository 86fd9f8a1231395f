"""Experiment driver: ladders, adaptive runs, result tables and presets.

A run is described by an :class:`ExperimentConfig`. :func:`run_ladder`
solves one discretization per ladder rung, checks the gap assumptions,
assembles the estimators and measures the true errors against a
reference; :func:`run_adaptive` does the same along an adaptively refined
mesh sequence. Both return a :class:`ResultTable`, which serialises to a
bit-stable CSV, an aligned text table and an SVG convergence plot.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import scipy.sparse as sp

from . import __version__
from . import fem
from . import planewave as pw
from .errors import ConfigError, EigencertError
from .linalg import DEFAULT_SEED
from .spectral import ErrorReport, effectivity, residual_lower_bound_rhs

log = logging.getLogger(__name__)

SEED_ENV = "EIGENCERT_SEED"
BACKENDS = ("pw", "fem")
DOMAINS = {"pw": ("torus-1d", "torus-2d"), "fem": ("square", "lshape")}
LOWER_BOUND_PROVIDERS = ("free-torus",)
MIN_FINE_LEVELS = 2

# absolute slack of the guarantee check on top of the reference error
GUARANTEE_TOL = {"pw": 1e-12, "fem": 1e-10}
# the tabulated L-shape eigenvalues carry eight significant digits
LITERATURE_SLACK = 1e-6


def default_seed() -> int:
    """Seed from ``EIGENCERT_SEED`` if set, else the library default."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def parse_reference(ref: str) -> tuple[str, int | None]:
    """Split ``"analytic"``, ``"literature"`` or ``"fine:<k>"``."""
    ref = str(ref).strip()
    if ref in ("analytic", "literature"):
        return ref, None
    if ref.startswith("fine:"):
        try:
            k = int(ref[5:])
        except ValueError:
            raise ConfigError(f"malformed reference {ref!r}") from None
        if k < 1:
            raise ConfigError(f"reference parameter must be positive, got {k}")
        return "fine", k
    raise ConfigError(f"unknown reference {ref!r}")


@dataclass
class ExperimentConfig:
    """Everything needed to run one convergence ladder or adaptive loop.

    The reference is ``"analytic"`` (unit square modes), ``"literature"``
    (tabulated L-shape eigenvalues, eigenvalue error only) or
    ``"fine:<k>"``. For the planewave back-end ``k`` is the reference
    cutoff; for finite elements it is the number of uniform refinements
    beyond the finest mesh of the run.

    ``lower_bound`` is a guaranteed lower bound of the eigenvalue just above
    the cluster; planewave runs may instead name the ``"free-torus"``
    provider. ``lower_first`` (a lower bound of the first eigenvalue) is
    used only by the efficiency diagnostics.
    """

    backend: str
    domain: str
    m: int
    M: int
    ladder: tuple = ()
    reference: str = "analytic"
    case: str = "I"
    delta: float | None = None
    C_I: float | None = None
    C_S: float | None = None
    lower_bound: float | None = None
    lower_bounds: str | None = None
    lower_first: float | None = None
    alpha: float = 1.0
    K_V: int | None = None
    adaptive: bool = False
    theta: float = 0.6
    max_dof: int = 32000
    exponent: float = 2.0
    initial_n: int = 5
    seed: int | None = None
    snapshot_dir: str | None = None
    cache_dir: str | None = None
    label: str = ""

    def __post_init__(self):
        self.ladder = tuple(self.ladder)
        self.case = str(self.case).upper()

    @property
    def effective_seed(self) -> int:
        return default_seed() if self.seed is None else int(self.seed)

    def validate(self) -> "ExperimentConfig":
        """Raise :class:`ConfigError` on any inconsistency; return self."""
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.domain not in DOMAINS[self.backend]:
            raise ConfigError(f"domain {self.domain!r} is not available for {self.backend}")
        if int(self.m) != self.m or int(self.M) != self.M:
            raise ConfigError("cluster indices must be integers")
        if self.m < 1:
            raise ConfigError("cluster start m must be at least 1")
        if self.M < self.m:
            raise ConfigError("cluster end M must be at least m")
        for n in self.ladder:
            if int(n) != n or n < 1:
                raise ConfigError(f"ladder entries must be positive integers, got {n!r}")
        if any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ConfigError("ladder must be strictly increasing")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie strictly between 0 and 1")
        if self.max_dof < 1:
            raise ConfigError("max_dof must be positive")
        if self.exponent <= 0:
            raise ConfigError("marking exponent must be positive")
        kind, param = parse_reference(self.reference)
        if self.backend == "pw":
            self._validate_pw(kind, param)
        else:
            self._validate_fem(kind, param)
        return self

    def _validate_pw(self, kind, param):
        if self.adaptive:
            raise ConfigError("adaptive runs need the fem backend")
        if kind != "fine":
            raise ConfigError("planewave runs need a reference of the form fine:<N_ref>")
        if self.ladder and max(self.ladder) >= param:
            raise ConfigError("reference cutoff must exceed every ladder cutoff")
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.K_V is not None and self.K_V < 1:
            raise ConfigError("K_V must be positive")
        if self.lower_bound is None:
            if self.lower_bounds is None:
                self.lower_bounds = "free-torus"
            if self.lower_bounds not in LOWER_BOUND_PROVIDERS:
                raise ConfigError(f"unknown lower-bound provider {self.lower_bounds!r}")

    def _validate_fem(self, kind, param):
        if self.lower_bound is None:
            raise ConfigError("missing --lower-bound (guaranteed lower bound of "
                              "the eigenvalue above the cluster)")
        if self.case not in ("I", "II"):
            raise ConfigError(f"case must be I or II, got {self.case!r}")
        if self.case == "II":
            for name, flag in (("delta", "--delta"), ("C_I", "--ci"), ("C_S", "--cs")):
                if getattr(self, name) is None:
                    raise ConfigError(f"missing {flag} (required for case II)")
        if self.adaptive and self.case != "I":
            raise ConfigError("adaptive runs use the case I estimator")
        if kind == "analytic" and self.domain != "square":
            raise ConfigError("analytic reference exists only for the unit square")
        if kind == "literature" and (self.domain != "lshape"
                                     or self.M > len(fem.LSHAPE_EIGENVALUES)):
            raise ConfigError("literature eigenvalues cover the first "
                              f"{len(fem.LSHAPE_EIGENVALUES)} L-shape eigenvalues only")
        if kind == "fine" and param < MIN_FINE_LEVELS:
            raise ConfigError(f"fine reference needs at least {MIN_FINE_LEVELS} extra levels")
        if kind == "fine" and not self.adaptive and self.ladder:
            _doubling_levels(self.ladder)
        if self.adaptive and self.initial_n < 1:
            raise ConfigError("initial_n must be positive")

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        """Build from string-valued keys such as those of a config file.

        Keys may use dashes or underscores; ``cluster = m:M`` and
        comma-separated ladders are understood.
        """
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for key, value in data.items():
            name = key.strip().replace("-", "_")
            name = {"ci": "C_I", "cs": "C_S", "k_v": "K_V", "levels": "ladder",
                    "lower_bound_provider": "lower_bounds"}.get(name.lower(), name)
            if name == "cluster":
                kw["m"], kw["M"] = parse_cluster(value)
                continue
            if name not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kw[name] = _coerce(name, value)
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


_INT_KEYS = {"m", "M", "K_V", "max_dof", "initial_n", "seed"}
_FLOAT_KEYS = {"delta", "C_I", "C_S", "lower_bound", "lower_first", "alpha", "theta", "exponent"}


def _coerce(name: str, value):
    if not isinstance(value, str):
        return value
    value = value.strip()
    try:
        if name == "ladder":
            return parse_ladder(value)
        if name in _INT_KEYS:
            return int(value)
        if name in _FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"malformed value for {name}: {value!r}") from None
    if name == "adaptive":
        return value.lower() in ("1", "true", "yes", "on")
    return value


def parse_cluster(text: str) -> tuple[int, int]:
    """``"m:M"`` to a pair of ints."""
    try:
        a, b = str(text).split(":")
        return int(a), int(b)
    except ValueError:
        raise ConfigError(f"malformed cluster {text!r}, expected m:M") from None


def parse_ladder(text: str) -> tuple[int, ...]:
    """Comma-separated positive integers; the empty string is an empty ladder."""
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(int(s) for s in text.split(","))
    except ValueError:
        raise ConfigError(f"malformed ladder {text!r}") from None


def _doubling_levels(ladder) -> list[int]:
    n0 = ladder[0]
    out = []
    for n in ladder:
        ratio = n / n0
        j = int(round(math.log2(ratio)))
        if n != n0 * 2 ** j:
            raise ConfigError("a fine-mesh reference needs ladder levels n0 * 2^j")
        out.append(j)
    return out


# ---------------------------------------------------------------- result table

COLUMNS = (("N", "level"), ("h", "h_or_N"), ("ndof", "ndof"),
           ("Err_lambda", "err_lambda"), ("eta^2", "eta_sq"), ("I_eff_lambda", "ieff_lambda"),
           ("Err_H1", "err_h1"), ("eta", "eta"), ("I_eff_H1", "ieff_h1"),
           ("Err_L2", "err_l2"), ("eta_L2", "eta_l2"), ("I_eff_L2", "ieff_l2"),
           ("flags", "flags"))
SERIES = (("Err_lambda", "err_lambda"), ("eta^2", "eta_sq"), ("Err_H1", "err_h1"),
          ("eta", "eta"), ("Err_L2", "err_l2"), ("eta_L2", "eta_l2"))
ASSUMPTIONS_FAILED = "assumptions-failed"


def _fmt(value, precise: bool) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if math.isnan(x):
        return "nan"
    if precise:
        return repr(x)
    return f"{x:.6g}"


def _parse_number(text: str):
    if text == "":
        return None
    if text == "n/a":
        return "n/a"
    return float(text)


@dataclass
class ResultTable:
    """Rows of one experiment in ladder order, plus a metadata echo.

    ``diagnostics`` holds per-row inputs of :func:`efficiency_diagnostics`
    and ``extras`` run-specific data (indicator distributions, snapshot
    paths); neither is serialised.
    """

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list, compare=False, repr=False)
    extras: dict = field(default_factory=dict, compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def any_assumption_failed(self) -> bool:
        return any(ASSUMPTIONS_FAILED in r.flags for r in self.rows)

    def column(self, name: str) -> np.ndarray:
        """Numeric column by attribute name, ``"n/a"`` mapped to NaN."""
        vals = [getattr(r, name) for r in self.rows]
        return np.array([math.nan if isinstance(v, str) or v is None else float(v)
                         for v in vals])

    def to_csv(self, precise: bool = False) -> str:
        """CSV text: ``#`` metadata lines, header, one line per row.

        Values carry 6 significant digits, or full round-trip precision
        with ``precise=True``.
        """
        buf = io.StringIO()
        for key, value in self.metadata.items():
            buf.write(f"# {key}: {value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([c for c, _ in COLUMNS])
        for r in self.rows:
            line = []
            for _, attr in COLUMNS:
                v = getattr(r, attr)
                if attr == "flags":
                    line.append(";".join(v))
                elif attr == "level" and v is not None and float(v).is_integer():
                    line.append(str(int(v)))
                else:
                    line.append(_fmt(v, precise))
            w.writerow(line)
        return buf.getvalue()

    def write_csv(self, path, precise: bool = False) -> None:
        try:
            Path(path).write_text(self.to_csv(precise))
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror}") from exc

    @classmethod
    def from_csv(cls, text: str) -> "ResultTable":
        meta = {}
        body = []
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(": ")
                meta[key] = value
            elif line.strip():
                body.append(line)
        reader = csv.reader(body)
        header = next(reader, None)
        if header is None:
            return cls([], meta)
        if tuple(header) != tuple(c for c, _ in COLUMNS):
            raise ValueError(f"unexpected header {header}")
        rows = []
        for rec in reader:
            kw = {}
            for (_, attr), text_value in zip(COLUMNS, rec):
                if attr == "flags":
                    kw[attr] = [f for f in text_value.split(";") if f]
                elif attr == "ndof":
                    kw[attr] = int(text_value)
                else:
                    kw[attr] = _parse_number(text_value)
            if kw["level"] is not None and float(kw["level"]).is_integer():
                kw["level"] = int(kw["level"])
            rows.append(ErrorReport(**kw))
        return cls(rows, meta)

    def same_values(self, other: "ResultTable") -> bool:
        """Exact equality of metadata and all row values (NaN equal to NaN)."""
        return self.to_csv(precise=True) == other.to_csv(precise=True)

    def to_text(self) -> str:
        """Aligned plain-text table with 6 significant digits."""
        head = [c for c, _ in COLUMNS]
        body = list(csv.reader(io.StringIO(self.to_csv())))
        body = [r for r in body if r and not r[0].startswith("#")][1:]
        widths = [max([len(head[j])] + [len(r[j]) for r in body]) for j in range(len(head))]
        lines = []
        title = self.metadata.get("title")
        if title:
            lines.append(title)
        lines.append("  ".join(h.rjust(wd) for h, wd in zip(head, widths)).rstrip())
        lines.append("  ".join("-" * wd for wd in widths))
        for r in body:
            lines.append("  ".join(v.rjust(wd) for v, wd in zip(r, widths)).rstrip())
        return "\n".join(lines) + "\n"

    def to_svg(self, series=None, width: int = 640, height: int = 480) -> str:
        """Log-log plot of the requested series against ndof.

        One polyline per series (points with nonpositive or missing values
        are skipped), a legend and dashed slope guides for rates -1 and -1/2.
        """
        chosen = SERIES if series is None else [s for s in SERIES if s[0] in series or s[1] in series]
        x = self.column("ndof")
        data = []
        for label, attr in chosen:
            y = self.column(attr)
            ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
            data.append((label, np.log10(x[ok]), np.log10(y[ok])))
        xs = np.concatenate([d[1] for d in data]) if data else np.zeros(0)
        ys = np.concatenate([d[2] for d in data]) if data else np.zeros(0)
        x_lo, x_hi = _padded_range(xs)
        y_lo, y_hi = _padded_range(ys)
        left, right, top, bottom = 70, 150, 30, 50
        pw_, ph_ = width - left - right, height - top - bottom

        def to_px(lx, ly):
            px = left + (lx - x_lo) / (x_hi - x_lo) * pw_
            py = top + (y_hi - ly) / (y_hi - y_lo) * ph_
            return px, py

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
               f'viewBox="0 0 {width} {height}">',
               f'<rect x="{left}" y="{top}" width="{pw_}" height="{ph_}" fill="none" stroke="black"/>']
        title = self.metadata.get("title", "")
        out.append(f'<text x="{left}" y="18" font-size="13">{escape(title)}</text>')
        for dec in range(math.ceil(x_lo), math.floor(x_hi) + 1):
            px, _ = to_px(dec, y_lo)
            out.append(f'<text x="{px:.1f}" y="{top + ph_ + 18}" font-size="11" '
                       f'text-anchor="middle">1e{dec}</text>')
        for dec in range(math.ceil(y_lo), math.floor(y_hi) + 1):
            _, py = to_px(x_lo, dec)
            out.append(f'<text x="{left - 6}" y="{py + 4:.1f}" font-size="11" '
                       f'text-anchor="end">1e{dec}</text>')
        out.append(f'<text x="{left + pw_ / 2:.1f}" y="{height - 10}" font-size="12" '
                   'text-anchor="middle">ndof</text>')
        # slope guides anchored at the first point of the first nonempty series
        anchor = next(((d[1][0], d[2][0]) for d in data if d[1].size), None)
        if anchor is not None:
            for slope, dash in ((-1.0, "6,3"), (-0.5, "2,3")):
                x1, y1 = to_px(*anchor)
                x2, y2 = to_px(x_hi, anchor[1] + slope * (x_hi - anchor[0]))
                out.append(f'<line class="guide" x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" '
                           f'y2="{y2:.2f}" stroke="gray" stroke-dasharray="{dash}"/>')
        palette = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")
        for k, (label, lx, ly) in enumerate(data):
            color = palette[k % len(palette)]
            pts = " ".join("{:.2f},{:.2f}".format(*to_px(a, b)) for a, b in zip(lx, ly))
            out.append(f'<polyline class="series" data-series="{escape(label)}" points="{pts}" '
                       f'fill="none" stroke="{color}" stroke-width="1.5"/>')
            ly_leg = top + 14 + 18 * k
            out.append(f'<line x1="{left + pw_ + 10}" y1="{ly_leg}" x2="{left + pw_ + 30}" '
                       f'y2="{ly_leg}" stroke="{color}" stroke-width="1.5"/>')
            out.append(f'<text x="{left + pw_ + 35}" y="{ly_leg + 4}" font-size="11">'
                       f'{escape(label)}</text>')
        for k, label in enumerate(("slope -1", "slope -1/2")):
            ly_leg = top + 14 + 18 * (len(data) + k)
            out.append(f'<text x="{left + pw_ + 35}" y="{ly_leg + 4}" font-size="11" '
                       f'fill="gray">{label}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _padded_range(values: np.ndarray) -> tuple[float, float]:
    if values.size == 0:
        return 0.0, 1.0
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        return lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


# ---------------------------------------------------------------- effectivity

def fill_effectivity(report: ErrorReport) -> ErrorReport:
    """Set the three effectivity indices of ``report`` in place and return it."""
    report.ieff_lambda = effectivity(report.eta_sq, report.err_lambda)
    report.ieff_h1 = effectivity(report.eta, report.err_h1)
    report.ieff_l2 = effectivity(report.eta_l2, report.err_l2)
    return report


def guarantee_violations(table: ResultTable) -> list[str]:
    """Rows with verified assumptions where an error exceeds its estimator.

    The allowed slack is the reference error recorded in the metadata
    (``slack_*`` keys) plus the absolute ``guarantee_tol``.
    """
    tol = float(table.metadata.get("guarantee_tol", 1e-10))
    slack = {k: float(table.metadata.get(f"slack_{k}", 0.0)) for k in ("lambda", "h1", "l2")}
    bad = []
    for k, r in enumerate(table.rows):
        if ASSUMPTIONS_FAILED in r.flags:
            continue
        for name, err, est in (("lambda", r.err_lambda, r.eta_sq), ("h1", r.err_h1, r.eta),
                               ("l2", r.err_l2, r.eta_l2)):
            if err is None or est is None or not (np.isfinite(err) and np.isfinite(est)):
                continue
            if err > est + slack[name] + tol:
                bad.append(f"row {k} (N={r.level}): Err_{name} {err:.6g} > estimator {est:.6g}")
    return bad


# ---------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class EfficiencyCheck:
    """Residual norm against the theoretical efficiency ceiling.

    ``holds`` is None when undecidable: missing inputs, or a failed check
    whose left side is only an upper bound of the residual norm (the flux
    estimator of the finite element back-end).
    """
    level: object
    residual_sq: float
    ceiling: float
    holds: bool | None
    proxy: bool

    @property
    def ratio(self) -> float:
        return self.residual_sq / self.ceiling if self.ceiling > 0 else math.nan


def efficiency_ceiling(energy_sq: float, dm_l2_sq: float, c_bar_h: float, lambda_m: float,
                       lambda_M: float, sup_V: float = 1.0) -> float:
    """Upper limit for the squared residual norm implied by the errors.

    ``sup_V = 1`` gives the abstract ceiling in the operator's own dual
    norm; for the planewave back-end the residual is measured in the
    ``H^{-1}`` norm and the ceiling picks up the factor ``sup V``.
    """
    return sup_V * residual_lower_bound_rhs(energy_sq, dm_l2_sq, c_bar_h, lambda_m, lambda_M)


def efficiency_diagnostics(table: ResultTable, rel_tol: float = 1e-9) -> list[EfficiencyCheck]:
    """Evaluate the efficiency ceiling for every row of a finished run."""
    out = []
    for r, d in zip(table.rows, table.diagnostics):
        inputs = (r.err_h1, r.err_l2, d.get("c_bar_h"), d.get("lambda_m"), d.get("lambda_M"),
                  d.get("residual_sq"))
        if any(v is None or isinstance(v, str) or not np.isfinite(v) for v in inputs):
            out.append(EfficiencyCheck(r.level, math.nan, math.nan, None, d.get("proxy", False)))
            continue
        ceiling = efficiency_ceiling(r.err_h1 ** 2, r.err_l2 ** 2, d["c_bar_h"], d["lambda_m"],
                                     d["lambda_M"], d.get("sup_V", 1.0))
        lhs = d["residual_sq"]
        ok = lhs <= ceiling * (1.0 + rel_tol) + 1e-15
        holds = True if ok else (None if d.get("proxy") else False)
        out.append(EfficiencyCheck(r.level, lhs, ceiling, holds, bool(d.get("proxy"))))
    return out


def _c_bar(lambda_Mh: float, lower_first: float | None) -> float:
    if lower_first is None or not np.isfinite(lower_first):
        return math.nan
    return max((lambda_Mh / lower_first - 1.0) ** 2, 1.0)


# ---------------------------------------------------------------- runners

_PW_ONLY = {"alpha", "K_V", "lower_bounds"}
_FEM_ONLY = {"case", "delta", "C_I", "C_S"}
_ADAPTIVE_ONLY = {"theta", "max_dof", "exponent", "initial_n"}


def _metadata(cfg: ExperimentConfig) -> dict:
    meta = {"title": cfg.label or f"{cfg.backend} {cfg.domain} cluster {cfg.m}:{cfg.M}",
            "code_version": __version__}
    skip = {"label", "snapshot_dir", "cache_dir"}
    skip |= _FEM_ONLY if cfg.backend == "pw" else _PW_ONLY
    if not cfg.adaptive:
        skip |= _ADAPTIVE_ONLY
    for f in fields(cfg):
        if f.name in skip:
            continue
        value = getattr(cfg, f.name)
        if f.name == "ladder":
            value = ",".join(str(n) for n in value)
        if f.name == "seed":
            value = cfg.effective_seed
        meta[f"config.{f.name}"] = value
    meta["guarantee_tol"] = GUARANTEE_TOL[cfg.backend]
    return meta


def _with_rung(exc: EigencertError, rung) -> EigencertError:
    try:
        new = type(exc)(f"rung {rung}: {exc}")
    except TypeError:
        return exc
    new.__cause__ = exc
    return new


def run_ladder(cfg: ExperimentConfig, progress=None) -> ResultTable:
    """Run every rung of ``cfg.ladder`` and collect one row per rung.

    ``progress(row)`` is called after each rung. Rungs whose gap
    assumptions fail are emitted with the ``assumptions-failed`` flag and
    without estimators.
    """
    cfg.validate()
    if cfg.adaptive:
        raise ConfigError("use run_adaptive for adaptive configurations")
    table = ResultTable(metadata=_metadata(cfg))
    if not cfg.ladder:
        return table
    if cfg.backend == "pw":
        _run_pw(cfg, table, progress)
    else:
        _run_fem(cfg, table, progress)
    return table


def _pw_lower(cfg: ExperimentConfig, d: int) -> np.ndarray:
    if cfg.lower_bound is None:
        return pw.pw_lower_bounds(d, cfg.M + 1)
    lower = np.full(cfg.M + 1, math.nan)
    lower[cfg.M] = cfg.lower_bound
    if cfg.lower_first is not None:
        lower[0] = cfg.lower_first
    return lower


def _run_pw(cfg: ExperimentConfig, table: ResultTable, progress) -> None:
    d = 1 if cfg.domain == "torus-1d" else 2
    _, N_ref = parse_reference(cfg.reference)
    K_V = cfg.K_V or 2 * N_ref
    seed = cfg.effective_seed
    pot = pw.build_potential(d, cfg.alpha, K_V)
    lower = _pw_lower(cfg, d)
    ref = pw.reference_solution(pot, N_ref, cfg.m, cfg.M, seed=seed, cache_dir=cfg.cache_dir)
    ref_est = pw.pw_estimate(ref, lower)
    # the reference carries its own discretization error; its estimators bound it
    for key, value in (("lambda", ref_est.eta_sq), ("h1", ref_est.eta), ("l2", ref_est.eta_l2)):
        table.metadata[f"slack_{key}"] = repr(float(value)) if np.isfinite(value) else "0.0"
    table.metadata["config.K_V"] = K_V
    table.metadata["reference_ndof"] = ref.basis.size
    sup_V = float(pot.sample().max())
    table.metadata["sup_V"] = f"{sup_V:.12g}"
    for N in cfg.ladder:
        try:
            sol = pw.pw_solve_cluster(pw.PWBasis(d, N, pot.L), pot, cfg.m, cfg.M, seed=seed)
            est = pw.pw_estimate(sol, lower)
            err_lambda, err_h1, err_l2 = pw.pw_reference_errors(ref, sol)
        except EigencertError as exc:
            raise _with_rung(exc, N) from exc
        row = ErrorReport(ndof=sol.basis.size, h_or_N=float(N), level=N,
                          err_lambda=err_lambda, err_h1=err_h1, err_l2=err_l2)
        c_bar = math.nan
        if est.constants is None:
            row.flags.append(ASSUMPTIONS_FAILED)
        else:
            row.eta_sq, row.eta, row.eta_l2 = est.eta_sq, est.eta, est.eta_l2
            c_bar = est.constants.c_bar_h
        if not est.regularity_ok:
            row.flags.append("regularity-failed")
        fill_effectivity(row)
        table.rows.append(row)
        table.diagnostics.append({"residual_sq": est.eta_res_sq, "c_bar_h": c_bar,
                                  "lambda_m": float(ref.rayleigh[0]),
                                  "lambda_M": float(ref.rayleigh[-1]),
                                  "sup_V": sup_V, "proxy": False})
        if progress is not None:
            progress(row)


def _mesh_builder(domain: str):
    return fem.mesh_square_uniform if domain == "square" else fem.mesh_lshape


def _exact_values(cfg: ExperimentConfig) -> np.ndarray | None:
    if cfg.domain == "square":
        return fem.square_cluster(cfg.m, cfg.M)[0]
    if cfg.M <= len(fem.LSHAPE_EIGENVALUES):
        return np.array(fem.LSHAPE_EIGENVALUES[cfg.m - 1:cfg.M])
    return None


# one fine-mesh reference is kept so that blocks sharing a ladder reuse it
_FINE_CACHE: dict = {}


WARM_START_VERTICES = 40000


def _warm_start(chain, prolongators, cfg: ExperimentConfig):
    """Eigenvectors of a moderate chain mesh carried up to the finest one."""
    j = max([i for i, mesh in enumerate(chain[:-1]) if mesh.n_vertices <= WARM_START_VERTICES],
            default=None)
    if j is None:
        return None
    coarse = fem.fem_solve_cluster(fem.assemble_p1(chain[j]), cfg.m, cfg.M, seed=cfg.effective_seed)
    x = coarse.system.extend(coarse.lowest)
    for P in prolongators[j:]:
        x = P @ x
    return x[chain[-1].interior_vertices]


def _fine_ladder_reference(cfg: ExperimentConfig, levels_beyond: int):
    """Uniform refinement chain through every rung, and a reference on top.

    Returns the rung meshes and a registered :class:`FineMeshReference`.
    """
    key = (cfg.domain, cfg.ladder, levels_beyond, cfg.m, cfg.M, cfg.effective_seed)
    if key in _FINE_CACHE:
        return _FINE_CACHE[key]
    _FINE_CACHE.clear()
    steps = _doubling_levels(cfg.ladder)
    total = steps[-1] + levels_beyond
    chain = [_mesh_builder(cfg.domain)(cfg.ladder[0])]
    prolongators = []
    for _ in range(total):
        finer = fem.refine_uniform(chain[-1])
        prolongators.append(fem.prolongation(chain[-1], finer))
        chain.append(finer)
    fine = chain[-1]
    log.info("fine reference mesh: %d vertices", fine.n_vertices)
    ref_sol = fem.fem_solve_cluster(fem.assemble_p1(fine), cfg.m, cfg.M,
                                    x0=_warm_start(chain, prolongators, cfg),
                                    seed=cfg.effective_seed)
    exact = _exact_values(cfg)
    reference = fem.FineMeshReference(ref_sol, exact_values=exact, min_levels=MIN_FINE_LEVELS)
    Q = sp.identity(fine.n_vertices, format="csr")
    wanted = set(steps)
    for j in range(total - 1, -1, -1):
        Q = (Q @ prolongators[j]).tocsr()
        if j in wanted:
            reference.register(chain[j], Q, total - j)
    meshes = [chain[j] for j in steps]
    _FINE_CACHE[key] = (meshes, reference)
    return meshes, reference


def _fem_row(cfg, mesh, sol, est, reference, exact, level, lower_first) -> tuple:
    row = ErrorReport(ndof=sol.system.ndof, h_or_N=mesh.h, level=level)
    if reference is not None:
        row.err_lambda, row.err_h1, row.err_l2 = reference.errors(sol)
    elif exact is not None:
        row.err_lambda = float(np.sum(sol.rayleigh) - np.sum(exact))
    if est.constants is None:
        row.flags.append(ASSUMPTIONS_FAILED)
    else:
        row.eta_sq, row.eta, row.eta_l2 = est.eta_sq, est.eta, est.eta_l2
    fill_effectivity(row)
    if exact is not None:
        lam_m, lam_M = float(exact[0]), float(exact[-1])
    elif reference is not None:
        lam_m, lam_M = (float(reference.solution.rayleigh[0]),
                        float(reference.solution.rayleigh[-1]))
    else:
        lam_m = lam_M = math.nan
    diag = {"residual_sq": est.eta_res_sq, "c_bar_h": _c_bar(float(sol.rayleigh[-1]), lower_first),
            "lambda_m": lam_m, "lambda_M": lam_M, "sup_V": 1.0, "proxy": True}
    return row, diag


def _set_fem_slack(table: ResultTable, cfg: ExperimentConfig, kind: str) -> None:
    lam_slack = 0.0
    if kind != "analytic" and cfg.domain == "lshape":
        lam_slack = LITERATURE_SLACK * (cfg.M - cfg.m + 1)
    table.metadata["slack_lambda"] = repr(lam_slack)
    table.metadata["slack_h1"] = "0.0"
    table.metadata["slack_l2"] = "0.0"


def _run_fem(cfg: ExperimentConfig, table: ResultTable, progress) -> None:
    kind, param = parse_reference(cfg.reference)
    seed = cfg.effective_seed
    exact = _exact_values(cfg)
    if kind == "fine":
        meshes, reference = _fine_ladder_reference(cfg, param)
        table.metadata["reference_ndof"] = reference.solution.system.ndof
    else:
        meshes = [_mesh_builder(cfg.domain)(n) for n in cfg.ladder]
        reference = fem.AnalyticSquareReference() if kind == "analytic" else None
    _set_fem_slack(table, cfg, kind)
    for n, mesh in zip(cfg.ladder, meshes):
        try:
            sol = fem.fem_solve_cluster(fem.assemble_p1(mesh), cfg.m, cfg.M, seed=seed)
            est = fem.fem_estimate(sol, cfg.lower_bound, case=cfg.case, delta=cfg.delta,
                                   C_I=cfg.C_I, C_S=cfg.C_S)
            row, diag = _fem_row(cfg, mesh, sol, est, reference, exact, n, cfg.lower_first)
        except EigencertError as exc:
            raise _with_rung(exc, n) from exc
        table.rows.append(row)
        table.diagnostics.append(diag)
        if progress is not None:
            progress(row)


def _indicator_summary(eta: np.ndarray) -> dict:
    q = np.quantile(eta, [0.0, 0.5, 0.9, 1.0])
    return {"count": int(eta.size), "min": float(q[0]), "median": float(q[1]),
            "p90": float(q[2]), "max": float(q[3]), "sum": float(eta.sum())}


def run_adaptive(cfg: ExperimentConfig, progress=None) -> ResultTable:
    """Adaptive loop (solve, estimate, mark, bisect) with one row per level.

    Every second level the mesh and its element indicators are written to
    ``cfg.snapshot_dir`` when set. The indicator distribution of each level
    is kept in ``table.extras["indicators"]`` and summarised in the
    metadata.
    """
    cfg.adaptive = True
    cfg.validate()
    kind, param = parse_reference(cfg.reference)
    table = ResultTable(metadata=_metadata(cfg))
    seed = cfg.effective_seed
    snap_dir = Path(cfg.snapshot_dir) if cfg.snapshot_dir else None
    snapshots = []

    def on_level(k, level):
        if snap_dir is not None and k % 2 == 0:
            snap_dir.mkdir(parents=True, exist_ok=True)
            mesh_path = snap_dir / f"level{k:02d}.mesh"
            level.mesh.export(mesh_path)
            fem.export_indicators(level.mesh, level.indicators, snap_dir / f"level{k:02d}_eta.csv")
            snapshots.append(str(mesh_path))
        log.info("adaptive level %d: %d vertices", k, level.mesh.n_vertices)

    mesh0 = _mesh_builder(cfg.domain)(cfg.initial_n)
    levels = fem.adaptive_loop(mesh0, cfg.m, cfg.M, cfg.lower_bound, theta=cfg.theta,
                               max_dof=cfg.max_dof, exponent=cfg.exponent, seed=seed,
                               callback=on_level)
    exact = _exact_values(cfg)
    if kind == "analytic":
        reference = fem.AnalyticSquareReference()
    elif kind == "fine":
        reference = _adaptive_fine_reference(levels, param, cfg, exact)
        table.metadata["reference_ndof"] = reference.solution.system.ndof
    else:
        reference = None
    _set_fem_slack(table, cfg, kind)
    summaries = []
    for k, level in enumerate(levels):
        row, diag = _fem_row(cfg, level.mesh, level.solution, level.estimate, reference,
                             exact, k, cfg.lower_first)
        row.flags.extend(f for f in level.flags if f not in row.flags)
        table.rows.append(row)
        table.diagnostics.append(diag)
        s = _indicator_summary(level.indicators)
        summaries.append(s)
        table.metadata[f"eta_K.level{k:02d}"] = (
            f"count={s['count']} min={s['min']:.6g} median={s['median']:.6g} "
            f"p90={s['p90']:.6g} max={s['max']:.6g}")
        if progress is not None:
            progress(row)
    table.extras["indicators"] = [lv.indicators for lv in levels]
    table.extras["indicator_summary"] = summaries
    table.extras["snapshots"] = snapshots
    table.extras["levels"] = levels
    return table


def _adaptive_fine_reference(levels, k: int, cfg: ExperimentConfig, exact):
    """Final adaptive mesh refined uniformly ``k`` times, all levels registered."""
    mesh = levels[-1].mesh
    Q = sp.identity(mesh.n_vertices, format="csr")
    for _ in range(k):
        finer = fem.refine_uniform(mesh)
        Q = (fem.prolongation(mesh, finer) @ Q).tocsr()
        mesh = finer
    last = levels[-1].solution
    x0 = (Q @ last.system.extend(last.lowest))[mesh.interior_vertices]
    ref_sol = fem.fem_solve_cluster(fem.assemble_p1(mesh), cfg.m, cfg.M, x0=x0,
                                    seed=cfg.effective_seed)
    reference = fem.FineMeshReference(ref_sol, exact_values=exact, min_levels=MIN_FINE_LEVELS)
    reference.register(levels[-1].mesh, Q, k)
    for j in range(len(levels) - 2, -1, -1):
        Q = (Q @ levels[j].to_next).tocsr()
        reference.register(levels[j].mesh, Q, k + len(levels) - 1 - j)
    return reference


def run(cfg: ExperimentConfig, progress=None) -> ResultTable:
    """Dispatch to :func:`run_adaptive` or :func:`run_ladder`."""
    return run_adaptive(cfg, progress) if cfg.adaptive else run_ladder(cfg, progress)


# ---------------------------------------------------------------- presets

C_I_SQUARE = 0.493 / math.sqrt(2.0)
SQUARE_FIRST = 2.0 * math.pi ** 2


def _square_block(m, M, lower):
    return ExperimentConfig("fem", "square", m, M, ladder=(40, 80, 160, 320), reference="analytic",
                            case="II", delta=1.0, C_I=C_I_SQUARE, C_S=1.0, lower_bound=lower,
                            lower_first=SQUARE_FIRST,
                            label=f"unit square, case II, cluster {m}:{M}, lower bound {lower}")


def _lshape_block(lower):
    return ExperimentConfig("fem", "lshape", 3, 5, ladder=(5, 10, 20, 40, 80),
                            reference="fine:2", case="I", lower_bound=lower,
                            label=f"L-shape, case I, cluster 3:5, lower bound {lower}")


def _pw_block(d, alpha, N_ref, ladder, m, M):
    return ExperimentConfig("pw", f"torus-{d}d", m, M, ladder=ladder, reference=f"fine:{N_ref}",
                            alpha=alpha, lower_bounds="free-torus",
                            label=f"planewave {d}D, alpha {alpha}, cluster {m}:{M}")


def preset(table: int) -> list[ExperimentConfig]:
    """Configurations reproducing one published table, one per block."""
    table = int(table)
    if table == 3:
        return [_square_block(2, 3, 73.9444), _square_block(9, 10, 171.135),
                _square_block(18, 19, 295.777)]
    if table == 4:
        return [_lshape_block(34.0774), _lshape_block(39.1209)]
    if table == 5:
        return [_pw_block(1, 1.0, 600, (10, 50, 90, 130), m, M)
                for m, M in ((2, 3), (10, 11), (16, 17), (1, 9), (1, 17))]
    if table == 6:
        return [_pw_block(2, 0.1, 50, (5, 15, 25), m, M) for m, M in ((1, 5), (6, 9), (10, 13))]
    if table == 7:
        return [_pw_block(2, 0.5, 50, (5, 15, 25), m, M) for m, M in ((6, 9), (10, 13))]
    if table == 8:
        return [ExperimentConfig("fem", "lshape", 3, 5, reference="fine:2", case="I",
                                 lower_bound=39.1209, adaptive=True, theta=0.6, max_dof=32000,
                                 initial_n=5, label="adaptive L-shape, case I, cluster 3:5")]
    raise ConfigError(f"no preset for table {table}; choose 3 to 8")


def reproduce(table: int, blocks=None, progress=None, seed: int | None = None) -> list[ResultTable]:
    """Run the preset blocks of a table (all, or the 1-based ``blocks``)."""
    cfgs = preset(table)
    if blocks is not None:
        try:
            cfgs = [cfgs[b - 1] for b in blocks]
        except IndexError:
            raise ConfigError(f"table {table} has {len(preset(table))} blocks") from None
    out = []
    try:
        for cfg in cfgs:
            if seed is not None:
                cfg = replace(cfg, seed=seed)
            out.append(run(cfg, progress))
    finally:
        # the shared fine reference only pays off within one table
        _FINE_CACHE.clear()
    return out
