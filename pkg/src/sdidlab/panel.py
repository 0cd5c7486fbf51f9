"""Balanced-panel data model, CSV ingestion, and block-design validation.

A panel is an N x T outcome matrix plus a binary N x T treatment matrix.
Everything downstream assumes a *block* treatment pattern: a fixed group of
units adopts treatment at a common date and stays treated.  ``validate_block``
checks that pattern and produces a :class:`BlockDesign` whose rows are
reordered controls-first so later math can slice the four corner blocks
without index arithmetic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

LONG_COLUMNS = ("unit", "time", "outcome", "treated")


class PanelFormatError(ValueError):
    """Malformed panel input (duplicates, holes, bad values).

    ``line`` is the 1-based line number of the offending CSV row when the
    error can be attributed to a single row.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DesignError(ValueError):
    """Treatment pattern is not a block design supported by this package."""


def _coerce_time_label(raw: str):
    """Map a raw time label to a sortable value (int, then float, else str)."""
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def _parse_treated(raw, line=None) -> int:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise PanelFormatError(f"treated value {raw!r} is not numeric", line)
    if value == 0.0:
        return 0
    if value == 1.0:
        return 1
    raise PanelFormatError(f"treated value {raw!r} is outside {{0,1}}", line)


@dataclass(frozen=True)
class Panel:
    """Balanced panel: outcomes and a binary treatment matrix.

    Parameters
    ----------
    outcomes : (N, T) float array
        One outcome per unit and period; no missing cells.
    treatment : (N, T) array of {0,1}
        Treatment exposure indicator.
    unit_labels, time_labels : sequences of length N and T
        Row and column labels, already in the panel's canonical sorted order.

    Instances are immutable; the arrays are marked read-only so panels can be
    shared across worker processes or threads without copies.
    """

    outcomes: np.ndarray
    treatment: np.ndarray
    unit_labels: tuple
    time_labels: tuple

    def __post_init__(self):
        outcomes = np.ascontiguousarray(self.outcomes, dtype=np.float64)
        treatment = np.ascontiguousarray(self.treatment, dtype=np.int8)
        # never freeze a caller's own array in place
        if outcomes is self.outcomes and outcomes.flags.writeable:
            outcomes = outcomes.copy()
        if treatment is self.treatment and treatment.flags.writeable:
            treatment = treatment.copy()
        if outcomes.ndim != 2:
            raise PanelFormatError("outcomes must be a 2-d matrix")
        if outcomes.shape != treatment.shape:
            raise PanelFormatError(
                f"outcomes shape {outcomes.shape} != treatment shape {treatment.shape}"
            )
        if not np.all(np.isfinite(outcomes)):
            raise PanelFormatError("outcomes contain non-finite values")
        if not np.isin(treatment, (0, 1)).all():
            raise PanelFormatError("treatment entries must be 0 or 1")
        n, t = outcomes.shape
        if len(self.unit_labels) != n or len(self.time_labels) != t:
            raise PanelFormatError("label lengths do not match matrix shape")
        outcomes.setflags(write=False)
        treatment.setflags(write=False)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "unit_labels", tuple(self.unit_labels))
        object.__setattr__(self, "time_labels", tuple(self.time_labels))

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcomes.shape[1]

    def to_long_csv(self, destination=None) -> str | None:
        """Serialize in long format, rows sorted by (unit, time).

        Outcome values are written with shortest round-trip formatting, so
        ``load_panel(panel.to_long_csv())`` reproduces the outcome matrix
        bit-exactly.  Returns the CSV text when ``destination`` is None,
        otherwise writes to the given path or file object.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LONG_COLUMNS)
        for i, unit in enumerate(self.unit_labels):
            for j, time in enumerate(self.time_labels):
                writer.writerow(
                    [unit, time, repr(float(self.outcomes[i, j])), int(self.treatment[i, j])]
                )
        text = buf.getvalue()
        if destination is None:
            return text
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w", encoding="utf-8") as fh:
                fh.write(text)
        return None


def _open_rows(source) -> Iterable[list[str]]:
    if hasattr(source, "read"):
        return csv.reader(source)
    if isinstance(source, str) and "\n" in source:
        return csv.reader(io.StringIO(source))
    return csv.reader(open(source, newline="", encoding="utf-8-sig"))


def load_panel(source) -> Panel:
    """Read a long-format CSV stream into a :class:`Panel`.

    The header must contain ``unit,time,outcome,treated`` (extra columns are
    ignored).  Every (unit, time) pair must appear exactly once and the set of
    pairs must form a full grid.  Units sort lexicographically; time labels
    sort numerically when they parse as numbers, lexicographically otherwise.

    Raises
    ------
    PanelFormatError
        On a missing header, duplicate cell, unbalanced grid, non-numeric
        outcome, or a treated value outside {0, 1}.  The message carries the
        offending line number where applicable.
    """
    rows = iter(_open_rows(source))
    try:
        header = [h.strip().lower() for h in next(rows)]
    except StopIteration:
        raise PanelFormatError("empty input", line=1)
    try:
        cols = {name: header.index(name) for name in LONG_COLUMNS}
    except ValueError:
        raise PanelFormatError(
            f"header must contain columns {','.join(LONG_COLUMNS)}; got {','.join(header)}",
            line=1,
        )

    cells: dict[tuple, tuple[float, int]] = {}
    units: set[str] = set()
    times: set = set()
    for line_no, row in enumerate(rows, start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) <= max(cols.values()):
            raise PanelFormatError(f"expected {len(header)} fields, got {len(row)}", line_no)
        unit = row[cols["unit"]].strip()
        time = _coerce_time_label(row[cols["time"]].strip())
        try:
            outcome = float(row[cols["outcome"]])
        except ValueError:
            raise PanelFormatError(
                f"outcome value {row[cols['outcome']]!r} is not numeric", line_no
            )
        treated = _parse_treated(row[cols["treated"]].strip(), line_no)
        key = (unit, time)
        if key in cells:
            raise PanelFormatError(f"duplicate cell for unit {unit!r} at time {time!r}", line_no)
        cells[key] = (outcome, treated)
        units.add(unit)
        times.add(time)

    if not cells:
        raise PanelFormatError("no data rows")
    unit_labels = sorted(units)
    try:
        time_labels = sorted(times)
    except TypeError:
        time_labels = sorted(times, key=str)
    missing = [
        (u, t) for u in unit_labels for t in time_labels if (u, t) not in cells
    ]
    if missing:
        u, t = missing[0]
        raise PanelFormatError(
            f"unbalanced panel: missing cell for unit {u!r} at time {t!r} "
            f"({len(missing)} missing cells total)"
        )

    n, t = len(unit_labels), len(time_labels)
    outcomes = np.empty((n, t))
    treatment = np.empty((n, t), dtype=np.int8)
    for i, u in enumerate(unit_labels):
        for j, tl in enumerate(time_labels):
            outcomes[i, j], treatment[i, j] = cells[(u, tl)]
    return Panel(outcomes, treatment, tuple(unit_labels), tuple(time_labels))


def load_wide(outcome_source, treatment_source) -> Panel:
    """Read a wide unit-by-time outcome matrix plus a sidecar treatment matrix.

    Both CSVs share the layout: first column holds unit labels, the remaining
    header fields are time labels, one row per unit.
    """

    def read_matrix(source, value_parser, what):
        rows = list(_open_rows(source))
        if not rows:
            raise PanelFormatError(f"empty {what} input", line=1)
        time_labels = [_coerce_time_label(h.strip()) for h in rows[0][1:]]
        units, data = [], []
        for line_no, row in enumerate(rows[1:], start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(time_labels) + 1:
                raise PanelFormatError(
                    f"expected {len(time_labels) + 1} fields, got {len(row)}", line_no
                )
            units.append(row[0].strip())
            data.append([value_parser(v, line_no) for v in row[1:]])
        return units, time_labels, data

    def parse_outcome(v, line_no):
        try:
            return float(v)
        except ValueError:
            raise PanelFormatError(f"outcome value {v!r} is not numeric", line_no)

    units_y, times_y, y = read_matrix(outcome_source, parse_outcome, "outcome")
    units_w, times_w, w = read_matrix(treatment_source, _parse_treated, "treatment")
    if units_y != units_w or times_y != times_w:
        raise PanelFormatError("outcome and treatment files have mismatched labels")
    if len(set(units_y)) != len(units_y):
        raise PanelFormatError("duplicate unit rows in wide input")

    order = np.argsort(np.array(units_y, dtype=object))
    try:
        time_order = np.argsort(np.array(times_y))
    except TypeError:
        time_order = np.argsort(np.array([str(t) for t in times_y], dtype=object))
    outcomes = np.asarray(y, dtype=float)[order][:, time_order]
    treatment = np.asarray(w, dtype=np.int8)[order][:, time_order]
    return Panel(
        outcomes,
        treatment,
        tuple(units_y[i] for i in order),
        tuple(times_y[j] for j in time_order),
    )


@dataclass(frozen=True)
class BlockDesign:
    """Validated block-treatment partition with controls-first views.

    ``y`` is the outcome matrix with rows permuted so the ``n_co`` control
    units come first; columns keep their sorted time order, which already
    places the ``t_pre`` pre-treatment periods first.  The four corner blocks
    are exposed as read-only views.
    """

    n_co: int
    n_tr: int
    t_pre: int
    t_post: int
    unit_order: tuple
    time_order: tuple
    y: np.ndarray = field(repr=False)
    unit_labels: tuple = field(repr=False)
    time_labels: tuple = field(repr=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def y_co_pre(self) -> np.ndarray:
        return self.y[: self.n_co, : self.t_pre]

    @property
    def y_co_post(self) -> np.ndarray:
        return self.y[: self.n_co, self.t_pre :]

    @property
    def y_tr_pre(self) -> np.ndarray:
        return self.y[self.n_co :, : self.t_pre]

    @property
    def y_tr_post(self) -> np.ndarray:
        return self.y[self.n_co :, self.t_pre :]

    @property
    def control_labels(self) -> tuple:
        return self.unit_labels[: self.n_co]

    @property
    def treated_labels(self) -> tuple:
        return self.unit_labels[self.n_co :]


def validate_block(panel: Panel) -> BlockDesign:
    """Check for block treatment and return the controls-first design.

    Treated units are those with any exposure.  All of them must share the
    same adoption period and stay treated through the last period; anything
    else (staggered adoption, treatment reversal, all-zero or all-one
    treatment) raises :class:`DesignError` naming the offending unit or time.
    """
    w = panel.treatment
    n, t = w.shape
    ever = w.max(axis=1) == 1
    treated_idx = np.flatnonzero(ever)
    control_idx = np.flatnonzero(~ever)
    if treated_idx.size == 0:
        raise DesignError("unsupported design: no treated unit (treatment matrix is all zero)")
    if control_idx.size == 0:
        raise DesignError("unsupported design: no control unit (every unit is treated)")

    starts = np.argmax(w[treated_idx] == 1, axis=1)
    first = int(starts.min())
    for k, i in enumerate(treated_idx):
        row = w[i]
        start = int(starts[k])
        if start != first:
            raise DesignError(
                "unsupported design: staggered adoption; unit "
                f"{panel.unit_labels[i]!r} first treated at time "
                f"{panel.time_labels[start]!r} but unit "
                f"{panel.unit_labels[treated_idx[int(np.argmin(starts))]]!r} at time "
                f"{panel.time_labels[first]!r}"
            )
        off = np.flatnonzero(row[start:] == 0)
        if off.size:
            raise DesignError(
                "unsupported design: treatment reverses for unit "
                f"{panel.unit_labels[i]!r} at time {panel.time_labels[start + int(off[0])]!r}"
            )
    if first == 0:
        raise DesignError("unsupported design: no pre-treatment period (treatment starts at the first period)")

    t_pre = first
    order = np.concatenate([control_idx, treated_idx])
    return BlockDesign(
        n_co=int(control_idx.size),
        n_tr=int(treated_idx.size),
        t_pre=t_pre,
        t_post=t - t_pre,
        unit_order=tuple(int(i) for i in order),
        time_order=tuple(range(t)),
        y=panel.outcomes[order],
        unit_labels=tuple(panel.unit_labels[i] for i in order),
        time_labels=tuple(panel.time_labels),
    )


def design_from_matrix(y: np.ndarray, n_co: int, t_pre: int,
                       unit_labels: Sequence | None = None,
                       time_labels: Sequence | None = None) -> BlockDesign:
    """Build a design directly from a controls-first, pre-first matrix.

    Used on the hot paths (resampling, simulation) where the block structure
    is true by construction and re-validating labels per replicate would
    dominate runtime.
    """
    y = np.asarray(y, dtype=np.float64)
    n, t = y.shape
    if not (1 <= n_co < n and 1 <= t_pre < t):
        raise DesignError(f"invalid block sizes n_co={n_co}, t_pre={t_pre} for shape {y.shape}")
    if unit_labels is None:
        unit_labels = tuple(f"u{i}" for i in range(n))
    if time_labels is None:
        time_labels = tuple(range(t))
    return BlockDesign(
        n_co=n_co,
        n_tr=n - n_co,
        t_pre=t_pre,
        t_post=t - t_pre,
        unit_order=tuple(range(n)),
        time_order=tuple(range(t)),
        y=y,
        unit_labels=tuple(unit_labels),
        time_labels=tuple(time_labels),
    )


def block_treatment_matrix(n: int, t: int, n_tr: int, t_post: int) -> np.ndarray:
    """Binary matrix that is 1 exactly on the bottom-right n_tr x t_post block."""
    w = np.zeros((n, t), dtype=np.int8)
    w[n - n_tr :, t - t_post :] = 1
    return w


@dataclass(frozen=True)
class CovariateSet:
    """Cell-level covariates X with shape (N, T, p), aligned with a panel."""

    covariates: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.covariates, dtype=np.float64)
        if x.ndim != 3:
            raise PanelFormatError("covariates must have shape (N, T, p)")
        if not np.all(np.isfinite(x)):
            raise PanelFormatError("covariates contain non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "covariates", x)

    @property
    def p(self) -> int:
        return self.covariates.shape[2]

    def reordered(self, design: BlockDesign) -> np.ndarray:
        """Covariates with rows permuted into the design's unit order."""
        x = self.covariates
        if x.shape[:2] != design.y.shape:
            raise PanelFormatError(
                f"covariate shape {x.shape[:2]} does not match panel shape {design.y.shape}"
            )
        return x[list(design.unit_order)]
