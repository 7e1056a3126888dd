"""Discrete measures on the real line.

A measure is a finite list of weighted atoms.  The canonical form, which
every transport and solver operation requires, has strictly increasing
positions, strictly positive weights and total mass one.  Positions are
merged only when bitwise equal; nearby-but-distinct atoms are a job for
``quantize``, never for canonicalization.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidMeasure, InvalidParameter, NotCanonical

# Input mass may drift from 1 by accumulated float error; anything worse
# than this is a caller bug, not drift.
MASS_DRIFT_TOL = 1e-9


@dataclass(frozen=True)
class MomentSpec:
    """Moment order ``q`` > 0 and base point ``x0``.

    Describes the generalized moment  m(mu) = integral |x - x0|^q dmu.
    """

    q: float
    x0: float = 0.0

    def __post_init__(self):
        if not (self.q > 0 and np.isfinite(self.q)):
            raise InvalidParameter("moment order q must be positive and finite")
        if not np.isfinite(self.x0):
            raise InvalidParameter("base point x0 must be finite")


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atoms; ``canonical`` marks the normalized sorted form."""

    xs: np.ndarray
    ws: np.ndarray
    canonical: bool = False

    def __post_init__(self):
        xs = np.ascontiguousarray(self.xs, dtype=np.float64)
        ws = np.ascontiguousarray(self.ws, dtype=np.float64)
        if xs.ndim != 1 or ws.ndim != 1 or xs.size != ws.size:
            raise InvalidMeasure("positions and weights must be 1D arrays of equal length")
        if xs.size == 0:
            raise InvalidMeasure("measure needs at least one atom")
        if not np.all(np.isfinite(xs)):
            raise InvalidMeasure("positions must be finite")
        if not np.all(np.isfinite(ws)) or np.any(ws < 0):
            raise InvalidMeasure("weights must be finite and nonnegative")
        total = float(ws.sum())
        if total <= 0:
            raise InvalidMeasure("total mass must be positive")
        if self.canonical:
            if np.any(np.diff(xs) <= 0):
                raise InvalidMeasure("canonical form requires strictly increasing positions")
            if np.any(ws <= 0):
                raise InvalidMeasure("canonical form requires strictly positive weights")
            if abs(total - 1.0) > MASS_DRIFT_TOL:
                raise InvalidMeasure(
                    "canonical mass drifted by %g, beyond tolerance %g"
                    % (abs(total - 1.0), MASS_DRIFT_TOL)
                )
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ws", ws)

    @property
    def n_atoms(self):
        return int(self.xs.size)

    def total_mass(self):
        return float(self.ws.sum())


def dirac(x):
    """The unit point mass at ``x``."""
    return DiscreteMeasure(np.array([float(x)]), np.array([1.0]), canonical=True)


def canonicalize(m):
    """Sort, merge bitwise-equal positions, drop zero weights, renormalize.

    The input mass must already be within ``MASS_DRIFT_TOL`` of 1; drift
    inside the tolerance is renormalized away rather than rejected.
    Canonical measures are exact fixed points: they pass through unchanged,
    which keeps repeated canonicalization bitwise stable (renormalizing by
    a sum one ulp away from 1 would otherwise wiggle the weights).
    """
    if m.canonical:
        return m
    total = m.total_mass()
    if abs(total - 1.0) > MASS_DRIFT_TOL:
        raise InvalidMeasure(
            "mass %r drifted beyond tolerance %g; refusing to renormalize"
            % (total, MASS_DRIFT_TOL)
        )
    xs, inverse = np.unique(m.xs, return_inverse=True)
    ws = np.bincount(inverse, weights=m.ws, minlength=xs.size)
    keep = ws > 0
    xs, ws = xs[keep], ws[keep]
    if xs.size == 0:
        raise InvalidMeasure("all atoms carry zero weight")
    ws = ws / ws.sum()
    return DiscreteMeasure(xs, ws, canonical=True)


def require_canonical(m, what="operation"):
    if not m.canonical:
        raise NotCanonical("%s requires a canonical measure; call canonicalize first" % what)


def moment(m, spec):
    """integral |x - x0|^q dm, computed termwise."""
    return float(np.sum(m.ws * np.abs(m.xs - spec.x0) ** spec.q))


def support_radius(m, x0):
    """max |x - x0| over the atoms."""
    return float(np.max(np.abs(m.xs - x0)))


def empirical_from_samples(samples):
    """Canonical empirical measure of a 1D sample array (atoms merged)."""
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size == 0:
        raise InvalidMeasure("samples must be a nonempty 1D array")
    if not np.all(np.isfinite(samples)):
        raise InvalidMeasure("samples must be finite")
    xs, counts = np.unique(samples, return_counts=True)
    return DiscreteMeasure(xs, counts / samples.size, canonical=True)


def _cdf_integral(xs, cw, pw, t):
    """S(t) = integral_0^t Q(u) du for the quantile function Q of (xs, cw).

    ``cw`` is the cumulative weight grid ending at exactly 1, ``pw`` the
    cumulative position*weight grid.  Vectorized over ``t`` in [0, 1].
    """
    j = np.searchsorted(cw, t, side="left")
    below = np.where(j > 0, pw[np.maximum(j - 1, 0)], 0.0)
    prev = np.where(j > 0, cw[np.maximum(j - 1, 0)], 0.0)
    return below + xs[j] * (t - prev)


def quantize(m, max_atoms, spec, flow_cap=None):
    """Reduce to at most ``max_atoms`` atoms; return (measure, exact error).

    Quantile scheme: mass is split into ``max_atoms`` equal slices of the
    quantile function, and each slice collapses to the conditional location
    optimal for the cost |x-y|^q restricted to that slice:

    * q = 2: conditional mean,
    * q = 1: conditional (weighted) median,
    * otherwise: midpoint of the slice's support.

    The reported error is the exact W_q between input and output, from the
    monotone solver for q >= 1 and the exact flow solver for q < 1, so the
    ledger never relies on the placement heuristic being optimal.  When a
    q < 1 instance is too large for the flow solver, the monotone coupling
    cost is reported instead: the cost of any specific coupling bounds the
    optimum from above, so the ledger stays sound, just not tight.
    """
    require_canonical(m, "quantize")
    if int(max_atoms) < 1:
        raise InvalidParameter("max_atoms must be at least 1")
    M = int(max_atoms)
    if m.n_atoms <= M:
        return m, 0.0
    xs = m.xs
    ws = m.ws / m.ws.sum()
    cw = np.cumsum(ws)
    cw = cw / cw[-1]
    edges = np.arange(1, M + 1) / M  # right edges t_1 .. t_M; left edge of bin k is k/M
    if spec.q == 2.0:
        pw = np.cumsum(xs * ws)
        s_hi = _cdf_integral(xs, cw, pw, edges)
        s_lo = np.concatenate([[0.0], s_hi[:-1]])
        pos = (s_hi - s_lo) * M
    elif spec.q == 1.0:
        mids = (np.arange(M) + 0.5) / M
        pos = xs[np.searchsorted(cw, mids, side="left")]
    else:
        left = np.arange(M) / M
        lo = xs[np.minimum(np.searchsorted(cw, left, side="right"), xs.size - 1)]
        hi = xs[np.searchsorted(cw, edges, side="left")]
        pos = 0.5 * (lo + hi)
    out = canonicalize(DiscreteMeasure(pos, np.full(M, 1.0 / M)))
    from . import transport  # deferred: transport imports this module

    if spec.q >= 1.0:
        err = transport.wq_1d_monotone(m, out, spec.q).distance
    else:
        cap = 2000 if flow_cap is None else int(flow_cap)
        if m.n_atoms + out.n_atoms <= cap:
            err = transport.wq_exact_flow(m, out, spec.q, cap=cap).distance
        else:
            # cost of a feasible coupling >= optimal cost; W_q = cost here
            err = transport.monotone_cost_upper(m, out, spec.q)
    return out, err


# -- serialization ----------------------------------------------------------
#
# CSV: header "position,weight", one atom per row.  JSON: a bare array of
# [position, weight] pairs.  Floats are written with repr, which reads back
# bitwise-equal for every finite double.


def _fmt(x):
    return repr(float(x))


def to_csv(m, f):
    """Write atoms as CSV to a path or text file object."""
    if hasattr(f, "write"):
        _write_csv(m, f)
    else:
        with open(f, "w", newline="", encoding="utf-8") as fh:
            _write_csv(m, fh)


def _write_csv(m, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["position", "weight"])
    for x, wt in zip(m.xs, m.ws):
        w.writerow([_fmt(x), _fmt(wt)])


def from_csv(f):
    """Read a measure written by ``to_csv``; canonical flag is recomputed."""
    if hasattr(f, "read"):
        return _read_csv(f)
    with open(f, "r", newline="", encoding="utf-8") as fh:
        return _read_csv(fh)


def _read_csv(fh):
    rd = csv.reader(fh)
    header = next(rd, None)
    if header is None or [h.strip() for h in header] != ["position", "weight"]:
        raise InvalidMeasure("expected CSV header 'position,weight'")
    xs, ws = [], []
    for row in rd:
        if not row:
            continue
        if len(row) != 2:
            raise InvalidMeasure("malformed CSV row: %r" % (row,))
        xs.append(float(row[0]))
        ws.append(float(row[1]))
    return _with_computed_flag(np.array(xs), np.array(ws))


def to_json(m, f=None):
    """Serialize as a JSON array of [position, weight] pairs.

    With ``f`` None the JSON text is returned, otherwise written to the
    path or file object.
    """
    text = json.dumps([[float(x), float(w)] for x, w in zip(m.xs, m.ws)])
    if f is None:
        return text
    if hasattr(f, "write"):
        f.write(text)
    else:
        with open(f, "w", encoding="utf-8") as fh:
            fh.write(text)
    return None


def from_json(src):
    """Inverse of ``to_json``; accepts JSON text, a path or a file object."""
    if hasattr(src, "read"):
        pairs = json.load(src)
    else:
        s = str(src)
        if s.lstrip().startswith("["):
            pairs = json.loads(s)
        else:
            with open(s, "r", encoding="utf-8") as fh:
                pairs = json.load(fh)
    if not isinstance(pairs, list) or any(
        not isinstance(p, (list, tuple)) or len(p) != 2 for p in pairs
    ):
        raise InvalidMeasure("expected a JSON array of [position, weight] pairs")
    xs = np.array([float(p[0]) for p in pairs])
    ws = np.array([float(p[1]) for p in pairs])
    return _with_computed_flag(xs, ws)


def _with_computed_flag(xs, ws):
    if xs.size == 0:
        raise InvalidMeasure("measure needs at least one atom")
    is_canon = (
        bool(np.all(np.diff(xs) > 0))
        and bool(np.all(ws > 0))
        and abs(float(ws.sum()) - 1.0) <= MASS_DRIFT_TOL
    )
    return DiscreteMeasure(xs, ws, canonical=is_canon)
