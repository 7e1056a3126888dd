"""Iterated function systems with probabilities, and their certificates.

A model is a finite list of maps phi_i on the line with a probability
vector eta.  The two operators of interest act in duality:

* transfer:       (L f)(x)  = sum_i p_i f(phi_i(x))
* dual transfer:  (L* mu)   = sum_i p_i (phi_i)_* mu

A contraction certificate at exponent q records rho and A with

    sum_i p_i |phi_i(x) - phi_i(y)|^q <= rho |x - y|^q
    sum_i p_i |phi_i(x0) - x0|^q      <= A

which makes L* a contraction of ratio rho_bar = rho^min(1, 1/q) in W_q and
bounds the stationary q-th moment about x0.  For affine maps both constants
are computed exactly; for tagged user maps they come from the declared
bounds and the certificate says so.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import measures
from .errors import (
    InvalidExponent,
    InvalidModel,
    InvalidParameter,
    NotContractingAtThisExponent,
)


@dataclass(frozen=True)
class Map1D:
    """An affine map x -> a x + b, or a tagged user callable.

    User maps must declare a Lipschitz bound and a displacement bound
    |phi(x0) - x0| valid at the base point of the model they join;
    certificates built from them are marked inexact.
    """

    kind: str
    a: float = 0.0
    b: float = 0.0
    fn: object = None
    lip: float = None
    disp: float = None

    @staticmethod
    def affine(a, b):
        a = float(a)
        b = float(b)
        if not (np.isfinite(a) and np.isfinite(b)):
            raise InvalidModel("affine coefficients must be finite")
        return Map1D("affine", a=a, b=b)

    @staticmethod
    def user(fn, lip_bound, displacement_bound):
        if not callable(fn):
            raise InvalidModel("user map needs a callable")
        lip = float(lip_bound)
        disp = float(displacement_bound)
        if not (np.isfinite(lip) and lip >= 0 and np.isfinite(disp) and disp >= 0):
            raise InvalidModel("user map bounds must be finite and nonnegative")
        return Map1D("user", fn=fn, lip=lip, disp=disp)

    def __call__(self, x):
        if self.kind == "affine":
            return self.a * x + self.b
        return self.fn(x)

    def as_callable(self):
        if self.kind == "affine":
            a, b = self.a, self.b
            return lambda x: a * x + b
        return self.fn

    def lip_bound(self):
        return abs(self.a) if self.kind == "affine" else self.lip

    def displacement_bound(self, x0):
        if self.kind == "affine":
            return abs(self.a * x0 + self.b - x0)
        return self.disp


@dataclass(frozen=True)
class IfsModel:
    """Maps plus a probability vector; ``x0`` is the model's base point."""

    maps: tuple
    probs: np.ndarray
    label: str = ""
    x0: float = 0.0

    def __post_init__(self):
        maps = tuple(self.maps)
        probs = np.ascontiguousarray(self.probs, dtype=np.float64)
        if len(maps) == 0:
            raise InvalidModel("model needs at least one map")
        if probs.ndim != 1 or probs.size != len(maps):
            raise InvalidModel("probability vector must match the map list")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise InvalidModel("probabilities must be finite and nonnegative")
        if abs(float(probs.sum()) - 1.0) > 1e-12:
            raise InvalidModel(
                "probabilities sum to %r; must be 1 within 1e-12" % float(probs.sum())
            )
        if not np.isfinite(self.x0):
            raise InvalidModel("x0 must be finite")
        for mp in maps:
            if mp.kind not in ("affine", "user"):
                raise InvalidModel("unknown map kind %r" % (mp.kind,))
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "probs", probs)

    @property
    def n_maps(self):
        return len(self.maps)

    def is_affine(self):
        return all(mp.kind == "affine" for mp in self.maps)

    def affine_arrays(self):
        if not self.is_affine():
            raise InvalidModel("model has non-affine maps")
        a = np.array([mp.a for mp in self.maps])
        b = np.array([mp.b for mp in self.maps])
        return a, b

    def cumprob(self):
        cp = np.cumsum(self.probs)
        cp[-1] = 1.0  # guard searchsorted against 1-ulp shortfall
        return cp


def two_map_ifs(a, b, label=None):
    """phi_0 = a x, phi_1 = b x + 1, equal weights."""
    if label is None:
        label = "two-map(a=%g,b=%g)" % (a, b)
    return IfsModel(
        (Map1D.affine(a, 0.0), Map1D.affine(b, 1.0)),
        np.array([0.5, 0.5]),
        label=label,
        x0=0.0,
    )


def reset_ifs(a, p, label=None):
    """phi_0 = a x with probability p, phi_1 = x + 1 with probability 1 - p.

    The heavy-tailed reset family: a = 0 collapses the reset to the origin
    and the stationary law is exactly geometric(p) on the integers.
    """
    a = float(a)
    p = float(p)
    if not (0.0 <= a < 1.0):
        raise InvalidParameter("need 0 <= a < 1")
    if not (0.0 < p < 1.0):
        raise InvalidParameter("need 0 < p < 1")
    if label is None:
        label = "reset(a=%g,p=%g)" % (a, p)
    return IfsModel(
        (Map1D.affine(a, 0.0), Map1D.affine(1.0, 1.0)),
        np.array([p, 1.0 - p]),
        label=label,
        x0=0.0,
    )


def heavy_tail_ifs(a, tail_weights, truncation):
    """Contraction phi_0 = a x plus translations phi_n = x + n, n = 1..N.

    ``tail_weights[0]`` weighs the contraction, ``tail_weights[n]`` the
    translation by n; the list may extend beyond ``truncation``, in which
    case the excess mass is lumped onto the last translation.  Returns
    (model, lumped_mass) with weights normalized; the lumped mass is the
    model's deviation from the intended infinite family.
    """
    a = float(a)
    N = int(truncation)
    w = np.ascontiguousarray(tail_weights, dtype=np.float64)
    if not (0.0 < a < 1.0):
        raise InvalidParameter("need 0 < a < 1")
    if N < 1:
        raise InvalidParameter("truncation must be at least 1")
    if w.ndim != 1 or w.size < 2:
        raise InvalidModel("tail_weights needs the reset weight plus at least one translation")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidModel("tail weights must be finite and nonnegative")
    if w[0] <= 0:
        raise InvalidModel("reset weight p0 must be positive")
    total = float(w.sum())
    if total <= 0:
        raise InvalidModel("tail weights must carry positive mass")
    w = w / total
    keep = min(N, w.size - 1)
    probs = np.empty(keep + 1)
    probs[0] = w[0]
    probs[1 : keep + 1] = w[1 : keep + 1]
    lumped = float(w[keep + 1 :].sum())
    probs[keep] += lumped
    maps = [Map1D.affine(a, 0.0)]
    for n in range(1, keep + 1):
        maps.append(Map1D.affine(1.0, float(n)))
    model = IfsModel(
        tuple(maps),
        probs,
        label="heavy-tail(a=%g,N=%d)" % (a, keep),
        x0=0.0,
    )
    return model, lumped


def apply_dual_transfer(ifs, m):
    """L* m: push each atom through each map, weight by p_i, canonicalize."""
    measures.require_canonical(m, "apply_dual_transfer")
    xs_parts = []
    ws_parts = []
    for p, mp in zip(ifs.probs, ifs.maps):
        if p == 0.0:
            continue
        if mp.kind == "affine":
            ys = mp.a * m.xs + mp.b
        else:
            ys = np.asarray(mp.fn(m.xs), dtype=np.float64)
            if ys.shape != m.xs.shape:
                ys = np.array([float(mp.fn(x)) for x in m.xs])
        xs_parts.append(ys)
        ws_parts.append(p * m.ws)
    return measures.canonicalize(
        measures.DiscreteMeasure(np.concatenate(xs_parts), np.concatenate(ws_parts))
    )


def apply_transfer(ifs, f, x):
    """(L f)(x) = sum_i p_i f(phi_i(x)); ``x`` may be scalar or array."""
    x = np.asarray(x, dtype=np.float64)
    acc = np.zeros_like(x)
    for p, mp in zip(ifs.probs, ifs.maps):
        if p == 0.0:
            continue
        ys = mp(x) if mp.kind == "affine" else np.asarray(mp.fn(x), dtype=np.float64)
        acc = acc + p * np.asarray(f(ys), dtype=np.float64)
    if acc.ndim == 0:
        return float(acc)
    return acc


@dataclass(frozen=True)
class ContractionCertificate:
    """(q, rho, A) at base point x0; ``exact`` means equalities, not bounds."""

    q: float
    rho: float
    A: float
    x0: float
    exact: bool = False

    def __post_init__(self):
        if not (self.q > 0 and np.isfinite(self.q)):
            raise InvalidParameter("certificate exponent must be positive")
        if not (0.0 <= self.rho < 1.0):
            raise InvalidParameter("certificate rho must lie in [0, 1)")
        if not (self.A >= 0 and np.isfinite(self.A)):
            raise InvalidParameter("certificate A must be finite and nonnegative")

    @property
    def rho_bar(self):
        """Contraction ratio of L* in W_q: rho^min(1, 1/q)."""
        return self.rho ** min(1.0, 1.0 / self.q)

    @property
    def A_bar(self):
        return self.A ** min(1.0, 1.0 / self.q)

    def start_distance_bound(self):
        """Upper bound on W_q(delta_x0, mu): A_bar / (1 - rho_bar)."""
        return self.A_bar / (1.0 - self.rho_bar)


def certify_contraction(ifs, q, x0=None):
    """Certificate at exponent q, exact for affine models.

    rho = sum p_i Lip(phi_i)^q and A = sum p_i |phi_i(x0) - x0|^q; for
    affine maps the Lipschitz data is exact so the certificate is too.
    Raises NotContractingAtThisExponent (carrying rho) when rho >= 1.
    """
    q = float(q)
    if not (q > 0 and np.isfinite(q)):
        raise InvalidParameter("exponent q must be positive and finite")
    if x0 is None:
        x0 = ifs.x0
    x0 = float(x0)
    lips = np.array([mp.lip_bound() for mp in ifs.maps])
    disps = np.array([mp.displacement_bound(x0) for mp in ifs.maps])
    rho = float(np.sum(ifs.probs * lips**q))
    A = float(np.sum(ifs.probs * disps**q))
    if rho >= 1.0:
        raise NotContractingAtThisExponent(
            "rho = %g >= 1 at exponent q = %g for model %r" % (rho, q, ifs.label),
            rho,
        )
    return ContractionCertificate(q, rho, A, x0, exact=ifs.is_affine())


def reduce_exponent(cert, q_new):
    """Transport a certificate down to a smaller exponent.

    By Jensen, (q', rho^{q'/q}, A^{q'/q}) certifies exponent q' < q.  The
    result is a bound even if the input was exact.
    """
    q_new = float(q_new)
    if not (0.0 < q_new < cert.q):
        raise InvalidExponent(
            "target exponent %g must lie strictly inside (0, %g)" % (q_new, cert.q)
        )
    r = q_new / cert.q
    return ContractionCertificate(
        q_new, cert.rho**r, cert.A**r, cert.x0, exact=False
    )


# Lipschitz constants at or below this are treated as this in logs.
_LIP_FLOOR = 1e-300


def find_exponent(ifs, q_max=1.0):
    """Search for an exponent with certified contraction.

    If the log-average sum p_i log Lip(phi_i) is negative, F(q) =
    sum p_i Lip^q dips below 1 for small q (F(0) = 1, F'(0) < 0, F convex).
    Returns (q, F(q)) with the largest q in (0, q_max] satisfying
    F(q) <= 1 - 1e-6, or None when the log-average criterion fails.
    """
    lips = np.maximum(
        np.array([mp.lip_bound() for mp in ifs.maps]), _LIP_FLOOR
    )
    probs = ifs.probs
    log_avg = float(np.sum(probs * np.log(lips)))
    if log_avg >= 0.0:
        return None

    def F(q):
        return float(np.sum(probs * lips**q))

    margin = 1.0 - 1e-6
    if F(q_max) <= margin:
        return q_max, F(q_max)
    # Golden-section minimum of the convex F on (0, q_max].
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = 1e-8, float(q_max)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = F(c), F(d)
    for _ in range(200):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = F(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = F(d)
    q_star = 0.5 * (a + b)
    f_star = F(q_star)
    if f_star > margin:
        return (q_star, f_star) if f_star < 1.0 else None
    # Largest admissible q sits right of the minimum; bisect the crossing.
    lo, hi = q_star, float(q_max)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if F(mid) <= margin:
            lo = mid
        else:
            hi = mid
    return lo, F(lo)


def moment_bound(cert):
    """Bound on the stationary moment integral |x - x0|^q dmu.

    A/(1 - rho) for q <= 1 and A/(1 - rho^{1/q})^q for q >= 1; both equal
    (A_bar / (1 - rho_bar))^max(1, q).
    """
    return cert.start_distance_bound() ** max(1.0, cert.q)


# -- model (de)serialization -------------------------------------------------


def to_config(ifs):
    """JSON-able dict for an affine model; user maps have no config form."""
    if not ifs.is_affine():
        raise InvalidModel("only affine models serialize to config")
    return {
        "label": ifs.label,
        "x0": float(ifs.x0),
        "maps": [
            {"kind": "affine", "a": float(mp.a), "b": float(mp.b), "p": float(p)}
            for mp, p in zip(ifs.maps, ifs.probs)
        ],
    }


def from_config(cfg):
    """Build an IfsModel from a config dict (see ``to_config``)."""
    if isinstance(cfg, str):
        cfg = json.loads(cfg)
    if not isinstance(cfg, dict) or "maps" not in cfg:
        raise InvalidModel("model config must be a dict with a 'maps' list")
    entries = cfg["maps"]
    if not isinstance(entries, list) or not entries:
        raise InvalidModel("model config needs a nonempty 'maps' list")
    maps = []
    probs = []
    for k, e in enumerate(entries):
        if not isinstance(e, dict) or e.get("kind") != "affine":
            raise InvalidModel("maps[%d]: only kind 'affine' is configurable" % k)
        try:
            maps.append(Map1D.affine(e["a"], e["b"]))
            probs.append(float(e["p"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidModel("maps[%d]: %s" % (k, exc)) from exc
    return IfsModel(
        tuple(maps),
        np.array(probs),
        label=str(cfg.get("label", "")),
        x0=float(cfg.get("x0", 0.0)),
    )
