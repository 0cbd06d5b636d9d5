#!/usr/bin/env python3
"""
Bellman Hamiltonians for a two-sided 1-D junction.

A side Hamiltonian is either a finite family of control facets (b, c, l),
evaluated as max(-b*p + c*r - l), or an analytic quasiconvex profile in the
normal gradient slot. On top of that representation this module computes the
monotone splits, the tangential Hamiltonians H_T and H_T^reg, the threshold
interval of the regular split, and the reduction of a general junction
condition to a flux limiter.

Sign conventions: the state moves with velocity b, b > 0 points into the
right side {x > 0}. On each side the part built from velocities pointing left
is nondecreasing in the normal slot s and the part built from velocities
pointing right is nonincreasing. Zero velocities belong to both parts.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from solver_errors import (ClassificationError, CoercivityError, DomainError,
                           NoSolutionError)

logger = logging.getLogger(__name__)

TOL_S = 1e-9
TOL_LEVEL = 1e-9
ZERO_VELOCITY = 1e-14
SCAN_POINTS = 401
MAX_EXPANSIONS = 64


class Side(Enum):
    RIGHT = 'right'
    LEFT = 'left'
    JUNCTION = 'junction'


_SIDE_CODES = {Side.RIGHT: 0, Side.LEFT: 1, Side.JUNCTION: 2}
SIDE_FROM_CODE = {code: side for side, code in _SIDE_CODES.items()}


class RestrictMode(Enum):
    RIGHT_INCOMING = 'right_incoming'
    RIGHT_OUTGOING = 'right_outgoing'
    LEFT_INCOMING = 'left_incoming'
    LEFT_OUTGOING = 'left_outgoing'
    TANGENTIAL_ALL = 'tangential_all'
    TANGENTIAL_REGULAR = 'tangential_regular'


@dataclass(frozen=True)
class ControlFacet:
    """One control triple; b_tan is the tangential velocity of the cell problem"""
    b: float
    c: float
    l: float
    b_tan: float = 0.0


class FacetFamily:
    """
    Finite family of control facets stored as parallel arrays.

    Costs may depend on position and time, either through a tabulation over
    ``x_samples`` (linear interpolation, constant extension) or through an
    additive ``cost_shift(x, t)``. ``origin`` records, for families produced
    by restrict_facets, which side facets were mixed: one row
    (side_a, k_a, side_b, k_b) per facet with k_b = -1 for unmixed facets,
    and ``mu`` holds the weight of the first member.
    """

    def __init__(self, b, c, l, b_tan=None,
                 cost_shift: Optional[Callable[[np.ndarray, float], np.ndarray]] = None,
                 x_samples: Optional[np.ndarray] = None,
                 table: Optional[np.ndarray] = None,
                 origin: Optional[np.ndarray] = None,
                 mu: Optional[np.ndarray] = None):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.l = np.atleast_1d(np.asarray(l, dtype=float))
        if b_tan is None:
            b_tan = np.zeros_like(self.b)
        self.b_tan = np.atleast_1d(np.asarray(b_tan, dtype=float))
        if not (self.b.shape == self.c.shape == self.l.shape == self.b_tan.shape):
            raise DomainError("facet arrays must share one length")
        self.cost_shift = cost_shift
        self.x_samples = None if x_samples is None else np.asarray(x_samples, dtype=float)
        self.table = None if table is None else np.asarray(table, dtype=float)
        if self.table is not None:
            if self.x_samples is None or self.table.shape != (len(self.x_samples), self.size, 3):
                raise DomainError("facet table must have shape (samples, facets, 3)")
            if np.any(np.diff(self.x_samples) <= 0):
                raise DomainError("x_samples must be strictly increasing")
        self.origin = None if origin is None else np.asarray(origin, dtype=int)
        self.mu = None if mu is None else np.asarray(mu, dtype=float)

    @classmethod
    def from_facets(cls, facets: Sequence[Union[ControlFacet, Sequence[float]]],
                    cost_shift=None) -> 'FacetFamily':
        rows = []
        for f in facets:
            if isinstance(f, ControlFacet):
                rows.append((f.b, f.c, f.l, f.b_tan))
            else:
                values = tuple(float(v) for v in f)
                rows.append(values + (0.0,) * (4 - len(values)))
        if not rows:
            return cls.empty()
        data = np.asarray(rows, dtype=float)
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], cost_shift=cost_shift)

    @classmethod
    def from_table(cls, x_samples: Sequence[float],
                   facet_lists: Sequence[Sequence[Sequence[float]]]) -> 'FacetFamily':
        """Build an x-dependent family; every sample must list the same number of facets"""
        table = np.asarray(facet_lists, dtype=float)
        if table.ndim != 3 or table.shape[2] != 3:
            raise DomainError("facet_lists must be a list of [b, c, l] lists")
        first = table[0]
        return cls(first[:, 0], first[:, 1], first[:, 2], x_samples=x_samples, table=table)

    @classmethod
    def empty(cls) -> 'FacetFamily':
        return cls(np.zeros(0), np.zeros(0), np.zeros(0))

    @property
    def size(self) -> int:
        return int(self.b.shape[0])

    def __len__(self) -> int:
        return self.size

    @property
    def is_empty(self) -> bool:
        return self.size == 0

    @property
    def is_constant(self) -> bool:
        return self.table is None and self.cost_shift is None

    @property
    def speed(self) -> float:
        if self.table is not None:
            return float(np.abs(self.table[:, :, 0]).max(initial=0.0))
        return float(np.abs(self.b).max(initial=0.0))

    @property
    def max_discount(self) -> float:
        if self.table is not None:
            return float(self.table[:, :, 1].max(initial=0.0))
        return float(self.c.max(initial=0.0))

    @property
    def bound(self) -> float:
        """Bound on |b|, |c|, |l| over the tabulated data (cost shifts excluded)"""
        if self.table is not None:
            return float(np.abs(self.table).max(initial=0.0))
        return float(max(np.abs(self.b).max(initial=0.0), np.abs(self.c).max(initial=0.0),
                         np.abs(self.l).max(initial=0.0), np.abs(self.b_tan).max(initial=0.0)))

    def arrays_at(self, x, t: float = 0.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Evaluate (b, c, l) at the positions ``x``.

        Returns:
            Three arrays of shape (facets, len(x))
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n = x.shape[0]
        if self.table is None:
            b = np.broadcast_to(self.b[:, None], (self.size, n))
            c = np.broadcast_to(self.c[:, None], (self.size, n))
            l = np.broadcast_to(self.l[:, None], (self.size, n)).copy()
        else:
            b = np.empty((self.size, n))
            c = np.empty((self.size, n))
            l = np.empty((self.size, n))
            for k in range(self.size):
                b[k] = np.interp(x, self.x_samples, self.table[:, k, 0])
                c[k] = np.interp(x, self.x_samples, self.table[:, k, 1])
                l[k] = np.interp(x, self.x_samples, self.table[:, k, 2])
        if self.cost_shift is not None:
            shift = np.asarray(self.cost_shift(x, t), dtype=float)
            l = l + np.broadcast_to(shift, x.shape)[None, :]
        return b, c, l

    def at(self, x: float, t: float = 0.0) -> 'FacetFamily':
        """Freeze the family at one position and time"""
        if self.is_constant:
            return self
        b, c, l = self.arrays_at(np.array([x]), t)
        return FacetFamily(b[:, 0], c[:, 0], l[:, 0], self.b_tan.copy(),
                           origin=self.origin, mu=self.mu)

    def subset(self, mask: np.ndarray) -> 'FacetFamily':
        mask = np.asarray(mask)
        table = None if self.table is None else self.table[:, mask, :]
        return FacetFamily(self.b[mask], self.c[mask], self.l[mask], self.b_tan[mask],
                           cost_shift=self.cost_shift, x_samples=self.x_samples, table=table,
                           origin=None if self.origin is None else self.origin[mask],
                           mu=None if self.mu is None else self.mu[mask])

    def concat(self, other: 'FacetFamily') -> 'FacetFamily':
        if not (self.is_constant and other.is_constant):
            raise DomainError("only frozen families can be concatenated")
        origin = mu = None
        if self.origin is not None and other.origin is not None:
            origin = np.vstack([self.origin, other.origin])
            mu = np.concatenate([self.mu, other.mu])
        return FacetFamily(np.concatenate([self.b, other.b]), np.concatenate([self.c, other.c]),
                           np.concatenate([self.l, other.l]),
                           np.concatenate([self.b_tan, other.b_tan]), origin=origin, mu=mu)

    def tagged(self, side: Side) -> 'FacetFamily':
        """Frozen copy whose origin rows point at this family's own indices"""
        origin = np.zeros((self.size, 4), dtype=int)
        origin[:, 0] = _SIDE_CODES[side]
        origin[:, 1] = np.arange(self.size)
        origin[:, 2] = _SIDE_CODES[side]
        origin[:, 3] = -1
        return FacetFamily(self.b, self.c, self.l, self.b_tan, origin=origin,
                           mu=np.ones(self.size))

    def facets(self) -> List[ControlFacet]:
        return [ControlFacet(float(b), float(c), float(l), float(bt))
                for b, c, l, bt in zip(self.b, self.c, self.l, self.b_tan)]

    def lines(self, r: float, p_tan: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """Slopes and intercepts of the affine maps s -> -b*s - b_tan*p_tan + c*r - l"""
        return -self.b, -self.b_tan * p_tan + self.c * r - self.l

    def hamiltonian(self, r: float, s, p_tan: float = 0.0) -> np.ndarray:
        """Vectorized sup over the family; -inf when the family is empty"""
        s = np.asarray(s, dtype=float)
        if self.is_empty:
            return np.full(s.shape, -np.inf)
        slopes, intercepts = self.lines(r, p_tan)
        return (np.multiply.outer(s, slopes) + intercepts).max(axis=-1)

    def __repr__(self) -> str:
        return f"FacetFamily(size={self.size}, constant={self.is_constant})"


@dataclass(frozen=True, eq=False)
class AnalyticProfile:
    """
    Quasiconvex profile s -> H(r, p_tan + s e_N).

    ``fn(s, r, p_tan)`` must accept numpy arrays in s. ``minimizers`` may be
    declared; otherwise they are located numerically. ``slope`` is the
    coercivity slope used for bracketing, ``bound`` the Lipschitz bound.
    ``params`` keeps the preset parameters so the profile can be turned into
    facets.
    """
    name: str
    fn: Callable[[np.ndarray, float, float], np.ndarray]
    minimizers: Optional[Tuple[float, float]] = None
    slope: float = 1.0
    bound: float = 1.0
    params: Dict[str, float] = field(default_factory=dict)

    def __call__(self, s, r: float = 0.0, p_tan: float = 0.0) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(s, dtype=float), r, p_tan), dtype=float)


def eikonal_profile(discount: float = 0.0) -> AnalyticProfile:
    return AnalyticProfile('eikonal', lambda s, r, q: np.abs(s) + discount * r,
                           minimizers=(0.0, 0.0), slope=1.0, bound=max(1.0, discount),
                           params={'discount': discount})


def shifted_eikonal_profile(shift: float, offset: float = 0.0,
                            discount: float = 0.0) -> AnalyticProfile:
    """|s - shift| + offset + discount*r"""
    return AnalyticProfile('shifted_eikonal',
                           lambda s, r, q: np.abs(s - shift) + offset + discount * r,
                           minimizers=(shift, shift), slope=1.0,
                           bound=max(1.0, abs(shift) + abs(offset), discount),
                           params={'shift': shift, 'offset': offset, 'discount': discount})


def quadratic_profile(level: float = 0.0, discount: float = 0.0,
                      max_speed: float = 4.0) -> AnalyticProfile:
    """s^2/2 - level + discount*r, the KPP side Hamiltonian"""
    return AnalyticProfile('quadratic', lambda s, r, q: 0.5 * s ** 2 - level + discount * r,
                           minimizers=(0.0, 0.0), slope=1.0,
                           bound=max(max_speed ** 2 / 2 + abs(level), discount),
                           params={'level': level, 'discount': discount, 'max_speed': max_speed})


PROFILE_PRESETS = {
    'eikonal': eikonal_profile,
    'shifted_eikonal': shifted_eikonal_profile,
    'quadratic': quadratic_profile,
}


def profile_to_facets(profile: AnalyticProfile, n_controls: int = 41) -> FacetFamily:
    """Facet family whose sup reproduces a named profile (exactly, or on |s| <= max_speed)"""
    p = profile.params
    disc = p.get('discount', 0.0)
    if profile.name == 'eikonal':
        return FacetFamily([-1.0, 0.0, 1.0], [disc] * 3, [0.0, 0.0, 0.0])
    if profile.name == 'shifted_eikonal':
        a, o = p['shift'], p['offset']
        return FacetFamily([-1.0, 1.0], [disc, disc], [a - o, -a - o])
    if profile.name == 'quadratic':
        v = np.linspace(-p['max_speed'], p['max_speed'], n_controls)
        return FacetFamily(v, np.full_like(v, disc), 0.5 * v ** 2 + p['level'])
    raise DomainError(f"profile '{profile.name}' has no facet form")


@dataclass(frozen=True, eq=False)
class SideHamiltonian:
    """One side of the junction: exactly one of ``facets`` / ``profile`` is set"""
    side: Side
    facets: Optional[FacetFamily] = None
    profile: Optional[AnalyticProfile] = None

    def __post_init__(self):
        if (self.facets is None) == (self.profile is None):
            raise DomainError("a side Hamiltonian needs exactly one representation")
        if self.side is Side.JUNCTION:
            raise DomainError("side must be left or right")
        if self.facets is not None and self.facets.is_empty:
            raise DomainError(f"{self.side.value} facet family is empty")

    @property
    def is_facets(self) -> bool:
        return self.facets is not None

    @property
    def bound(self) -> float:
        return self.facets.bound if self.is_facets else self.profile.bound

    def frozen(self, x: float = 0.0, t: float = 0.0) -> Optional[FacetFamily]:
        return self.facets.at(x, t) if self.is_facets else None

    def normal_profile(self, x: float, t: float, r: float,
                       p_tan: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
        if self.is_facets:
            fam = self.facets.at(x, t)
            return lambda s: fam.hamiltonian(r, s, p_tan)
        return lambda s: self.profile(s, r, p_tan)


@dataclass(frozen=True, eq=False)
class MonotoneSplit:
    """
    H = max(increasing, decreasing) in the normal slot.

    For facet sides the parts are backed by ``increasing_family`` and
    ``decreasing_family`` (H^- and H^+ respectively on both sides).
    """
    increasing: Callable[[np.ndarray], np.ndarray]
    decreasing: Callable[[np.ndarray], np.ndarray]
    minimizer_interval: Tuple[float, float]
    increasing_family: Optional[FacetFamily] = None
    decreasing_family: Optional[FacetFamily] = None


@dataclass(frozen=True)
class NoCrossing:
    """phi = H1^- - H2^+ does not change sign from negative to positive"""
    reason: str


class LimiterKind(Enum):
    CONSTANT = 'constant'
    HT = 'HT'
    HTREG = 'HTreg'
    FACETS = 'facets'
    GENERAL = 'general'


GeneralG = Callable[[float, float, float, float], float]


def kirchhoff_G(a: float, p_tan: float, b: float, c: float) -> float:
    """Kirchhoff junction function: sum of the two outward normal derivatives"""
    return b + c


@dataclass(frozen=True, eq=False)
class FluxLimiter:
    """
    Junction condition of a flux-limited problem.

    ``facets`` are junction-only controls (velocity 0). They are the limiter
    itself for kind FACETS and an extra H_0 term, combined by max, for the
    other kinds. ``general`` is G(a, p_tan, b, c) for kind GENERAL, with
    monotonicity constants ``alpha`` (in a) and ``beta`` (in b and c).
    """
    kind: LimiterKind
    value: float = 0.0
    facets: Optional[FacetFamily] = None
    general: Optional[GeneralG] = None
    alpha: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.kind is LimiterKind.FACETS and (self.facets is None or self.facets.is_empty):
            raise DomainError("facet limiter needs a nonempty junction family")
        if self.facets is not None and np.any(np.abs(self.facets.b) > ZERO_VELOCITY):
            raise DomainError("junction facets must have zero normal velocity")
        if self.kind is LimiterKind.GENERAL:
            if self.general is None:
                raise DomainError("general limiter needs a callable G")
            if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
                raise DomainError("monotonicity constants need alpha, beta >= 0 and alpha + beta > 0")
            check_general_monotonicity(self.general, self.alpha, self.beta)

    @classmethod
    def constant(cls, value: float) -> 'FluxLimiter':
        return cls(LimiterKind.CONSTANT, value=float(value))

    @classmethod
    def kirchhoff(cls) -> 'FluxLimiter':
        return cls(LimiterKind.GENERAL, general=kirchhoff_G, alpha=0.0, beta=1.0)

    def junction_facets(self) -> FacetFamily:
        """Junction controls seen by dynamic programming"""
        fam = self.facets if self.facets is not None else FacetFamily.empty()
        if self.kind is LimiterKind.CONSTANT:
            fam = fam.concat(FacetFamily([0.0], [0.0], [-self.value]))
        return fam


def check_general_monotonicity(G: GeneralG, alpha: float, beta: float,
                               samples: int = 64, seed: int = 7) -> None:
    """Sample quadruples and check G(a', p, b', c') - G(a, p, b, c) >= alpha da + beta (db + dc)"""
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        a, p, b, c = rng.uniform(-3, 3, size=4)
        da, db, dc = rng.uniform(0, 1, size=3)
        gain = G(a + da, p, b + db, c + dc) - G(a, p, b, c)
        if gain < alpha * da + beta * (db + dc) - 1e-10:
            raise DomainError(f"G violates the monotonicity inequality at {(a, p, b, c)}")


def balance_weights(b1, b2) -> Tuple[np.ndarray, np.ndarray]:
    """Weights with mu1*b1 + mu2*b2 = 0, vectorized; callers ensure b1 != b2"""
    b1 = np.asarray(b1, dtype=float)
    b2 = np.asarray(b2, dtype=float)
    mu1 = b2 / (b2 - b1)
    return mu1, 1.0 - mu1


def eval_facets(facets: FacetFamily, r: float, p: float, p_tan: float = 0.0) -> float:
    """
    Bellman Hamiltonian of a frozen facet family.

    Args:
        facets: Nonempty family
        r: Value slot
        p: Normal gradient
        p_tan: Tangential gradient (cell problem only)

    Returns:
        max over facets of (-b*p - b_tan*p_tan + c*r - l)
    """
    if facets.is_empty:
        raise DomainError("cannot evaluate an empty facet family")
    return float(facets.hamiltonian(r, p, p_tan))


def _zero_mask(b: np.ndarray) -> np.ndarray:
    return np.abs(b) <= ZERO_VELOCITY


def _empty_tagged() -> FacetFamily:
    return FacetFamily(np.zeros(0), np.zeros(0), np.zeros(0),
                       origin=np.zeros((0, 4), dtype=int), mu=np.zeros(0))


def _balanced_pairs(neg: FacetFamily, pos: FacetFamily) -> FacetFamily:
    """All zero-velocity mixtures of a b<0 facet with a b>0 facet"""
    if neg.is_empty or pos.is_empty:
        return _empty_tagged()
    bn = neg.b[:, None]
    bp = pos.b[None, :]
    mu, _ = balance_weights(bn, bp)

    def mix(u, v):
        return (mu * u[:, None] + (1.0 - mu) * v[None, :]).ravel()

    origin = np.empty((neg.size * pos.size, 4), dtype=int)
    origin[:, 0:2] = np.repeat(neg.origin[:, 0:2], pos.size, axis=0)
    origin[:, 2:4] = np.tile(pos.origin[:, 0:2], (neg.size, 1))
    return FacetFamily(np.zeros(neg.size * pos.size), mix(neg.c, pos.c), mix(neg.l, pos.l),
                       mix(neg.b_tan, pos.b_tan), origin=origin, mu=mu.ravel())


def _side_mixtures(fam: FacetFamily) -> FacetFamily:
    return _balanced_pairs(fam.subset(fam.b < -ZERO_VELOCITY), fam.subset(fam.b > ZERO_VELOCITY))


def restrict_facets(facets_left: FacetFamily, facets_right: FacetFamily,
                    mode: Union[RestrictMode, str]) -> FacetFamily:
    """
    Restrict two frozen side families to a sub-family.

    Incoming modes keep the velocities pointing at the junction together with
    the zero-velocity mixtures of the side, outgoing modes keep the strictly
    leaving velocities. Tangential modes return every zero-velocity convex
    combination (all pairs, or push-push pairs only for the regular mode).
    Pairs of two zero velocities are represented by their endpoints. An
    empty result is a valid answer; its Hamiltonian is -inf.
    """
    mode = RestrictMode(mode)
    if not (facets_left.is_constant and facets_right.is_constant):
        raise DomainError("freeze x-dependent families with .at(x) before restricting")
    left = facets_left.tagged(Side.LEFT)
    right = facets_right.tagged(Side.RIGHT)

    if mode is RestrictMode.RIGHT_INCOMING:
        return right.subset(right.b <= ZERO_VELOCITY).concat(_side_mixtures(right))
    if mode is RestrictMode.RIGHT_OUTGOING:
        return right.subset(right.b > ZERO_VELOCITY)
    if mode is RestrictMode.LEFT_INCOMING:
        return left.subset(left.b >= -ZERO_VELOCITY).concat(_side_mixtures(left))
    if mode is RestrictMode.LEFT_OUTGOING:
        return left.subset(left.b < -ZERO_VELOCITY)

    if mode is RestrictMode.TANGENTIAL_ALL:
        union = right.concat(left)
        zeros = union.subset(_zero_mask(union.b))
        return zeros.concat(_balanced_pairs(union.subset(union.b < -ZERO_VELOCITY),
                                            union.subset(union.b > ZERO_VELOCITY)))

    incoming_right = restrict_facets(facets_left, facets_right, RestrictMode.RIGHT_INCOMING)
    incoming_left = restrict_facets(facets_left, facets_right, RestrictMode.LEFT_INCOMING)
    zeros = incoming_right.subset(_zero_mask(incoming_right.b)).concat(
        incoming_left.subset(_zero_mask(incoming_left.b)))
    cross = _balanced_pairs(right.subset(right.b < -ZERO_VELOCITY),
                            left.subset(left.b > ZERO_VELOCITY))
    return zeros.concat(cross)


def _split_families(H: SideHamiltonian, x: float, t: float) -> Tuple[FacetFamily, FacetFamily]:
    fam = H.facets.at(x, t)
    if H.side is Side.RIGHT:
        incoming = restrict_facets(FacetFamily.empty(), fam, RestrictMode.RIGHT_INCOMING)
        outgoing = restrict_facets(FacetFamily.empty(), fam, RestrictMode.RIGHT_OUTGOING)
        return incoming, outgoing.concat(incoming.subset(_zero_mask(incoming.b)))
    incoming = restrict_facets(fam, FacetFamily.empty(), RestrictMode.LEFT_INCOMING)
    outgoing = restrict_facets(fam, FacetFamily.empty(), RestrictMode.LEFT_OUTGOING)
    return outgoing.concat(incoming.subset(_zero_mask(incoming.b))), incoming


def _check_quasiconvex(f: Callable[[np.ndarray], np.ndarray], span: float, name: str) -> None:
    s = np.linspace(-span, span, 2001)
    slope = np.sign(np.round(np.diff(f(s)), 12))
    slope = slope[slope != 0]
    if np.any(np.diff(slope) < 0):
        raise ClassificationError(f"profile '{name}' is not quasiconvex in the normal slot")


def _polish_affine_min(slopes: np.ndarray, intercepts: np.ndarray,
                       s_hat: float) -> Tuple[float, float]:
    """Exact minimum of a max of lines near an approximate minimizer"""
    def phi(s):
        return float((slopes * s + intercepts).max())

    best_s, best = s_hat, phi(s_hat)
    vals = slopes * s_hat + intercepts
    near = vals >= best - 1e-6 * (1.0 + abs(best))
    a, beta = slopes[near], intercepts[near]
    up, down = a > 0, a < 0
    if up.any() and down.any():
        a_up, b_up = a[up][:, None], beta[up][:, None]
        a_dn, b_dn = a[down][None, :], beta[down][None, :]
        for s in ((b_dn - b_up) / (a_up - a_dn)).ravel():
            v = phi(s)
            if v < best:
                best_s, best = float(s), v
    return best_s, best


def _minimize_coercive(f: Callable[[np.ndarray], np.ndarray], span: float,
                       lines: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[float, float]:
    """
    Minimize a coercive quasiconvex profile on [-span, span].

    A coarse scan picks the basin, bounded Brent refines it to TOL_S and, for
    piecewise affine profiles, the active lines give the exact minimum.
    """
    grid = np.linspace(-span, span, SCAN_POINTS)
    values = f(grid)
    if not np.all(np.isfinite(values)):
        raise CoercivityError("profile is not finite on the bracket")
    i = int(np.argmin(values))
    if i == 0 or i == SCAN_POINTS - 1:
        raise CoercivityError(f"no interior minimum within |s| <= {span:.6g}")
    res = minimize_scalar(lambda s: float(f(np.array(s))), bounds=(grid[i - 1], grid[i + 1]),
                          method='bounded', options={'xatol': TOL_S * 1e-3})
    s_star, value = float(res.x), float(res.fun)
    if values[i] < value:
        s_star, value = float(grid[i]), float(values[i])
    if lines is not None:
        s_star, value = _polish_affine_min(lines[0], lines[1], s_star)
    return s_star, value


def _bracket_span(bound: float, slope: float, r: float, p_tan: float, level: float) -> float:
    if slope <= 0:
        raise CoercivityError("profile has no coercivity slope in the normal slot")
    return (bound * (1.0 + abs(r) + abs(p_tan)) + abs(level)) / slope + 1.0


def _family_slope(increasing: FacetFamily, decreasing: FacetFamily) -> float:
    """Growth rate of max(increasing, decreasing) as |s| -> infinity"""
    up = -increasing.b[increasing.b < -ZERO_VELOCITY]
    down = decreasing.b[decreasing.b > ZERO_VELOCITY]
    if up.size == 0 or down.size == 0:
        return 0.0
    return float(min(up.max(), down.max()))


def _profile_minimum(H: SideHamiltonian, x: float, t: float, r: float,
                     p_tan: float) -> Tuple[float, float]:
    f = H.normal_profile(x, t, r, p_tan)
    if H.is_facets:
        inc, dec = _split_families(H, x, t)
        slope = _family_slope(inc, dec)
        lines = H.facets.at(x, t).lines(r, p_tan)
    else:
        slope, lines = H.profile.slope, None
    span = _bracket_span(H.bound, slope, r, p_tan, float(f(np.array(0.0))))
    return _minimize_coercive(f, span, lines)


def minimizer_interval(H: SideHamiltonian, x: float = 0.0, t: float = 0.0, r: float = 0.0,
                       p_tan: float = 0.0) -> Tuple[float, float]:
    """Least and largest minimizers [m^-, m^+] of s -> H(r, p_tan + s e_N)"""
    if not H.is_facets and H.profile.minimizers is not None:
        return H.profile.minimizers
    s_star, value = _profile_minimum(H, x, t, r, p_tan)
    f = H.normal_profile(x, t, r, p_tan)
    level = value + 1e-10 * (1.0 + abs(value))
    m_plus = solve_monotone_level(lambda s: f(np.maximum(s, s_star)), level, increasing=True)
    m_minus = solve_monotone_level(lambda s: f(np.minimum(s, s_star)), level, increasing=False)
    return min(m_minus, s_star), max(m_plus, s_star)


def monotone_split(H: SideHamiltonian, x: float = 0.0, t: float = 0.0, r: float = 0.0,
                   p_tan: float = 0.0) -> MonotoneSplit:
    """
    Split H into its nondecreasing part H^- and nonincreasing part H^+.

    Facet sides split by the sign of b. Zero-velocity facets and the side's
    balanced mixtures enter both parts. Analytic profiles are split at
    their minimizer interval after a quasiconvexity check.
    """
    if H.is_facets:
        inc, dec = _split_families(H, x, t)
        m = minimizer_interval(H, x, t, r, p_tan)
        return MonotoneSplit(lambda s: inc.hamiltonian(r, s, p_tan),
                             lambda s: dec.hamiltonian(r, s, p_tan), m, inc, dec)

    f = H.normal_profile(x, t, r, p_tan)
    span = _bracket_span(H.bound, H.profile.slope, r, p_tan, float(f(np.array(0.0))))
    _check_quasiconvex(f, 2.0 * span, H.profile.name)
    m_minus, m_plus = minimizer_interval(H, x, t, r, p_tan)
    return MonotoneSplit(lambda s: f(np.maximum(s, m_plus)),
                         lambda s: f(np.minimum(s, m_minus)), (m_minus, m_plus))


def _pair_lines(first: Optional[FacetFamily], second: Optional[FacetFamily], r: float,
                p_tan: float) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    if first is None or second is None:
        return None
    a1, b1 = first.lines(r, p_tan)
    a2, b2 = second.lines(r, p_tan)
    return np.concatenate([a1, a2]), np.concatenate([b1, b2])


def _two_sided_min(f1, f2, slope: float, bound: float, r: float, p_tan: float,
                   lines) -> float:
    def envelope(s):
        return np.maximum(f1(s), f2(s))

    span = _bracket_span(bound, slope, r, p_tan, float(envelope(np.array(0.0))))
    return _minimize_coercive(envelope, span, lines)[1]


def _coercivity_slope(H1: SideHamiltonian, H2: SideHamiltonian, families) -> float:
    if families is not None:
        return _family_slope(*families)
    slopes = [H.profile.slope if not H.is_facets else H.facets.speed for H in (H1, H2)]
    return float(min(slopes))


def tangential_HT(H1: SideHamiltonian, H2: SideHamiltonian, r: float = 0.0,
                  p_tan: float = 0.0, x: float = 0.0, t: float = 0.0) -> float:
    """min over s of max(H1, H2)(r, p_tan + s e_N); H1 is the right side"""
    f1 = H1.normal_profile(x, t, r, p_tan)
    f2 = H2.normal_profile(x, t, r, p_tan)
    families = None
    if H1.is_facets and H2.is_facets:
        both = H1.facets.at(x, t).concat(H2.facets.at(x, t))
        families = (both.subset(both.b < -ZERO_VELOCITY).concat(both.subset(_zero_mask(both.b))),
                    both.subset(both.b > ZERO_VELOCITY))
    slope = _coercivity_slope(H1, H2, families)
    lines = _pair_lines(H1.frozen(x, t), H2.frozen(x, t), r, p_tan)
    return _two_sided_min(f1, f2, slope, max(H1.bound, H2.bound), r, p_tan, lines)


def tangential_HTreg(H1: SideHamiltonian, H2: SideHamiltonian, r: float = 0.0,
                     p_tan: float = 0.0, x: float = 0.0, t: float = 0.0) -> float:
    """min over s of max(H1^-, H2^+), the push-push tangential Hamiltonian"""
    split1 = monotone_split(H1, x, t, r, p_tan)
    split2 = monotone_split(H2, x, t, r, p_tan)
    families = None
    if H1.is_facets and H2.is_facets:
        families = (split1.increasing_family, split2.decreasing_family)
    slope = _coercivity_slope(H1, H2, families)
    lines = None if families is None else _pair_lines(*families, r, p_tan)
    return _two_sided_min(split1.increasing, split2.decreasing, slope,
                          max(H1.bound, H2.bound), r, p_tan, lines)


def thresholds_m1_m2(H1: SideHamiltonian, H2: SideHamiltonian, r: float = 0.0,
                     p_tan: float = 0.0, x: float = 0.0,
                     t: float = 0.0) -> Union[Tuple[float, float], NoCrossing]:
    """
    Zero interval [m1, m2] of phi(s) = H1^-(s) - H2^+(s).

    phi is nondecreasing; NoCrossing is returned when it is not negative far
    to the left and positive far to the right.
    """
    split1 = monotone_split(H1, x, t, r, p_tan)
    split2 = monotone_split(H2, x, t, r, p_tan)

    def phi(s):
        with np.errstate(invalid='ignore'):
            return split1.increasing(s) - split2.decreasing(s)

    span = _bracket_span(max(H1.bound, H2.bound), 1.0, r, p_tan, 0.0)
    lo, hi = -span, span
    for _ in range(MAX_EXPANSIONS):
        v_lo, v_hi = float(phi(np.array(lo))), float(phi(np.array(hi)))
        if not (np.isfinite(v_lo) and np.isfinite(v_hi)):
            return NoCrossing("one monotone part is empty")
        if v_lo < 0 < v_hi:
            break
        lo, hi = 2.0 * lo, 2.0 * hi
    else:
        sign = 'positive' if v_lo >= 0 else 'nonpositive'
        logger.debug("threshold search gave up at |s| = %.3g", hi)
        return NoCrossing(f"phi stays {sign} on |s| <= {hi:.3g}")

    m1 = -solve_monotone_level(lambda s: -phi(-s), 0.0, increasing=True)
    m2 = solve_monotone_level(phi, 0.0, increasing=True)
    return m1, m2


def uniqueness_condition(H1: SideHamiltonian, H2: SideHamiltonian, r: float = 0.0,
                         p_tan: float = 0.0, x: float = 0.0, t: float = 0.0) -> bool:
    """True when the least minimizer of H2 is not left of the largest minimizer of H1"""
    m1_plus = minimizer_interval(H1, x, t, r, p_tan)[1]
    m2_minus = minimizer_interval(H2, x, t, r, p_tan)[0]
    unique = m2_minus >= m1_plus - TOL_S
    if unique:
        gap = tangential_HT(H1, H2, r, p_tan, x, t) - tangential_HTreg(H1, H2, r, p_tan, x, t)
        if abs(gap) > 1e-6:
            raise ClassificationError(
                f"H_T - H_T^reg = {gap:.3g} although the minimizers are ordered; "
                "the declared minimizers do not match the profiles")
    return unique


def solve_monotone_level(hmono: Callable, target: float, increasing: bool = True,
                         tol_level: float = TOL_LEVEL) -> float:
    """
    Invert a monotone scalar profile.

    Args:
        hmono: Nondecreasing (``increasing=True``) or nonincreasing profile
        target: Level to reach
        increasing: Monotonicity direction of ``hmono``
        tol_level: Accepted |hmono(s) - target|, scaled by 1 + |target|

    Returns:
        sup{s: hmono(s) <= target} for nondecreasing profiles,
        inf{s: hmono(s) <= target} for nonincreasing ones

    Raises:
        NoSolutionError: target below the infimum, or skipped by a jump
        CoercivityError: profile never exceeds the target
    """
    if not increasing:
        return -solve_monotone_level(lambda s: hmono(-s), target, True, tol_level)

    def f(s):
        return float(hmono(np.array(s, dtype=float)))

    lo, hi = -1.0, 1.0
    for _ in range(MAX_EXPANSIONS):
        if f(lo) <= target:
            break
        lo *= 2.0
    else:
        raise NoSolutionError(f"target {target:.6g} lies below the infimum")
    for _ in range(MAX_EXPANSIONS):
        if f(hi) > target:
            break
        hi *= 2.0
    else:
        raise CoercivityError(f"profile never exceeds {target:.6g}")

    for _ in range(400):
        if hi - lo <= 1e-13 * max(1.0, abs(lo)):
            break
        mid = 0.5 * (lo + hi)
        if f(mid) <= target:
            lo = mid
        else:
            hi = mid
    gap = min(abs(f(lo) - target), abs(f(hi) - target))
    if gap > tol_level * (1.0 + abs(target)):
        raise NoSolutionError(f"profile jumps across {target:.6g} near s = {lo:.6g}")
    return lo


def _junction_feasible(G: GeneralG, split1: MonotoneSplit, split2: MonotoneSplit,
                       a: float, v: float, p_tan: float) -> bool:
    """Is there (s1, s2) with a + H1^-(s1) <= v, a + H2^+(s2) <= v and G(a, p_tan, -s1, s2) <= v?"""
    try:
        s1 = solve_monotone_level(split1.increasing, v - a, increasing=True)
        s2 = solve_monotone_level(split2.decreasing, v - a, increasing=False)
    except NoSolutionError:
        return False
    return G(a, p_tan, -s1, s2) <= v


def _threshold_bisection(feasible: Callable[[float], bool], start: float,
                         step: float) -> float:
    """Least v with feasible(v), for an upward closed feasible set"""
    hi = start
    for _ in range(MAX_EXPANSIONS):
        if feasible(hi):
            break
        hi += step
        step *= 2.0
    else:
        raise CoercivityError("junction function never becomes feasible")
    step = max(step, 1.0)
    lo = hi - step
    for _ in range(MAX_EXPANSIONS):
        if not feasible(lo):
            break
        step *= 2.0
        lo = hi - step
    else:
        raise CoercivityError("junction function is unbounded below")
    for _ in range(200):
        if hi - lo <= 1e-11 * max(1.0, abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def general_junction_to_flux_limiter(G: Optional[GeneralG], H1: SideHamiltonian,
                                     H2: SideHamiltonian, a: float, p_tan: float = 0.0,
                                     r: float = 0.0, x: float = 0.0, t: float = 0.0) -> float:
    """
    A(a, p_tan) = min over (s1, s2) of max(a + H1^-(s1), a + H2^+(s2), G(a, p_tan, -s1, s2)).

    For a level v the best s1 is the largest with a + H1^-(s1) <= v and the
    best s2 the least with a + H2^+(s2) <= v; feasibility of v is monotone,
    so A is found by bisection on v. ``G=None`` couples s1 = s2.
    """
    if G is None:
        return a + tangential_HTreg(H1, H2, r, p_tan, x, t)
    split1 = monotone_split(H1, x, t, r, p_tan)
    split2 = monotone_split(H2, x, t, r, p_tan)
    scale = 1.0 + abs(a) + max(H1.bound, H2.bound) * (1.0 + abs(r))
    return _threshold_bisection(lambda v: _junction_feasible(G, split1, split2, a, v, p_tan),
                                a + scale, scale)


def junction_zero_level(G: GeneralG, H1: SideHamiltonian, H2: SideHamiltonian,
                        p_tan: float = 0.0, r: float = 0.0, x: float = 0.0,
                        t: float = 0.0) -> float:
    """
    Zero a* of a -> A(a, p_tan); the equivalent flux limiter is -a*.

    A is nondecreasing in a, and A(a) <= 0 exactly when the level 0 is
    feasible, so a* is the largest a for which the level 0 is feasible.
    """
    split1 = monotone_split(H1, x, t, r, p_tan)
    split2 = monotone_split(H2, x, t, r, p_tan)
    scale = 1.0 + max(H1.bound, H2.bound) * (1.0 + abs(r))
    # feasibility at level 0 is downward closed in a; flip it to reuse the bisection
    return -_threshold_bisection(lambda b: _junction_feasible(G, split1, split2, -b, 0.0, p_tan),
                                 scale, scale)


def limiter_value(limiter: FluxLimiter, H1: SideHamiltonian, H2: SideHamiltonian,
                  r: float = 0.0, p_tan: float = 0.0, x: float = 0.0, t: float = 0.0) -> float:
    """
    Flux-limiter value G(r) entering u_t + max(G, H1^+, H2^-) = 0.

    A general junction function is reduced to the constant -a* where a* is
    the zero of a -> A(a, p_tan).
    """
    if limiter.kind is LimiterKind.CONSTANT:
        value = limiter.value
    elif limiter.kind is LimiterKind.HT:
        value = tangential_HT(H1, H2, r, p_tan, x, t)
    elif limiter.kind is LimiterKind.HTREG:
        value = tangential_HTreg(H1, H2, r, p_tan, x, t)
    elif limiter.kind is LimiterKind.FACETS:
        value = -np.inf
    else:
        value = -junction_zero_level(limiter.general, H1, H2, p_tan, r, x, t)
    if limiter.facets is not None:
        value = max(value, float(limiter.facets.at(x, t).hamiltonian(r, 0.0, p_tan)))
    return float(value)
