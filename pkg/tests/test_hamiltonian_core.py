from dataclasses import replace

import numpy as np
import pytest

from hamiltonian_core import (AnalyticProfile, FacetFamily, FluxLimiter, LimiterKind, NoCrossing,
                              RestrictMode, Side, SideHamiltonian, balance_weights,
                              eikonal_profile, eval_facets, general_junction_to_flux_limiter,
                              junction_zero_level, kirchhoff_G,
                              limiter_value, minimizer_interval, monotone_split, profile_to_facets,
                              quadratic_profile, restrict_facets, shifted_eikonal_profile,
                              solve_monotone_level, tangential_HT, tangential_HTreg,
                              thresholds_m1_m2, uniqueness_condition)
from solver_errors import ClassificationError, CoercivityError, DomainError, NoSolutionError


def test_facet_arrays_must_match():
    with pytest.raises(DomainError):
        FacetFamily([0.0, 1.0], [0.0], [0.0, 0.0])


@pytest.mark.parametrize("s", [-2.5, -0.3, 0.0, 0.7, 3.0])
def test_eval_facets_eikonal(s):
    fam = FacetFamily([-1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0])
    assert eval_facets(fam, 0.0, s) == pytest.approx(abs(s))


def test_eval_facets_discount_and_cost():
    fam = FacetFamily.from_facets([(1.0, 2.0, 0.5), (-1.0, 0.0, 0.0)])
    # max(-p + 2r - 0.5, p)
    assert eval_facets(fam, 1.0, 0.25) == pytest.approx(1.25)


def test_eval_empty_family_raises():
    with pytest.raises(DomainError):
        eval_facets(FacetFamily.empty(), 0.0, 0.0)


def test_table_family_interpolates_costs():
    fam = FacetFamily.from_table([0.0, 1.0], [[(1.0, 0.0, 0.0)], [(1.0, 0.0, 2.0)]])
    assert fam.at(0.5).l[0] == pytest.approx(1.0)
    assert fam.at(4.0).l[0] == pytest.approx(2.0)


def test_restrict_outgoing_and_incoming(gap_sides):
    right, left = gap_sides
    out_right = restrict_facets(left.facets, right.facets, RestrictMode.RIGHT_OUTGOING)
    assert np.all(out_right.b > 0)
    out_left = restrict_facets(left.facets, right.facets, RestrictMode.LEFT_OUTGOING)
    assert np.all(out_left.b < 0)
    incoming = restrict_facets(left.facets, right.facets, RestrictMode.RIGHT_INCOMING)
    assert np.all(incoming.b <= 0)


def test_tangential_families_differ_by_pull_pull(gap_sides):
    right, left = gap_sides
    every = restrict_facets(left.facets, right.facets, RestrictMode.TANGENTIAL_ALL)
    regular = restrict_facets(left.facets, right.facets, RestrictMode.TANGENTIAL_REGULAR)
    assert np.allclose(every.b, 0.0) and np.allclose(regular.b, 0.0)
    assert every.l.min() == pytest.approx(0.0)
    assert regular.l.min() == pytest.approx(1.0)


def test_tangential_values_on_gap(gap_sides):
    right, left = gap_sides
    assert tangential_HT(right, left, r=0.3) == pytest.approx(0.3, abs=1e-7)
    assert tangential_HTreg(right, left, r=0.3) == pytest.approx(-0.7, abs=1e-7)


@pytest.mark.parametrize("seed", range(12))
def test_tangential_min_formula_matches_facet_sup(seed, make_random_side):
    rng = np.random.default_rng(seed)
    H1 = make_random_side(rng, Side.RIGHT)
    H2 = make_random_side(rng, Side.LEFT)
    every = restrict_facets(H2.facets, H1.facets, RestrictMode.TANGENTIAL_ALL)
    regular = restrict_facets(H2.facets, H1.facets, RestrictMode.TANGENTIAL_REGULAR)
    assert tangential_HT(H1, H2) == pytest.approx(float(np.max(-every.l)), abs=1e-8)
    assert tangential_HTreg(H1, H2) == pytest.approx(float(np.max(-regular.l)), abs=1e-8)
    assert tangential_HTreg(H1, H2) <= tangential_HT(H1, H2) + 1e-10


def test_monotone_split_of_eikonal(eikonal_sides):
    right, _ = eikonal_sides
    split = monotone_split(right)
    s = np.linspace(-2.0, 2.0, 9)
    assert np.allclose(split.increasing(s), np.maximum(s, 0.0))
    assert np.allclose(split.decreasing(s), np.maximum(-s, 0.0))
    assert np.allclose(np.maximum(split.increasing(s), split.decreasing(s)), np.abs(s))


def test_minimizer_interval_of_shifted_profile():
    H = SideHamiltonian(Side.RIGHT, profile=shifted_eikonal_profile(0.75))
    lo, hi = minimizer_interval(H)
    assert lo == pytest.approx(0.75) and hi == pytest.approx(0.75)


@pytest.mark.parametrize("right_shift, left_shift, expected", [
    (0.0, 0.0, (0.0, 0.0)),
    (1.0, -1.0, (-1.0, 1.0)),
])
def test_thresholds(right_shift, left_shift, expected):
    m1, m2 = thresholds_m1_m2(SideHamiltonian(Side.RIGHT, profile=shifted_eikonal_profile(right_shift)),
                              SideHamiltonian(Side.LEFT, profile=shifted_eikonal_profile(left_shift)))
    assert m1 == pytest.approx(expected[0], abs=1e-8)
    assert m2 == pytest.approx(expected[1], abs=1e-8)


def test_thresholds_need_coercive_sides(eikonal_sides):
    right, _ = eikonal_sides
    only_leftward = SideHamiltonian(Side.LEFT, facets=FacetFamily([-1.0], [0.0], [0.0]))
    with pytest.raises(CoercivityError):
        thresholds_m1_m2(right, only_leftward)


def test_uniqueness_condition_follows_minimizer_order():
    ordered = (SideHamiltonian(Side.RIGHT, profile=shifted_eikonal_profile(-1.0)),
               SideHamiltonian(Side.LEFT, profile=shifted_eikonal_profile(1.0)))
    crossed = (SideHamiltonian(Side.RIGHT, profile=shifted_eikonal_profile(1.0)),
               SideHamiltonian(Side.LEFT, profile=shifted_eikonal_profile(-1.0)))
    assert uniqueness_condition(*ordered)
    assert not uniqueness_condition(*crossed)


def test_solve_monotone_level():
    ramp = lambda s: np.maximum(s, 0.0)
    assert solve_monotone_level(ramp, 0.5) == pytest.approx(0.5, abs=1e-10)
    assert solve_monotone_level(lambda s: np.maximum(-s, 0.0), 0.5,
                                increasing=False) == pytest.approx(-0.5, abs=1e-10)
    with pytest.raises(NoSolutionError):
        solve_monotone_level(ramp, -1.0)
    with pytest.raises(CoercivityError):
        solve_monotone_level(lambda s: np.zeros_like(s), 1.0)


def test_balance_weights_cancel_velocities():
    mu1, mu2 = balance_weights([-1.0, -2.0], [2.0, 0.5])
    assert np.allclose(mu1 * np.array([-1.0, -2.0]) + mu2 * np.array([2.0, 0.5]), 0.0)
    assert np.allclose(mu1 + mu2, 1.0)


def test_flux_limiter_validation():
    with pytest.raises(DomainError):
        FluxLimiter(LimiterKind.FACETS)
    with pytest.raises(DomainError):
        FluxLimiter(LimiterKind.CONSTANT, facets=FacetFamily([1.0], [0.0], [0.0]))
    with pytest.raises(DomainError):
        FluxLimiter(LimiterKind.GENERAL)
    with pytest.raises(DomainError):
        FluxLimiter(LimiterKind.GENERAL, general=lambda a, p, b, c: -b, beta=1.0)


def test_constant_limiter_as_junction_control():
    fam = FluxLimiter.constant(0.4).junction_facets()
    assert fam.size == 1
    assert (fam.b[0], fam.c[0], fam.l[0]) == (0.0, 0.0, -0.4)


def test_limiter_value_kinds(gap_sides):
    right, left = gap_sides
    assert limiter_value(FluxLimiter.constant(-2.0), right, left) == pytest.approx(-2.0)
    assert limiter_value(FluxLimiter(LimiterKind.HTREG), right, left) == pytest.approx(-1.0, abs=1e-7)
    free = FluxLimiter(LimiterKind.FACETS, facets=FacetFamily([0.0], [0.0], [0.0]))
    assert limiter_value(free, right, left) == pytest.approx(0.0)


def test_kirchhoff_reduces_to_regular_tangential(gap_sides):
    right, left = gap_sides
    level = tangential_HTreg(right, left)
    assert junction_zero_level(kirchhoff_G, right, left) == pytest.approx(-level, abs=1e-7)
    assert limiter_value(FluxLimiter.kirchhoff(), right, left) == pytest.approx(level, abs=1e-7)


def test_general_reduction_without_G(gap_sides):
    right, left = gap_sides
    assert general_junction_to_flux_limiter(None, right, left, 0.5) == pytest.approx(
        0.5 + tangential_HTreg(right, left), abs=1e-9)


@pytest.mark.parametrize("profile", [eikonal_profile(), shifted_eikonal_profile(0.5, offset=0.25)])
def test_profile_to_facets_exact(profile):
    fam = profile_to_facets(profile)
    s = np.linspace(-3.0, 3.0, 61)
    assert np.allclose(fam.hamiltonian(0.0, s), profile(s))


def test_quadratic_profile_facets_close_within_speed_range():
    profile = quadratic_profile(level=0.5, max_speed=4.0)
    fam = profile_to_facets(profile, n_controls=41)
    s = np.linspace(-4.0, 4.0, 81)
    gap = profile(s) - fam.hamiltonian(0.0, s)
    assert np.all(gap >= -1e-12)
    assert gap.max() <= 0.2 ** 2 / 8 + 1e-12


def test_solve_monotone_level_rejects_a_jump():
    step = lambda s: np.where(s < 0.0, -1.0, 1.0)
    with pytest.raises(NoSolutionError, match="jumps"):
        solve_monotone_level(step, 0.0)
    with pytest.raises(NoSolutionError):
        solve_monotone_level(lambda s: np.where(s > 0.0, -1.0, 1.0), 0.0, increasing=False)


def test_solve_monotone_level_on_random_profiles(rng):
    for _ in range(100):
        k = int(rng.integers(1, 5))
        fam = FacetFamily(-rng.uniform(0.2, 2.0, size=k), np.zeros(k), rng.uniform(-1, 1, size=k))
        h = lambda s: fam.hamiltonian(0.0, s)
        target = float(rng.uniform(-2.0, 2.0))
        s = solve_monotone_level(h, target)
        assert abs(float(h(s)) - target) <= 1e-8 * (1.0 + abs(target))
        assert float(h(s - 1e-6)) < target < float(h(s + 1e-6))


def test_uniqueness_condition_rejects_wrong_minimizers():
    right = SideHamiltonian(Side.RIGHT, profile=shifted_eikonal_profile(1.0))
    # true minimizer of the left profile is -1
    mislabeled = replace(shifted_eikonal_profile(-1.0), minimizers=(1.0, 1.0))
    with pytest.raises(ClassificationError):
        uniqueness_condition(right, SideHamiltonian(Side.LEFT, profile=mislabeled))


def test_split_rejects_double_well_profile():
    double_well = AnalyticProfile('double_well',
                                  lambda s, r, q: np.minimum(np.abs(s - 1.0), np.abs(s + 1.0)))
    with pytest.raises(ClassificationError):
        monotone_split(SideHamiltonian(Side.RIGHT, profile=double_well))


def test_thresholds_without_crossing():
    flat = AnalyticProfile('flat', lambda s, r, q: np.zeros_like(s), minimizers=(0.0, 0.0))
    out = thresholds_m1_m2(SideHamiltonian(Side.RIGHT, profile=flat),
                           SideHamiltonian(Side.LEFT, profile=eikonal_profile()))
    assert isinstance(out, NoCrossing)
    assert "nonpositive" in out.reason


@pytest.mark.parametrize("seed", range(10))
def test_monotone_split_reproduces_random_sides(seed, make_random_side):
    rng = np.random.default_rng(seed)
    s = np.linspace(-5.0, 5.0, 201)
    for side in (Side.RIGHT, Side.LEFT):
        H = make_random_side(rng, side)
        split = monotone_split(H)
        assert np.allclose(np.maximum(split.increasing(s), split.decreasing(s)),
                           H.facets.hamiltonian(0.0, s), atol=1e-12)
        assert np.all(np.diff(split.increasing(s)) >= -1e-12)
        assert np.all(np.diff(split.decreasing(s)) <= 1e-12)


def test_zero_velocity_facets_enter_both_parts():
    fam = FacetFamily([-1.0, 0.0, 1.0], [0.0] * 3, [0.0, -0.5, 0.0])
    left = SideHamiltonian(Side.LEFT, facets=fam)
    split = monotone_split(left)
    s = np.linspace(-2.0, 2.0, 9)
    assert np.allclose(split.increasing(s), np.maximum(s, 0.5))
    assert np.allclose(split.decreasing(s), np.maximum(-s, 0.5))


def test_eval_facets_convex_and_lipschitz(rng):
    for _ in range(50):
        k = int(rng.integers(1, 6))
        fam = FacetFamily(rng.uniform(-2.0, 2.0, size=k), rng.uniform(0.0, 1.0, size=k),
                          rng.uniform(-1.0, 1.0, size=k))
        r = float(rng.uniform(-1.0, 1.0))
        p, q = rng.uniform(-3.0, 3.0, size=2)
        lam = float(rng.uniform())
        mid = eval_facets(fam, r, lam * p + (1.0 - lam) * q)
        assert mid <= lam * eval_facets(fam, r, p) + (1.0 - lam) * eval_facets(fam, r, q) + 1e-12
        speed = float(np.abs(fam.b).max())
        assert abs(eval_facets(fam, r, p) - eval_facets(fam, r, q)) <= speed * abs(p - q) + 1e-12
