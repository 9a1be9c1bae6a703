"""Weight pair construction, feasibility windows, minimal times."""

import math

import numpy as np
import pytest

from dynwave.errors import (ConfigurationError, EmptyBetaWindowError,
                            InfeasibleConfigError, WeightOverflowError)
from dynwave.geometry import ConvexBody, DomainSpec, certify
from dynwave.weights import (WeightParams, beta_window, eval_weights,
                             feasibility, minimal_time, pick_c1, require_feasible,
                             tangential_coefficient)


@pytest.fixture(scope="module")
def cert2d():
    return certify(DomainSpec(ConvexBody.ball(2, 1.0), 2.0))


@pytest.fixture(scope="module")
def cert1d():
    return certify(DomainSpec(ConvexBody.ball(1, 1.0), 2.0))


# -- minimal time -------------------------------------------------------------


def test_minimal_time_closed_form(cert2d):
    # sqrt(4 - 1) / min(1, sqrt(2*1*1/(8*2))) = sqrt(3) * sqrt(8) = sqrt(24)
    assert abs(minimal_time(cert2d, 1.0, 2.0) - math.sqrt(24.0)) < 1e-12


def test_minimal_time_without_tangential_branch(cert1d):
    # 1d: only the convexity branch enters, T* = sqrt(3)/sqrt(rho d)
    assert abs(minimal_time(cert1d, 1.0, 2.0, tangential=False) - math.sqrt(3.0)) < 1e-12
    # and delta is inert: changing it does not move T*
    assert minimal_time(cert1d, 1.0, 5.0, tangential=False) == \
        minimal_time(cert1d, 1.0, 2.0, tangential=False)


def test_minimal_time_degenerate_and_limit(cert2d):
    import dataclasses
    degenerate = dataclasses.replace(cert2d, d1=cert2d.d0)
    assert minimal_time(degenerate, 1.0, 2.0) == 0.0
    # delta -> infinity: cap -> C'd/8 = 1/4, so T* -> sqrt(3)*2
    big = minimal_time(cert2d, 1.0, 1e12)
    assert abs(big - 2.0 * math.sqrt(3.0)) < 1e-6


def test_minimal_time_guards(cert2d):
    with pytest.raises(ConfigurationError):
        minimal_time(cert2d, -1.0, 2.0)
    with pytest.raises(InfeasibleConfigError):
        minimal_time(cert2d, 2.0, 1.0)  # delta <= d with the tangential branch


# -- beta window --------------------------------------------------------------


def test_beta_window_worked_example(cert2d):
    lo, hi = beta_window(cert2d, 1.0, 2.0, 6.0)
    assert abs(lo - 3.0 / 36.0) < 1e-12
    assert abs(hi - 0.125) < 1e-12


def test_beta_window_empty_iff_T_below_minimal(cert2d):
    tstar = minimal_time(cert2d, 1.0, 2.0)
    with pytest.raises(EmptyBetaWindowError):
        beta_window(cert2d, 1.0, 2.0, tstar)  # boundary case: endpoints equal
    with pytest.raises(EmptyBetaWindowError):
        beta_window(cert2d, 1.0, 2.0, 0.5 * tstar)
    lo, hi = beta_window(cert2d, 1.0, 2.0, tstar * (1.0 + 1e-9))
    assert lo < hi


def test_beta_window_threshold_matches_minimal_time_for_many_certs():
    rng = np.random.default_rng(42)
    for _ in range(8):
        a = rng.uniform(0.5, 1.2)
        outer = rng.uniform(1.8, 3.0) * a
        cert = certify(DomainSpec(ConvexBody.ball(2, a), outer), n_bulk=800, n_boundary=64)
        d = rng.uniform(0.5, 2.0)
        delta = d * rng.uniform(1.1, 3.0)
        tstar = minimal_time(cert, d, delta)
        for T in (0.9 * tstar, tstar, 1.1 * tstar):
            try:
                lo, hi = beta_window(cert, d, delta, T)
                nonempty = lo < hi
            except EmptyBetaWindowError:
                nonempty = False
            assert nonempty == (T > tstar)


def test_beta_window_widens_to_zero_lower_end(cert2d):
    lo, hi = beta_window(cert2d, 1.0, 2.0, 1e6)
    assert lo < 1e-11
    assert abs(hi - 0.125) < 1e-12


# -- c1 selection -------------------------------------------------------------


def test_pick_c1_worked_example(cert1d):
    # 1 + 0.1*36 - 1 + 0.1 = 3.7
    assert abs(pick_c1(cert1d, 0.1, 6.0) - 3.7) < 1e-12


def test_pick_c1_floor_on_sampled_psi(cert2d):
    rng = np.random.default_rng(7)
    body = ConvexBody.ball(2, 1.0)
    for _ in range(5):
        beta, T = rng.uniform(0.02, 0.12), rng.uniform(1.0, 8.0)
        c1 = pick_c1(cert2d, beta, T)
        params = WeightParams(d=1.0, delta=2.0, beta=beta, c1=c1, lam=1.0, s=1.0, T=T)
        th = rng.uniform(0, 2 * np.pi, 200)
        r = rng.uniform(1.0, 2.0, 200)
        x = np.column_stack([r * np.cos(th), r * np.sin(th)])
        t = rng.uniform(-T, T, 200)
        w = eval_weights(params, body, x, t)
        assert w["psi"].min() >= 1.0 + 0.1 - 1e-12


def test_pick_c1_zero_margin_is_exact_floor(cert1d):
    beta, T = 0.05, 4.0
    c1 = pick_c1(cert1d, beta, T, margin=1e-15)
    # minimum of psi sits at min psi0, |t| = T
    psi_min = cert1d.d0**2 - beta * T**2 + c1
    assert abs(psi_min - 1.0) < 1e-12
    with pytest.raises(ConfigurationError):
        pick_c1(cert1d, beta, T, margin=0.0)


# -- pointwise weights ---------------------------------------------------------


def _params(T=6.0, beta=0.1, lam=1.5, s=2.0, c1=None, cert=None):
    c1 = pick_c1(cert, beta, T) if c1 is None else c1
    return WeightParams(d=1.0, delta=2.0, beta=beta, c1=c1, lam=lam, s=s, T=T)


def test_eval_weights_time_symmetry_and_zero_slope(cert2d):
    body = ConvexBody.ball(2, 1.0)
    p = _params(cert=cert2d)
    x = np.array([[1.3, 0.4]])
    for t in (0.7, 2.1):
        wp = eval_weights(p, body, x, t)
        wm = eval_weights(p, body, x, -t)
        assert abs(wp["psi"][0] - wm["psi"][0]) < 1e-14
    w0 = eval_weights(p, body, x, 0.0)
    assert w0["dpsi_dt"][0] == 0.0
    assert w0["dphi_dt"][0] == 0.0


def test_eval_weights_chain_rule_against_finite_differences(cert2d):
    # central differences in t at two resolutions: measured order >= 1.9
    body = ConvexBody.ball(2, 1.0)
    p = _params(cert=cert2d)
    x = np.array([[1.7, -0.2], [0.0, 1.1]])
    t = 1.3

    def dphi_fd(h):
        up = eval_weights(p, body, x, t + h)["phi"]
        dn = eval_weights(p, body, x, t - h)["phi"]
        return (up - dn) / (2 * h)

    exact = eval_weights(p, body, x, t)["dphi_dt"]
    e1 = np.max(np.abs(dphi_fd(1e-2) - exact))
    e2 = np.max(np.abs(dphi_fd(5e-3) - exact))
    order = np.log2(e1 / e2)
    assert order > 1.9

    # spatial gradient of phi against FD in x (absolute scale: components can be 0)
    w = eval_weights(p, body, x, t)
    scale = np.max(np.abs(w["grad_phi"]))
    h = 1e-6
    for k in range(2):
        dx = np.zeros(2)
        dx[k] = h
        num = (eval_weights(p, body, x + dx, t)["phi"]
               - eval_weights(p, body, x - dx, t)["phi"]) / (2 * h)
        assert np.max(np.abs(num - w["grad_phi"][:, k])) < 1e-7 * scale

    # second time derivative identity
    h = 1e-3
    num2 = (eval_weights(p, body, x, t + h)["phi"] - 2 * w["phi"]
            + eval_weights(p, body, x, t - h)["phi"]) / h**2
    assert np.max(np.abs(num2 - w["d2phi_dt2"]) / np.abs(w["d2phi_dt2"])) < 1e-5


def test_eval_weights_b_psi_and_floor(cert2d):
    body = ConvexBody.ball(2, 1.0)
    p = _params(cert=cert2d)
    x = np.array([[1.5, 0.0]])
    t = 2.0
    w = eval_weights(p, body, x, t)
    grad_sq = float(np.sum(w["grad_psi"] ** 2))
    assert abs(w["b_psi"][0] - ((2 * p.beta * t) ** 2 - p.d * grad_sq)) < 1e-12
    assert w["phi"].min() > math.e  # psi > 1 and lam >= 1 force phi > e


def test_eval_weights_tangential_gradient_vanishes_on_ring(cert2d):
    body = ConvexBody.ball(2, 1.0)
    p = _params(cert=cert2d)
    th = np.linspace(0, 2 * np.pi, 32, endpoint=False)
    x = np.column_stack([np.cos(th), np.sin(th)])
    w = eval_weights(p, body, x, 0.5)
    tangents = np.column_stack([-np.sin(th), np.cos(th)])
    assert np.max(np.abs(np.sum(w["grad_psi"] * tangents, axis=1))) < 1e-12


def test_eval_weights_overflow_guard(cert2d):
    p = WeightParams(d=1.0, delta=2.0, beta=0.1, c1=5.0, lam=200.0, s=1.0, T=6.0)
    with pytest.raises(WeightOverflowError):
        eval_weights(p, ConvexBody.ball(2, 1.0), np.array([[1.9, 0.0]]), 0.0)


# -- feasibility gates ----------------------------------------------------------


def test_tangential_coefficient_sign():
    # positive iff beta < C'd(delta-d)/(8 delta)
    bound = 2.0 * 1.0 * 1.0 / (8.0 * 2.0)
    assert tangential_coefficient(2.0, 1.0, 2.0, bound * 0.99) > 0
    assert tangential_coefficient(2.0, 1.0, 2.0, bound * 1.01) < 0
    assert tangential_coefficient(2.0, 1.0, 2.0, bound) == 0.0


def test_feasibility_flags(cert2d):
    good = _params(cert=cert2d)
    flags = feasibility(good, cert2d)
    assert all(flags.values())
    require_feasible(good, cert2d)

    bad_delta = WeightParams(d=2.0, delta=1.0, beta=good.beta, c1=good.c1,
                             lam=good.lam, s=good.s, T=good.T)
    assert not feasibility(bad_delta, cert2d)["delta_gt_d"]
    with pytest.raises(InfeasibleConfigError):
        require_feasible(bad_delta, cert2d)
    # 1d waives the delta > d gate
    assert feasibility(bad_delta, cert2d, tangential=False)["delta_gt_d"]


def test_feasibility_rejects_beta_outside_window(cert2d):
    lo, hi = beta_window(cert2d, 1.0, 2.0, 6.0)
    inside = 0.5 * (lo + hi)
    p = _params(beta=inside, cert=cert2d)
    assert feasibility(p, cert2d)["beta_in_window"]
    p_bad = _params(beta=hi * 1.5, c1=pick_c1(cert2d, hi * 1.5, 6.0), cert=cert2d)
    assert not feasibility(p_bad, cert2d)["beta_in_window"]
