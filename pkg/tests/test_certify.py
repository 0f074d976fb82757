"""Certificate re-verification, decay extraction, and empirical replay."""

import dataclasses
import math

import numpy as np
import pytest

from quantaw import certify, lmi
from quantaw.errors import CertificateError

from conftest import random_iterate, random_stable_loop


def _eigmax(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def test_reduced_mi_matches_schur_complement():
    for seed in range(30):
        cl = random_stable_loop(seed, n_p=2, n_c=2, n_u=1 + seed % 2)
        it = random_iterate(seed + 7, cl)
        main = lmi.build_main_mi(it, cl)
        m = cl.n + cl.n_inputs
        A = main[:m, :m]
        B = main[:m, m:]
        D = main[m:, m:]  # equals -P
        oracle = A - B @ np.linalg.solve(D, B.T)
        red = certify.reduced_main_mi(it, cl)
        assert np.max(np.abs(red - oracle)) <= 1e-10 * max(1.0, np.max(np.abs(oracle)))


def test_valid_certificate(tiny_loop, tiny_certificate):
    cert = tiny_certificate
    assert cert.valid and not cert.violations
    assert cert.residuals["lambda_min_P"] > 0.0
    assert cert.residuals["lambda_max_main"] < 0.0
    assert cert.residuals["level"] <= cert.margins.eig
    assert cert.residuals["lambda_max_inclusion"] <= cert.margins.eig
    assert 0.0 < cert.varrho < 1.0
    assert cert.mu == math.log1p(-cert.varrho)
    assert cert.residuals["varrho"] == cert.varrho
    # the extracted rate is maximal: the bumped matrix is tight at varrho
    # and infeasible just past it
    M_red = certify.reduced_main_mi(cert, tiny_loop)
    bump = np.zeros_like(M_red)
    n = tiny_loop.n
    bump[:n, :n] = cert.P
    assert _eigmax(M_red + cert.varrho * bump) <= 0.0
    assert _eigmax(M_red + (cert.varrho * 1.01 + 1e-12) * bump) > 0.0
    assert certify.inclusion_check(cert)


def test_tampering_is_reported_not_raised(tiny_loop, tiny_certificate):
    cert = tiny_certificate

    def conditions(**changes):
        it = lmi.SynthesisIterate(
            tau=changes.get("tau", cert.tau),
            P=changes.get("P", cert.P),
            E=cert.E,
            S1=changes.get("S1", cert.S1),
            S2=cert.S2,
            U=changes.get("U", cert.U),
        )
        out = certify.check_conditions(it, tiny_loop)
        return [v.condition for v in out.violations]

    assert "tau-range" in conditions(tau=1.5)
    assert "positive-definite-P" in conditions(P=-cert.P)
    assert "inclusion" in conditions(U=2.0 * cert.P)
    assert "level" in conditions(S1=cert.S1 + 10.0)
    bad = certify.check_conditions(
        lmi.SynthesisIterate(tau=1.5, P=cert.P, E=cert.E,
                             S1=cert.S1, S2=cert.S2, U=cert.U),
        tiny_loop,
    )
    assert not bad.valid and bad.mu is None and bad.varrho is None


def test_invalid_certificate_refuses_bounds(tiny_loop, tiny_certificate):
    broken = dataclasses.replace(
        tiny_certificate,
        violations=(certify.Violation("main-negative-definite", 1.0),),
    )
    with pytest.raises(CertificateError) as exc:
        certify.gamma_bound(broken, np.zeros(tiny_loop.n))
    assert "main-negative-definite" in str(exc.value)
    assert exc.value.report is broken
    with pytest.raises(CertificateError):
        certify.empirical_ugfta(broken, tiny_loop, np.zeros((1, tiny_loop.n)))


def test_gamma_bound_worked_examples(tiny_certificate):
    cert = tiny_certificate
    eigvals, eigvecs = np.linalg.eigh(cert.P)
    v = eigvecs[:, 0]
    lam = eigvals[0]

    def state_with_value(V):
        return math.sqrt(V / lam) * v

    assert certify.gamma_bound(cert, np.zeros_like(v)) == 0
    assert certify.gamma_bound(cert, state_with_value(0.5)) == 0
    # ln(V/c)/(-mu) lands exactly on 2 and strictly inside (2, 3)
    assert certify.gamma_bound(cert, state_with_value(math.exp(-2.0 * cert.mu))) == 2
    assert certify.gamma_bound(cert, state_with_value(math.exp(-2.5 * cert.mu))) == 3
    # a larger target level can only shorten entry
    x = state_with_value(math.exp(-2.5 * cert.mu))
    assert certify.gamma_bound(cert, x, c=2.0) <= certify.gamma_bound(cert, x)


def test_time_bound(tiny_certificate):
    cert = tiny_certificate
    eigs = np.linalg.eigvalsh(cert.P)
    r = 2.0
    v_ub = eigs[-1] * (1.0 / math.sqrt(eigs[0]) + r) ** 2
    expected = math.ceil(math.log(v_ub) / (-cert.mu) - 1e-12 * abs(math.log(v_ub) / cert.mu))
    assert certify.time_bound(cert, r) == expected
    bounds = [certify.time_bound(cert, radius) for radius in (0.5, 1.0, 2.0, 4.0)]
    assert all(b1 <= b2 for b1, b2 in zip(bounds, bounds[1:]))
    assert all(b >= 0 for b in bounds)


def test_sample_states(tiny_certificate):
    cert = tiny_certificate
    X = certify.sample_states(cert, 200, v_min=1.0, v_max=50.0, seed=11)
    assert X.shape == (200, cert.P.shape[0])
    V = np.einsum("ij,jk,ik->i", X, cert.P, X)
    assert np.all(V >= 1.0 - 1e-9) and np.all(V <= 50.0 + 1e-9)
    again = certify.sample_states(cert, 200, v_min=1.0, v_max=50.0, seed=11)
    assert np.array_equal(X, again)
    other = certify.sample_states(cert, 200, v_min=1.0, v_max=50.0, seed=12)
    assert not np.array_equal(X, other)


def test_empirical_replay_holds(tiny_loop, tiny_certificate):
    cert = tiny_certificate
    # keep the certified entry horizon small regardless of how slow the
    # extracted rate is
    v_hi = min(2.0, math.exp(-200.0 * cert.mu))
    v_lo = 1.0 + 0.1 * (v_hi - 1.0)
    states = certify.sample_states(cert, 20, v_min=v_lo, v_max=v_hi, seed=3)
    report = certify.empirical_ugfta(cert, tiny_loop, states, extra_steps=20)
    assert report.ok
    assert report.samples == 20
    assert report.steps_checked >= 20 * 20
    assert report.worst_decrease_residual <= 0.0
    assert report.worst_invariance_residual <= 0.0


def test_empirical_replay_inside_attractor(tiny_loop, tiny_certificate):
    report = certify.empirical_ugfta(
        tiny_certificate, tiny_loop, np.zeros((3, tiny_loop.n)), extra_steps=10
    )
    assert report.ok and report.samples == 3


def test_ellipsoid_set(tiny_certificate):
    cert = tiny_certificate
    att = cert.attractor()
    reg = cert.region()
    assert np.array_equal(att.Q, cert.P) and att.level == 1.0
    assert np.array_equal(reg.Q, cert.U) and reg.level == 1.0
    rng = np.random.default_rng(5)
    X = rng.standard_normal((20, cert.P.shape[0]))
    batch = att.value(X)
    singles = np.array([att.value(x) for x in X])
    assert np.allclose(batch, singles, rtol=1e-12)
    E = certify.EllipsoidSet(np.eye(2), level=4.0)
    assert E.contains([2.0, 0.0])
    assert not E.contains([2.1, 0.0])
    assert E.contains([2.1, 0.0], rel_margin=0.2)
    assert list(E.contains(np.array([[1.0, 0.0], [3.0, 0.0]]))) == [True, False]
