import numpy as np
import pytest
from numpy.testing import assert_allclose

from logsense_ks.grid import Field, Grid
from logsense_ks.oracles import (
    EnsembleSpec,
    OdeComparison,
    check_power_identities,
    check_square_completion,
    coth_bound,
    log_poincare_ratio,
    mean_poincare_delta_trend,
    mean_poincare_ratio,
    synth_positive_field,
    verify_ode_comparison,
    verify_ode_comparison_batch,
)
from logsense_ks.params import q_bounds

# frozen reference: coth_bound(1, 4, 1) = 2 cosh(2)/sinh(2)
COTH_BOUND_1_4_1 = 2.0746294414550963


# power identities ------------------------------------------------------------------

def test_power_identities_constant_field():
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    w = Field(g, np.full(g.shape, 2.5), strictly_positive=True)
    res_half, res_full = check_power_identities(w, r=1.7)
    assert res_half == 0.0
    assert res_full == 0.0


def test_power_identity_half_exact_at_r_two():
    # r = 2 collapses the half-power identity to w lap w = w lap w
    g = Grid(cells=[48], extents=[1.0])
    (x,) = g.meshgrid()
    w = Field(g, np.exp(x), strictly_positive=True)
    res_half, res_full = check_power_identities(w, r=2.0)
    assert res_half == 0.0
    assert res_full > 0.0


def test_power_identity_refinement_exponential():
    residuals = []
    for N in (32, 64, 128):
        g = Grid(cells=[N], extents=[1.0])
        (x,) = g.meshgrid()
        w = Field(g, np.exp(x), strictly_positive=True)
        residuals.append(check_power_identities(w, r=2.0)[1])
    orders = [np.log2(a / b) for a, b in zip(residuals, residuals[1:])]
    assert min(orders) >= 1.9


@pytest.mark.parametrize("r", [1.3, 2.7])
def test_power_identity_refinement_cosine(r):
    halves, fulls = [], []
    for N in (32, 64, 128):
        g = Grid(cells=[N, N], extents=[1.0, 1.0])
        X, Y = g.meshgrid()
        w = Field(g, 1.5 + 0.5 * np.cos(np.pi * X) * np.cos(np.pi * Y),
                  strictly_positive=True)
        rh, rf = check_power_identities(w, r)
        halves.append(rh)
        fulls.append(rf)
    for seq in (halves, fulls):
        order = np.log2(seq[-2] / seq[-1])
        assert order >= 1.9


def test_power_identity_validation():
    g = Grid(cells=[8], extents=[1.0])
    w = Field(g, np.ones(8), strictly_positive=True)
    with pytest.raises(ValueError):
        check_power_identities(w, r=0.0)
    flat = Field(g, np.zeros(8))
    with pytest.raises(ValueError):
        check_power_identities(flat, r=1.5)


# square completion ------------------------------------------------------------------

def grids_for_trials():
    return [
        Grid(cells=[64], extents=[1.0]),
        Grid(cells=[16, 16], extents=[1.0, 2.0]),
        Grid(cells=[8, 8, 8], extents=[1.0, 1.0, 1.0]),
    ]


def test_square_completion_roundoff_across_grids():
    worst = 0.0
    for gi, g in enumerate(grids_for_trials()):
        for trial in range(60):
            rng = np.random.default_rng([11, gi, trial])
            u = Field(g, synth_positive_field(g, rng, 3, (0.2, 1.0), 0.05),
                      strictly_positive=True)
            v = Field(g, synth_positive_field(g, rng, 3, (0.2, 1.0), 0.05),
                      strictly_positive=True)
            chi = float(rng.uniform(0.3, 3.0))
            p = float(rng.uniform(0.05, 0.95) * min(1.0, 1.0 / chi**2))
            qm, qp = q_bounds(p, chi)
            q = float(rng.uniform(qm + 1e-6, qp - 1e-6)) if qp - qm > 2e-6 \
                else 0.5 * (qm + qp)
            rep = check_square_completion(u, v, p, q, chi)
            worst = max(worst, rep.residual / rep.scale)
    assert worst <= 1e-10


def test_square_completion_constant_u_reduces():
    # constant u kills B = v^{q/2} grad u^{p/2}; both arrangements collapse
    g = Grid(cells=[24, 24], extents=[1.0, 1.0])
    rng = np.random.default_rng(3)
    u = Field(g, np.full(g.shape, 1.3), strictly_positive=True)
    v = Field(g, synth_positive_field(g, rng, 3, (0.2, 1.0), 0.05),
              strictly_positive=True)
    rep = check_square_completion(u, v, p=0.5, q=0.25, chi=1.0)
    assert rep.residual == 0.0


def test_square_completion_at_window_endpoint():
    # q = q_plus zeroes c1; the identity must still close to round-off
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    rng = np.random.default_rng(4)
    u = Field(g, synth_positive_field(g, rng, 3, (0.2, 1.0), 0.05),
              strictly_positive=True)
    v = Field(g, synth_positive_field(g, rng, 3, (0.2, 1.0), 0.05),
              strictly_positive=True)
    p, chi = 0.5, 1.0
    _, qp = q_bounds(p, chi)
    rep = check_square_completion(u, v, p, qp, chi)
    assert rep.residual <= 1e-10 * rep.scale


def test_square_completion_rejects_nonpositive():
    g = Grid(cells=[8], extents=[1.0])
    pos = Field(g, np.ones(8), strictly_positive=True)
    zero = Field(g, np.zeros(8))
    with pytest.raises(ValueError):
        check_square_completion(zero, pos, 0.5, 0.25, 1.0)


# Riccati comparison -----------------------------------------------------------------

def test_coth_bound_frozen_value():
    assert coth_bound(1.0, 4.0, 1.0) == pytest.approx(COTH_BOUND_1_4_1,
                                                      abs=1e-12)
    # a = b = 1 is plain coth(t)
    assert coth_bound(1.0, 1.0, 0.7) == pytest.approx(
        np.cosh(0.7) / np.sinh(0.7), rel=1e-14)
    # long-time limit is the equilibrium sqrt(b/a)
    assert coth_bound(4.0, 1.0, 50.0) == pytest.approx(0.5, abs=1e-12)


def test_coth_bound_domain():
    for bad in ((0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)):
        with pytest.raises(ValueError):
            coth_bound(*bad)


def test_ode_comparison_spec_validation():
    with pytest.raises(ValueError):
        OdeComparison(a=0.0, b=1.0, y0=1.0, T=1.0)
    with pytest.raises(ValueError):
        OdeComparison(a=1.0, b=1.0, y0=1.0, T=0.0)


def test_ode_comparison_single_case():
    rep = verify_ode_comparison(OdeComparison(a=1.0, b=4.0, y0=1000.0, T=1.0))
    assert rep.passed
    # equilibrium start and both approach directions are always exercised
    assert len(rep.y0_variants) == 3
    assert rep.max_excess <= rep.tolerance


def test_ode_comparison_equilibrium_stays_below():
    rep = verify_ode_comparison(OdeComparison(a=2.0, b=2.0, y0=1.0, T=2.0))
    assert rep.passed
    assert rep.max_excess < 0.0  # coth factor keeps the bound strictly above


def test_ode_comparison_random_batch():
    rng = np.random.default_rng(17)
    specs = [OdeComparison(a=float(rng.uniform(0.1, 10.0)),
                           b=float(rng.uniform(0.1, 10.0)),
                           y0=float(rng.uniform(0.1, 10.0)),
                           T=1.0)
             for _ in range(100)]
    reports = verify_ode_comparison_batch(specs, substeps=2 * 10**4)
    assert all(r.passed for r in reports)
    d = reports[0].as_dict()
    assert {"a", "b", "y0", "T", "passed", "max_excess"} <= set(d)


# random-field ensembles -------------------------------------------------------------

def test_ensemble_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(count=0)
    with pytest.raises(ValueError):
        EnsembleSpec(cutoff=0)
    with pytest.raises(ValueError):
        EnsembleSpec(floor=0.0)
    with pytest.raises(ValueError):
        EnsembleSpec(delta=-1.0)
    with pytest.raises(ValueError):
        EnsembleSpec(amplitude=(1.0, 0.2))
    with pytest.raises(ValueError):
        EnsembleSpec(b_selector="entropy")


def test_synth_field_positive_and_deterministic():
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    a = synth_positive_field(g, np.random.default_rng(5), 4, (0.2, 1.0), 0.05)
    b = synth_positive_field(g, np.random.default_rng(5), 4, (0.2, 1.0), 0.05)
    c = synth_positive_field(g, np.random.default_rng(6), 4, (0.2, 1.0), 0.05)
    assert a.min() > 0.05
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_log_poincare_trivial_levels():
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    spec = EnsembleSpec(count=3, seed=0, delta=0.5)
    at_level = log_poincare_ratio(spec, g,
                                  field_source=lambda i: np.full(g.shape, 0.5))
    assert at_level.excluded == 3
    assert at_level.degenerate
    assert np.isnan(at_level.max_ratio)
    above = log_poincare_ratio(spec, g,
                               field_source=lambda i: np.full(g.shape, 1.0))
    assert above.alternative == 3
    assert above.included == 0
    with pytest.raises(ValueError):
        log_poincare_ratio(spec, g, field_source=lambda i: np.zeros(g.shape))


def test_log_poincare_branches_partition_ensemble():
    g = Grid(cells=[32, 32], extents=[1.0, 1.0])
    spec = EnsembleSpec(count=200, seed=1)
    rep = log_poincare_ratio(spec, g)
    assert rep.included + rep.alternative + rep.excluded == 200
    assert rep.included > 0  # the global log-offset populates both branches
    assert rep.alternative > 0
    assert np.isfinite(rep.max_ratio) and rep.max_ratio > 0.0


def test_log_poincare_stability_under_doubling():
    g = Grid(cells=[32, 32], extents=[1.0, 1.0])
    base = log_poincare_ratio(EnsembleSpec(count=1000, seed=1), g, threads=4)
    double = log_poincare_ratio(EnsembleSpec(count=2000, seed=1), g, threads=4)
    assert not base.degenerate
    change = abs(double.max_ratio - base.max_ratio) / base.max_ratio
    assert change <= 0.2


def test_log_poincare_eta_guard():
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    with pytest.raises(ValueError):
        log_poincare_ratio(EnsembleSpec(eta=2.0), g)


def test_log_poincare_determinism_and_threading():
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    spec = EnsembleSpec(count=64, seed=9)
    serial = log_poincare_ratio(spec, g)
    again = log_poincare_ratio(spec, g)
    threaded = log_poincare_ratio(spec, g, threads=4)
    assert serial.as_dict() == again.as_dict()
    assert serial.as_dict() == threaded.as_dict()


def test_mean_poincare_closed_form_linear():
    # u = x on [0, 1], B = left half: ratios 5/16 (p = 1), sqrt(7/48) (p = 2)
    g = Grid(cells=[64], extents=[1.0])
    (x,) = g.meshgrid()
    spec = EnsembleSpec(count=1, seed=0, delta=0.5, b_selector="threshold")
    rep1 = mean_poincare_ratio(spec, g, p=1.0, field_source=lambda i: x)
    assert rep1.max_ratio == pytest.approx(5.0 / 16.0, rel=0.05)
    rep2 = mean_poincare_ratio(spec, g, p=2.0, field_source=lambda i: x)
    assert rep2.max_ratio == pytest.approx(np.sqrt(7.0 / 48.0), rel=0.05)


def test_mean_poincare_validation():
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    spec = EnsembleSpec(count=4, seed=0, delta=0.25)
    with pytest.raises(ValueError):
        mean_poincare_ratio(spec, g, p=0.5)
    with pytest.raises(ValueError):
        mean_poincare_ratio(EnsembleSpec(count=4, delta=2.0), g, p=1.0)


def test_mean_poincare_selectors_and_riesz():
    g = Grid(cells=[24, 24], extents=[1.0, 1.0])
    spec = EnsembleSpec(count=40, seed=2, delta=0.25)
    thresh = mean_poincare_ratio(spec, g, p=2.0)
    assert thresh.count == 40
    assert 0.0 < thresh.mean_ratio <= thresh.max_ratio

    rand_spec = EnsembleSpec(count=40, seed=2, delta=0.25, b_selector="random")
    rand = mean_poincare_ratio(rand_spec, g, p=2.0)
    assert rand.max_ratio > 0.0
    assert rand.b_selector == "random"

    probed = mean_poincare_ratio(spec, g, p=2.0, include_riesz=True,
                                 riesz_probes=20)
    assert probed.riesz["passed"]
    assert probed.riesz["fitted_constant"] > 0.0
    assert probed.riesz["headroom"] == 1.5
    assert "riesz" in probed.as_dict()


def test_mean_poincare_delta_trend_grows():
    g = Grid(cells=[16, 16], extents=[1.0, 1.0])
    spec = EnsembleSpec(count=50, seed=3)
    trend = mean_poincare_delta_trend(spec, g, p=2.0)
    ratios = [row["max_ratio"] for row in trend]
    deltas = [row["delta"] for row in trend]
    assert deltas == sorted(deltas, reverse=True)
    # smaller reference sets can only loosen the constant (small slack for ties)
    for a, b in zip(ratios, ratios[1:]):
        assert b >= a * 0.95
