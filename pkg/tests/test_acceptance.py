"""Top-level acceptance suite.

Every test here checks one numbered end-to-end property of the package and
reports a single PASS/FAIL line through the ``acceptance`` fixture, which the
terminal summary collects.  Tolerances and budgets are stated inline; they
are deliberate contracts, not tuning targets, so do not loosen them to make
a failing criterion pass.
"""

import json
import math
import subprocess
import sys
import time
import warnings
from functools import partial

import numpy as np
import pytest

from oscov.estimate import fit_full, fit_marginals, space_time_variogram, wls_objective
from oscov.gp import SpaceTimeDataset, SpaceTimePoint, gram, predict
from oscov.kernel_core import (
    Dispersion,
    KernelModel,
    LdhoParams,
    OuParams,
    Regime,
    damped_frequency,
    interaction_ratio,
    ldho_kernel,
    marginal_spatial,
    marginal_temporal,
    ou_kernel,
    vlrt_kernel,
)
from oscov.presets import available_presets, preset_model
from oscov.simulate import GridSpec, simulate_field
from oscov.spectral import hankel_ift_oracle, ode_residual, temporal_fourier_mode

from conftest import variant_params


def _kernel_fn(p):
    return ou_kernel if isinstance(p, OuParams) else ldho_kernel


def test_acceptance_1_hole_depth_and_location(acceptance):
    """Normalized kernel minimum of the oscillatory 2d preset.

    Pinned target: depth -0.7853 +- 1e-3 at (r, tau) = (0, 0.7538) +- 5e-3,
    found by a coarse grid plus two local refinements, in under a second.
    """
    m = preset_model("fig3")
    c00 = m.variance()
    t0 = time.perf_counter()
    lo_r, hi_r, lo_t, hi_t = 0.0, 3.0, 0.0, 3.0
    for _ in range(3):
        rs = np.linspace(lo_r, hi_r, 121)
        ts = np.linspace(lo_t, hi_t, 121)
        rg, tg = np.meshgrid(rs, ts)
        vals = np.asarray(m.covariance(rg, tg), dtype=float) / c00
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        r_star, t_star, v_star = float(rs[j]), float(ts[i]), float(vals[i, j])
        dr, dt = rs[1] - rs[0], ts[1] - ts[0]
        lo_r, hi_r = max(0.0, r_star - 2 * dr), r_star + 2 * dr
        lo_t, hi_t = max(0.0, t_star - 2 * dt), t_star + 2 * dt
    elapsed = time.perf_counter() - t0
    ok = (
        abs(v_star - (-0.7853)) <= 1e-3
        and abs(r_star - 0.0) <= 5e-3
        and abs(t_star - 0.7538) <= 5e-3
        and elapsed < 1.0
    )
    acceptance(
        1,
        ok,
        f"hole {v_star:.4f} at (r={r_star:.4f}, tau={t_star:.4f}) vs pinned "
        f"-0.7853 at (0, 0.7538) [{elapsed * 1e3:.0f} ms]",
    )


def test_acceptance_2_closed_forms_match_quadrature_oracle(acceptance):
    """All eight variants, d in {1, 2, 3}, 25 random lags each.

    The closed forms must agree with the adaptive Hankel-quadrature oracle
    within max(1e-6 C(0,0), 5x the oracle's own error estimate), within two
    minutes overall.
    """
    worst = 0.0
    t0 = time.perf_counter()
    for d in (1, 2, 3):
        for idx, (name, p) in enumerate(variant_params(d)):
            rng = np.random.default_rng(1000 * d + idx)
            kern = _kernel_fn(p)
            mode = partial(temporal_fourier_mode, p)
            c00 = float(kern(p, 0.0, 0.0))
            for r, tau in zip(rng.uniform(0, 5, 25), rng.uniform(0, 5, 25)):
                ref, err = hankel_ift_oracle(mode, d, float(r), float(tau))
                val = float(kern(p, float(r), float(tau)))
                tol = max(1e-6 * c00, 5.0 * err)
                worst = max(worst, abs(val - ref) / tol)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1.0 and elapsed < 120.0
    acceptance(
        2,
        ok,
        f"600 lags across 8 variants x 3 dims, worst diff/tol {worst:.3f} "
        f"[{elapsed:.1f} s]",
    )


def test_acceptance_3_temporal_kernels_solve_the_generative_ode(acceptance):
    """Fourth-order finite-difference residual decays as h^2.

    Convergence order is measured from residuals at h = 1e-2, 5e-3, 2.5e-3
    and must be 2.0 +- 0.2 in every damping regime.
    """
    cases = (
        ("under", LdhoParams(1.0, 1.0, 4.5, 1.0, 0.1, Dispersion.QUADRATIC, 2)),
        ("critical", LdhoParams(1.0, 0.125, 4.0, 1.0, 0.1, Dispersion.QUADRATIC, 2)),
        (
            "over",
            LdhoParams.from_damped_frequency(
                c0=1.0,
                tau_c=0.1,
                omega_d=2.0,
                regime=Regime.OVERDAMPED,
                epsilon=1.0,
                interaction=0.1,
                dispersion=Dispersion.QUADRATIC,
                dim=2,
            ),
        ),
    )
    tau = 0.4
    orders = {}
    for name, p in cases:
        res = [abs(ode_residual(p, tau, h)) for h in (1e-2, 5e-3, 2.5e-3)]
        pair = [math.log2(res[k] / res[k + 1]) for k in range(2)]
        orders[name] = sum(pair) / len(pair)
    ok = all(abs(o - 2.0) <= 0.2 for o in orders.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in orders.items())
    acceptance(3, ok, f"measured convergence orders: {detail}")


def test_acceptance_4_preset_gram_matrices_are_psd(acceptance):
    """300-point Gram matrices: min eigenvalue >= -1e-8 trace per preset."""
    worst_name, worst_ratio = "", np.inf
    for k, name in enumerate(available_presets()):
        m = preset_model(name)
        rng = np.random.default_rng(404 + k)
        pts = [
            SpaceTimePoint(tuple(rng.uniform(0.0, 6.0, m.dim)), float(rng.uniform(0.0, 6.0)))
            for _ in range(300)
        ]
        mat = gram(m, pts).matrix
        ratio = float(np.linalg.eigvalsh(mat).min()) / float(np.trace(mat))
        if ratio < worst_ratio:
            worst_name, worst_ratio = name, ratio
    ok = worst_ratio >= -1e-8
    acceptance(
        4, ok, f"worst min-eig/trace {worst_ratio:.3e} ({worst_name}), floor -1e-8"
    )


def test_acceptance_5_interaction_ratio_flags_separability(acceptance):
    """Q is identically 1 without interaction and straddles 1 with it."""
    separable = (
        ("quad b=0", LdhoParams(2.0, 3.0, 1.5 * math.pi, 1.0, 0.0, Dispersion.QUADRATIC, 2), 0.2),
        ("lin xi=0", LdhoParams(2.0, 3.0, 1.5 * math.pi, 1.0, 0.0, Dispersion.LINEAR, 2), 0.2),
        ("ou-quad scale=0", OuParams(1.0, 0.8, 0.5, 0.0, 8.0, Dispersion.QUADRATIC, 2), 3.0),
        ("ou-lin scale=0", OuParams(1.0, 0.8, 0.5, 0.0, 8.0, Dispersion.LINEAR, 2), 3.0),
    )
    worst = 0.0
    for name, p, tau_top in separable:
        m = KernelModel(params=p, nugget=0.0)
        rs = np.linspace(0.0, 4.0, 20)
        ts = np.linspace(0.0, tau_top, 20)
        q = np.asarray(interaction_ratio(m, rs[None, :], ts[:, None]), dtype=float)
        worst = max(worst, float(np.max(np.abs(q - 1.0))))

    coupled = LdhoParams.from_damped_frequency(
        c0=1.0,
        tau_c=2.0,
        omega_d=1.5 * math.pi,
        regime=Regime.UNDERDAMPED,
        epsilon=3.0,
        interaction=0.4,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = np.asarray(
            interaction_ratio(
                KernelModel(params=coupled, nugget=0.0),
                np.linspace(0.0, 4.0, 20)[None, :],
                np.linspace(0.0, 2.0, 20)[:, None],
            ),
            dtype=float,
        )
    finite = q[np.isfinite(q)]
    ok = worst <= 1e-10 and finite.max() > 1.0 and finite.min() < 1.0
    acceptance(
        5,
        ok,
        f"separable max |Q-1| {worst:.2e} (tol 1e-10); coupled Q spans "
        f"[{finite.min():.2f}, {finite.max():.2f}]",
    )


def test_acceptance_6_regime_and_relaxation_limits(acceptance):
    """(a) overdamped -> critical as the frequency gap closes;
    (b) underdamped -> quasi-periodic closed form as relaxation diverges."""
    rg, tg = np.meshgrid(np.linspace(0.0, 4.0, 10), np.linspace(0.0, 3.0, 10))

    over = LdhoParams.from_damped_frequency(
        c0=1.5,
        tau_c=2.0,
        omega_d=1e-8,
        regime=Regime.OVERDAMPED,
        epsilon=1.5,
        interaction=0.7,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    crit = LdhoParams.from_damped_frequency(
        c0=1.5,
        tau_c=2.0,
        omega_d=0.0,
        regime=Regime.CRITICAL,
        epsilon=1.5,
        interaction=0.7,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    c00 = float(ldho_kernel(crit, 0.0, 0.0))
    sup_a = float(
        np.max(np.abs(ldho_kernel(over, rg, tg) - ldho_kernel(crit, rg, tg)))
    ) / c00

    slow = LdhoParams(2.0, 1e6, 1.5 * math.pi, 1.0, 0.4, Dispersion.QUADRATIC, 2)
    v0 = float(ldho_kernel(slow, 0.0, 0.0))
    sup_b = float(
        np.max(np.abs(ldho_kernel(slow, rg, tg) - vlrt_kernel(slow, rg, tg)))
    ) / v0
    ok = sup_a <= 1e-5 and sup_b <= 1e-4
    acceptance(
        6,
        ok,
        f"near-critical sup diff {sup_a:.2e} (tol 1e-5); "
        f"slow-relaxation sup diff {sup_b:.2e} (tol 1e-4)",
    )


def test_acceptance_7_simulate_estimate_fit_closed_loop(acceptance):
    """Five independent realizations, two-stage fit, 25% recovery budget.

    The joint-stage objective must strictly improve on the marginal-stage
    model for every seed, and the whole loop must finish within ten minutes.
    """
    truth_nugget = 0.5
    truth = LdhoParams.from_damped_frequency(
        c0=50.0,
        tau_c=2.0,
        omega_d=1.2,
        regime=Regime.UNDERDAMPED,
        epsilon=2.0,
        interaction=0.5,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    model_true = KernelModel(params=truth, nugget=truth_nugget)
    jr = np.arange(0.0, 7.0)
    jt = 0.4 * np.arange(0, 26, 2)

    t0 = time.perf_counter()
    errors: dict[str, list[float]] = {
        k: [] for k in ("c0", "tau_c", "omega_d", "epsilon", "interaction", "nugget")
    }
    improved = []
    for seed in (101, 102, 103, 104, 105):
        g = GridSpec(ns=(64, 64), ds=(1.0, 1.0), nt=128, dt=0.4, seed=seed)
        f = simulate_field(model_true, g)
        res_m = fit_marginals(
            f, r_bins=np.arange(1.0, 9.0), tau_bins=0.4 * np.arange(1, 41)
        )
        res_f = fit_full(f, theta0=res_m, r_bins=jr, tau_bins=jt)
        v_joint = space_time_variogram(f, r_bins=jr, tau_bins=jt)
        improved.append(
            float(wls_objective(res_f.model, v_joint))
            < float(wls_objective(res_m.model, v_joint))
        )
        p = res_f.model.params
        errors["c0"].append(abs(p.c0 - truth.c0) / truth.c0)
        errors["tau_c"].append(abs(p.tau_c - truth.tau_c) / truth.tau_c)
        errors["omega_d"].append(abs(damped_frequency(p) - 1.2) / 1.2)
        errors["epsilon"].append(abs(p.epsilon - truth.epsilon) / truth.epsilon)
        errors["interaction"].append(
            abs(p.interaction - truth.interaction) / truth.interaction
        )
        errors["nugget"].append(abs(res_f.model.nugget - truth_nugget) / truth_nugget)
    elapsed = time.perf_counter() - t0

    mean_err = {k: float(np.mean(v)) for k, v in errors.items()}
    ok = all(e <= 0.25 for e in mean_err.values()) and all(improved) and elapsed < 600.0
    detail = ", ".join(f"{k} {100 * v:.1f}%" for k, v in mean_err.items())
    acceptance(
        7,
        ok,
        f"seed-averaged errors: {detail}; joint objective improved "
        f"{sum(improved)}/5 [{elapsed:.0f} s]",
    )


def test_acceptance_8_prediction_ratio_identity(acceptance):
    """Conditional-mean fluctuation ratio equals the interaction ratio.

    Fifty single-observation configurations over the full variant roster;
    lags are rejection-sampled so both marginals stay above 5% of the
    variance, keeping the ratio well conditioned.  Tolerance 1e-10.
    """
    variants = variant_params(2)
    rng = np.random.default_rng(808)
    worst = 0.0
    accepted = 0
    while accepted < 50:
        name, p = variants[accepted % len(variants)]
        kern = _kernel_fn(p)
        c00 = float(kern(p, 0.0, 0.0))
        s_obs = rng.uniform(0.0, 4.0, 2)
        t_obs = float(rng.uniform(0.0, 4.0))
        s_query = rng.uniform(0.0, 4.0, 2)
        t_query = float(rng.uniform(0.0, 4.0))
        r = float(np.hypot(*(s_query - s_obs)))
        tau = abs(t_query - t_obs)
        if abs(float(marginal_spatial(p, r))) < 0.05 * c00:
            continue
        if abs(float(marginal_temporal(p, tau))) < 0.05 * c00:
            continue
        accepted += 1

        mean = float(rng.uniform(-1.0, 1.0))
        z_obs = float(rng.uniform(-2.0, 2.0))
        m_full = KernelModel(params=p, nugget=float(rng.uniform(0.0, 0.2)) * c00)
        m_sur = KernelModel.surrogate_of(m_full)
        data = SpaceTimeDataset.from_arrays(
            s_obs[None, :], [t_obs], [z_obs], mean=mean
        )
        query = [SpaceTimePoint(tuple(s_query), t_query)]
        mu_full, _ = predict(m_full, data, query)
        mu_sur, _ = predict(m_sur, data, query)
        ratio = (float(mu_full[0]) - mean) / (float(mu_sur[0]) - mean)
        q = float(interaction_ratio(m_full, r, tau))
        worst = max(worst, abs(ratio - q))
    ok = worst <= 1e-10
    acceptance(8, ok, f"50 configurations, worst |ratio - Q| {worst:.2e} (tol 1e-10)")


def test_acceptance_9_reruns_are_byte_identical(acceptance, tmp_path):
    """Identical configuration and seed reproduce simulate and fit outputs
    byte for byte, including the JSON sidecars."""

    def run_cli(*args):
        return subprocess.run(
            [sys.executable, "-m", "oscov.cli", *[str(a) for a in args]],
            capture_output=True,
            text=True,
        )

    p = LdhoParams.from_damped_frequency(
        c0=1.0,
        tau_c=1.0,
        omega_d=2.0,
        regime=Regime.UNDERDAMPED,
        epsilon=1.0,
        interaction=0.3,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    model_path = tmp_path / "model.json"
    model_path.write_text(KernelModel(params=p, nugget=0.1).to_json())

    sim_args = (
        "simulate", "--model", model_path, "--ns", "16,16", "--ds", "1.0,1.0",
        "--nt", "32", "--dt", "0.25", "--seed", "11", "--prefix", "field",
    )
    fit_args = (
        "fit", "--stage", "marginals", "--r-bins", "1,2,3",
        "--tau-bins", "0.25,0.5,0.75,1.0,1.25,1.5,1.75,2.0",
    )
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        res = run_cli(*sim_args, "--out", out)
        assert res.returncode == 0, res.stderr
        res = run_cli(*fit_args, "--field", out / "field.bin", "--out", out)
        assert res.returncode == 0, res.stderr
        outs.append(out)
    a, b = outs
    same = {
        "field.bin": (a / "field.bin").read_bytes() == (b / "field.bin").read_bytes(),
        "field.json": (a / "field.json").read_bytes() == (b / "field.json").read_bytes(),
        "fit.json": (a / "fit.json").read_bytes() == (b / "fit.json").read_bytes(),
    }
    ok = all(same.values())
    acceptance(
        9,
        ok,
        "byte-identical reruns: "
        + ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()),
    )
