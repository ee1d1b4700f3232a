"""Acceptance criteria at desk scale.

Each test prints one ``criterion N PASS|FAIL`` line (also collected in the
terminal summary) and then asserts the verdict. Criteria 7 to 9 drive the
command-line runner with the shipped configs under ``configs/desk`` and take
tens of minutes together; select them with ``-m acceptance``.
"""

import csv
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from jointred.cli import EXIT_OK, main
from jointred.config import load_config
from jointred.diagnostics import hellinger_from_log_weights, hellinger_gaussian, hellinger_grid
from jointred.experiments import state_moment_spectra
from jointred.joint import (
    JointSettings,
    log_omega_weights,
    misfit_cap,
    posterior_joint_iterate,
    upsilon_weight,
)
from jointred.laplace import LaplaceApproximation
from jointred.models import make_model, synthetic_data, toy2d_response
from jointred.param_reduce import (
    ReducedParamBasis,
    complement_prior_sample,
    estimate_expected_gnh,
    lips_from_expected_gnh,
)
from jointred.samplers import reference_full_mcmc
from jointred.state_reduce import (
    DeimInterpolant,
    PodBasis,
    build_reduced_model,
    collect_snapshots,
    deim_build,
    pod_from_snapshots,
)

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "desk"


@pytest.fixture(autouse=True)
def _no_env_overrides(monkeypatch):
    for k in list(os.environ):
        if k.startswith("JOINTRED_"):
            monkeypatch.delenv(k)


def _desk_elliptic():
    m = make_model("elliptic", dict(nx=60, ny=20, marginal_std=0.14, length_scale=3000.0))
    m, _, _ = synthetic_data(m, seed=1, snr=120)
    return m


# --- 1 --------------------------------------------------------------------------
def test_c1_linear_gaussian_exactness(acceptance_report):
    t0 = time.perf_counter()
    m = make_model("random-linear", dict(n=50, d=10, seed=3))
    m, _, _ = synthetic_data(m, seed=1, noise_std=1.0)
    J = m.jacobian
    P = m.prior.prec(np.eye(50))
    A = P + J.T @ m.noise.prec(J)
    C_exact = np.linalg.inv(A)
    x_ne = np.linalg.solve(A, P @ m.prior.mean + J.T @ m.noise.prec(m.y_obs))
    lap = LaplaceApproximation(m, optimizer={"gtol": 1e-12}).fit()
    l = lap.eigvals_.size
    cov_err = np.linalg.norm(lap.dense_cov() - C_exact) / np.linalg.norm(C_exact)
    map_err = np.linalg.norm(lap.map_point_ - x_ne) / np.linalg.norm(x_ne)
    d2 = hellinger_gaussian(lap.map_point_, lap.dense_cov(), x_ne, C_exact).value
    secs = time.perf_counter() - t0
    ok = (l == np.linalg.matrix_rank(m.hessian()) and cov_err <= 1e-8 and map_err <= 1e-6
          and d2 <= 1e-8 and secs < 10)
    detail = f"rank {l}, cov rel err {cov_err:.2e}, MAP rel err {map_err:.2e}, D2 {d2:.2e}"
    assert acceptance_report(1, "linear-Gaussian exactness", ok, detail, secs)


# --- 2 --------------------------------------------------------------------------
def test_c2_linear_spectra(acceptance_report):
    t0 = time.perf_counter()
    m = make_model("random-linear", dict(n=200, d=20, kappa0=100.0, a_L=2.0, b_L=2.0,
                                         rho0=10.0, a_pr=10.0, b_pr=4.0, seed=0))
    m, _, _ = synthetic_data(m, seed=1, noise_std=1.0)
    S = estimate_expected_gnh(m, m.prior.sample(5, seed=0), actions_per_sample=30, seed=1)
    basis = lips_from_expected_gnh(S, m.prior, 0.0, 20)
    spec = state_moment_spectra(m, basis, k=60)
    rel = {k: float(np.max(v[20:]) / v[0]) for k, v in spec.items()}
    drop = {k: float(v[20] / v[19]) for k, v in spec.items()}
    secs = time.perf_counter() - t0
    # "do not vanish": no collapse across index 20 (drop ratio far from zero)
    ok = (rel["reduced-prior"] <= 1e-8 and rel["reduced-posterior"] <= 1e-8
          and drop["prior"] >= 1e-3 and drop["posterior"] >= 1e-3 and secs < 60)
    detail = ", ".join(f"{k}: tail {rel[k]:.1e} drop {drop[k]:.1e}" for k in spec)
    assert acceptance_report(2, "linear-problem state spectra vanish beyond index 20", ok, detail, secs)


# --- 3 --------------------------------------------------------------------------
def _toy_posterior(m):
    s = m.noise_std

    def lp(X):
        X = np.atleast_2d(X)
        return -0.5 * ((toy2d_response(X[:, 0], X[:, 1]) - m.y_obs[0]) / s) ** 2 - 0.5 * np.sum(X**2, 1)

    return lp


def _toy_parameter_reduced(m, basis):
    s = m.noise_std

    def lp(X):
        X = np.atleast_2d(X)
        P = basis.project_affine(X)
        return -0.5 * ((toy2d_response(P[:, 0], P[:, 1]) - m.y_obs[0]) / s) ** 2 - 0.5 * np.sum(X**2, 1)

    return lp


def _toy_posterior_lips(m, seed=0):
    ch = reference_full_mcmc(m, steps=20000, opts={"thin": 10, "adapt_cov": True}, seed=seed)
    S = estimate_expected_gnh(m, ch.draws, actions_per_sample=2, seed=seed + 1, method="exact")
    return lips_from_expected_gnh(S, m.prior, 0.0, 2, method_tag="posterior-lips")


def test_c3_toy2d_lips(acceptance_report):
    t0 = time.perf_counter()
    box = [(-9, 9), (-9, 9)]
    m = make_model("toy2d", dict(noise_std=0.25, truth=[3.0, 3.0]))
    b = _toy_posterior_lips(m)
    ratio = b.eigvals[0] / b.eigvals[1]
    d2_r1 = hellinger_grid(_toy_posterior(m), _toy_parameter_reduced(m, b.truncate(1)), box, 900).value
    m2 = make_model("toy2d", dict(noise_std=0.25, truth=[-1.0, -2.0]))
    b2 = _toy_posterior_lips(m2)
    lap = LaplaceApproximation(m2).fit()
    d2_lap = hellinger_grid(_toy_posterior(m2), lap.score_samples, box, 900).value
    d2_r2 = hellinger_grid(_toy_posterior(m2), _toy_parameter_reduced(m2, b2), box, 900).value
    secs = time.perf_counter() - t0
    ok = ratio >= 10 and d2_r1 <= 0.05 and d2_lap > d2_r2 and secs < 60
    detail = (f"(3,3): eig ratio {ratio:.3g}, rank-1 D2 {d2_r1:.2e}; "
              f"(-1,-2): Laplace D2 {d2_lap:.3f} > rank-2 D2 {d2_r2:.2e}")
    assert acceptance_report(3, "toy-2D likelihood-informed subspace", ok, detail, secs)


# --- 4 --------------------------------------------------------------------------
def _all_priors():
    return {
        "toy2d": make_model("toy2d").prior,
        "random-linear": make_model("random-linear", dict(n=50, d=10, seed=3)).prior,
        "gomos": make_model("gomos", dict(n_alts=20, n_gas=2, n_nu=100)).prior,
        "elliptic": make_model("elliptic", dict(nx=60, ny=20, marginal_std=0.14,
                                                length_scale=3000.0)).prior,
    }


def test_c4_projector_properties(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = {"idempotence": 0.0, "orthogonality": 0.0, "duality": 0.0, "complement": 0.0}
    count = 0
    for name, prior in _all_priors().items():
        n = prior.dim
        for trial in range(100):
            r = int(rng.integers(1, min(n, 10) + 1))
            Q, _ = np.linalg.qr(rng.standard_normal((n, r)))
            b = ReducedParamBasis(prior.factor.L(Q), prior)
            V = rng.standard_normal((n, 5))
            PV = b.project(V.T).T
            scale = max(1.0, np.abs(PV).max())
            worst["idempotence"] = max(worst["idempotence"],
                                       np.abs(b.project(PV.T).T - PV).max() / scale)
            # Pi Gamma = Gamma Pi^T, tested on vectors
            GV = prior.cov(V)
            lhs = b.project(GV.T).T
            rhs = prior.cov(b.xi @ (b.phi.T @ V))
            worst["orthogonality"] = max(worst["orthogonality"],
                                         np.abs(lhs - rhs).max() / max(1.0, np.abs(rhs).max()))
            worst["duality"] = max(worst["duality"], np.abs(b.xi.T @ b.phi - np.eye(r)).max())
            comp = complement_prior_sample(b, rng_seed=trial, count=4)
            worst["complement"] = max(worst["complement"],
                                      np.abs(b.reduce(comp)).max() / max(1.0, np.abs(comp).max()))
            count += 1
    secs = time.perf_counter() - t0
    ok = all(v <= 1e-8 for v in worst.values()) and secs < 30
    detail = f"{count} bases, " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert acceptance_report(4, "projector and prior-factorization properties", ok, detail, secs)


# --- 5 --------------------------------------------------------------------------
def test_c5_deim_pod_completeness(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    Q, _ = np.linalg.qr(rng.standard_normal((300, 12)))
    interp = deim_build(Q)
    F = Q @ rng.standard_normal((12, 20))
    deim_err = np.abs(interp.apply(F) - F).max() / np.abs(F).max()

    lin = make_model("random-linear", dict(n=50, d=10, seed=3))
    lin, _, _ = synthetic_data(lin, seed=1, noise_std=1.0)
    pb = ReducedParamBasis(lin.prior.factor.L(np.eye(50)), lin.prior)
    rom = build_reduced_model(lin, pb, PodBasis(np.eye(lin.state_dim), np.ones(lin.state_dim)))
    X = lin.prior.sample(5, seed=2)
    lin_err = max(abs(rom.misfit(pb.reduce(x)) - lin.misfit(x)) / lin.misfit(x) for x in X)

    ell = _desk_elliptic()
    n, ns = ell.param_dim, ell.state_dim
    pb = ReducedParamBasis(ell.prior.factor.L(np.eye(n)), ell.prior)
    rom = build_reduced_model(ell, pb, PodBasis(np.eye(ns), np.ones(ns)),
                              DeimInterpolant(np.eye(n), np.arange(n)))
    X = ell.prior.sample(3, seed=3)
    ell_err = 0.0
    for x in X:
        y_full = ell.forward(x)
        y_rom, _ = rom.evaluate(pb.reduce(x))
        ell_err = max(ell_err, np.abs(y_rom - y_full).max() / np.abs(y_full).max(),
                      abs(rom.misfit(pb.reduce(x)) - ell.misfit(x)) / ell.misfit(x))

    snaps = collect_snapshots(ell, None, ell.prior.sample(200, seed=4))
    errs = [pod_from_snapshots(snaps.states, dim=s).projection_error(snaps.states) for s in range(1, 41)]
    monotone = bool(np.all(np.diff(errs) <= 1e-12))
    deim_ell = deim_build(pod_from_snapshots(np.exp(snaps.params.T), dim=30).vectors)
    Fe = deim_ell.basis @ rng.standard_normal((30, 5))
    deim_err = max(deim_err, np.abs(deim_ell.apply(Fe) - Fe).max() / np.abs(Fe).max())
    secs = time.perf_counter() - t0
    ok = deim_err <= 1e-10 and monotone and lin_err <= 1e-8 and ell_err <= 1e-8 and secs < 60
    detail = (f"DEIM span err {deim_err:.1e}, POD monotone {monotone} (s=1..40, err {errs[0]:.2e}->{errs[-1]:.2e}), "
              f"complete ROM err linear {lin_err:.1e} elliptic {ell_err:.1e}")
    assert acceptance_report(5, "DEIM/POD exactness and ROM completeness", ok, detail, secs)


# --- 6 --------------------------------------------------------------------------
def test_c6_weight_cap(acceptance_report):
    t0 = time.perf_counter()
    m = _desk_elliptic()
    st = JointSettings(n_gnh=50, n_snap=150, tau_g=0.05, pod_tol=1e-6, deim_tol=1e-14, tau_d=1e-4)
    lap = LaplaceApproximation(m, l_max=m.data_dim).fit()
    jp1 = posterior_joint_iterate(None, m, st, seed=0, init="laplace", laplace=lap)
    jp2 = posterior_joint_iterate(jp1, m, st, seed=1, init="laplace", laplace=lap)
    K = misfit_cap(m.data_dim, 1e-4)
    X = jp1.sample(1000, seed=2)
    lw = log_omega_weights(jp1, m, X)
    lu = np.array([np.log(upsilon_weight(jp1, jp2.param_basis, m, x)[0]) for x in X])
    rep = hellinger_from_log_weights(lw)
    B_ok = True
    rng = np.random.default_rng(3)
    for _ in range(500):
        idx = rng.choice(lw.size, size=rng.integers(2, lw.size), replace=False)
        B_ok &= hellinger_from_log_weights(lw[idx]).info["bhattacharyya"] <= 1.0
    secs = time.perf_counter() - t0
    ok = (jp1.cap == pytest.approx(K) and np.all(lw <= K) and np.all(lu <= K)
          and rep.info["bhattacharyya"] <= 1.0 and B_ok and secs < 120)
    detail = (f"K {K:.3f}, max log omega {lw.max():.3f}, max log upsilon {lu.max():.3f}, "
              f"B {rep.info['bhattacharyya']:.4f}, 500 subsample B <= 1: {B_ok}")
    assert acceptance_report(6, "weights bounded by exp(K), B <= 1", ok, detail, secs)


# --- 7 --------------------------------------------------------------------------
def _combined_se(*rows):
    return float(np.sqrt(sum(r["se"] ** 2 for r in rows)))


def test_c7_gomos_method_ordering(acceptance_report, tmp_path):
    t0 = time.perf_counter()
    cfg_path = CONFIGS / "gomos_compare.yaml"
    cfg = load_config(cfg_path)
    p = cfg.model.params
    assert (p["n_alts"], p["n_gas"], p["n_nu"]) == (20, 2, 100)
    code = main(["compare", "--config", str(cfg_path), "--out", str(tmp_path)])
    metrics = json.loads((tmp_path / "compare" / "manifest.json").read_text())["metrics"]
    par = metrics["parameter"]
    chain = ["posterior", "laplace", "prior", "kl"]
    held, table = 0, []
    for r in ("5", "10", "15"):
        rows = [par[m][r] for m in chain]
        pair_ok = [a["hellinger2"] <= b["hellinger2"] + 2 * _combined_se(a, b)
                   for a, b in zip(rows, rows[1:])]
        held += all(pair_ok)
        table.append(f"r={r}: " + " <= ".join(f"{x['hellinger2']:.3g}" for x in rows)
                     + (" ok" if all(pair_ok) else " broken"))
    state = metrics["state"]
    ratios = {}
    for label, post in state["posterior"].items():
        lapl = state["laplace"].get(label)
        if lapl is not None:
            ratios[label] = lapl["hellinger2"] / max(post["hellinger2"], 1e-300)
    best = max(ratios.values())
    secs = time.perf_counter() - t0
    ok = code == EXIT_OK and held >= 2 and best >= 5 and secs < 1200
    detail = ("; ".join(table) + f"; LISS Laplace/posterior ratios "
              + ", ".join(f"{k}: {v:.1f}" for k, v in ratios.items()))
    assert acceptance_report(7, "desk GOMOS method ordering and LISS gain", ok, detail, secs)


# --- 8 and 9 ----------------------------------------------------------------------
@pytest.fixture(scope="module")
def elliptic_runs(tmp_path_factory):
    """Laplace- and prior-initialized iterative constructions (via the CLI)."""
    cfg_path = str(CONFIGS / "elliptic_posterior_joint.yaml")
    out = {}
    for init in ("laplace", "prior"):
        d = tmp_path_factory.mktemp(f"elliptic_{init}")
        os.environ["JOINTRED_INIT"] = init
        t0 = time.perf_counter()
        try:
            code = main(["reduce", "--config", cfg_path, "--out", str(d)])
        finally:
            del os.environ["JOINTRED_INIT"]
        with open(d / "reduce" / "trace.csv") as fh:
            trace = list(csv.DictReader(fh))
        out[init] = {"dir": d, "code": code, "trace": trace, "seconds": time.perf_counter() - t0}
    return out


def _dims(row):
    return tuple(int(row[k]) for k in ("r", "s", "t"))


def test_c8_iteration_stabilizes(acceptance_report, elliptic_runs):
    cfg = load_config(CONFIGS / "elliptic_posterior_joint.yaml")
    p = cfg.model.params
    assert (p["nx"], p["ny"], cfg.data.snr, cfg.truncation.tau_g, cfg.iterations) == (60, 20, 120, 0.05, 5)
    lap, pri = elliptic_runs["laplace"], elliptic_runs["prior"]
    dims = [_dims(r) for r in lap["trace"]]
    d2 = [float(r["hellinger2"]) for r in lap["trace"]]
    se = [float(r["se"]) for r in lap["trace"]]
    stable = all(abs(a - b) <= 1 for d in dims[1:] for a, b in zip(d, dims[1]))
    nonincr = all(d2[k] <= d2[k - 1] + 2 * np.hypot(se[k], se[k - 1]) for k in range(1, len(d2)))
    pdims = [_dims(r) for r in pri["trace"]]
    reach = any(all(abs(a - b) <= 2 for a, b in zip(pd, dims[-1])) for pd in pdims)
    secs = lap["seconds"] + pri["seconds"]
    ok = (lap["code"] == EXIT_OK and pri["code"] == EXIT_OK and len(dims) == 5
          and stable and nonincr and reach and secs < 1800)
    detail = (f"Laplace dims {dims}, D2 " + ", ".join(f"{a:.4f}+-{b:.4f}" for a, b in zip(d2, se))
              + f"; prior dims {pdims}")
    assert acceptance_report(8, "iterative construction stabilizes (desk elliptic)", ok, detail, secs)


def test_c9_importance_corrected_mean_and_marginals(acceptance_report, elliptic_runs):
    run = elliptic_runs["laplace"]
    d = run["dir"]
    t0 = time.perf_counter()
    code = main(["compare", "--config", str(CONFIGS / "elliptic_posterior_joint.yaml"), "--out", str(d)])
    metrics = json.loads((d / "compare" / "manifest.json").read_text())["metrics"]
    j = metrics["joint"]["posterior"]
    secs = time.perf_counter() - t0 + run["seconds"]
    tv = j["marginal_tv"]
    ok = (code == EXIT_OK and j["n_draws"] >= 10_000 and j["mean_rel_error"] <= 0.05
          and max(tv) <= 0.1 and secs < 2700)
    detail = (f"mean rel L2 err {j['mean_rel_error']:.2e} (relative to the deviation from the prior "
              f"mean: {j['mean_rel_error_centered']:.3f}), KL-mode TV max {max(tv):.3f} "
              f"[{', '.join(f'{v:.3f}' for v in tv)}], ESS {j['ess']:.0f} of {j['n_draws']}")
    assert acceptance_report(9, "importance-corrected mean and marginals", ok, detail, secs)
