"""Command-line runner: ``jointred {make-data,reduce,sample,compare,spectra}``.

Every command reads one YAML config (see :mod:`jointred.config`), writes
into ``<out>/<command>/`` and finishes with ``manifest.json`` holding the
resolved config, the seeds, the metrics and SHA-256 hashes of every file
written. Exit codes: 0 success, 1 run-time failure, 2 invalid config or
missing inputs, 3 a declared assertion failed.
"""

import argparse
import hashlib
import logging
import operator
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .binio import read_json, read_matrix, write_json, write_matrix
from .config import load_config
from .exceptions import ChainFailedError, InvalidConfigError, JointRedError
from .gaussian import GaussianMeasure

logger = logging.getLogger("jointred")

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
        "==": operator.eq, "!=": operator.ne}

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_ASSERT = 0, 1, 2, 3


# --- run context -------------------------------------------------------------------
class Run:
    """Output directory, seeds, metrics and file hashes of one command."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.root = Path(cfg.out)
        self.dir = self.root / command
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.metrics = {}
        self.t0 = time.time()
        names = ["construct", "sample", "reference", "hellinger", "snapshots", "laplace"]
        states = np.random.SeedSequence(cfg.seed).generate_state(len(names))
        self.seeds = {k: int(v) for k, v in zip(names, states)}

    def path(self, name):
        p = self.dir / name
        self.files.append(p)
        return p

    def matrix(self, name, a):
        write_matrix(self.path(name), a)

    def json(self, name, payload):
        write_json(self.path(name), payload)

    def csv(self, name, rows, fields=None):
        import csv

        rows = list(rows)
        fields = fields or (list(rows[0]) if rows else [])
        with open(self.path(name), "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
            w.writeheader()
            w.writerows(rows)

    def track(self, stem):
        """Register files written by a library ``save(stem)``."""
        stem = Path(stem)
        self.files.extend(sorted(stem.parent.glob(stem.name + ".*")))

    def finish(self, status="ok", error=None):
        hashes = {}
        for p in dict.fromkeys(self.files):
            if p.exists():
                hashes[str(p.relative_to(self.root))] = hashlib.sha256(p.read_bytes()).hexdigest()
        results, failed = check_assertions(self.cfg.assertions, self.metrics, self.command)
        write_json(self.dir / "manifest.json", {
            "command": self.command,
            "status": status,
            "error": error,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "platform": platform.platform(),
            "seeds": self.seeds,
            "config": self.cfg.dump(),
            "metrics": self.metrics,
            "assertions": results,
            "artifacts": hashes,
            "seconds": time.time() - self.t0,
        })
        for r in results:
            logger.info("assertion %s %s %s: %s", r["metric"], r["op"], r["value"], r["status"])
        return failed


def _lookup(tree, dotted):
    node = tree
    for key in dotted.split("."):
        if isinstance(node, dict) and key in node:
            node = node[key]
        elif isinstance(node, (list, tuple)) and key.lstrip("-").isdigit():
            node = node[int(key)]
        else:
            raise KeyError(dotted)
    return node


def check_assertions(assertions, metrics, command=None):
    """Evaluate ``{metric, op, value}`` checks; missing metrics are skipped.

    Returns ``(results, n_failed)``.
    """
    results, failed = [], 0
    for a in assertions:
        entry = {"metric": a.metric, "op": a.op, "value": a.value}
        try:
            actual = _lookup(metrics, a.metric)
        except (KeyError, IndexError):
            entry["status"] = "skipped"
            results.append(entry)
            continue
        ok = bool(_OPS[a.op](actual, a.value))
        entry.update(actual=actual, status="pass" if ok else "fail")
        failed += not ok
        results.append(entry)
    return results, failed


# --- problem ---------------------------------------------------------------------
def build_problem(cfg, write_to=None):
    """Model with noise and data from the config, or from ``<out>/make-data``.

    Returns ``(model, truth, clean)``; ``truth``/``clean`` are ``None`` when the
    data were loaded from disk without them.
    """
    from .models import make_model, synthetic_data

    model = make_model(cfg.model.kind, cfg.model.params)
    data_dir = Path(cfg.out) / "make-data"
    if write_to is None and (data_dir / "y_obs.bin").exists():
        meta = read_json(data_dir / "data.json")
        if meta.get("model") != cfg.model.model_dump(mode="json"):
            raise InvalidConfigError(f"data in {data_dir} were generated for a different model")
        sigma = meta["noise_std"]
        model = model.with_noise(GaussianMeasure.isotropic(model.data_dim, sigma**2))
        if hasattr(model, "noise_std"):
            model.noise_std = sigma
        y = read_matrix(data_dir / "y_obs.bin").ravel()
        truth = read_matrix(data_dir / "truth.bin").ravel() if (data_dir / "truth.bin").exists() else None
        return model.with_data(y), truth, None
    d = cfg.data
    truth = None if d.truth is None else np.asarray(d.truth, float)
    return synthetic_data(model, seed=d.seed, truth=truth, noise_std=d.noise_std, snr=d.snr)


def _noise_std(model):
    e = np.zeros(model.data_dim)
    e[0] = 1.0
    return float(np.sqrt(model.noise.cov(e)[0]))


def _laplace(cfg, model):
    from .laplace import LaplaceApproximation

    l_max = cfg.laplace_rank or min(model.param_dim, model.data_dim)
    return LaplaceApproximation(model, l_max=l_max).fit()


# --- commands ----------------------------------------------------------------------
def cmd_make_data(cfg, run):
    model, truth, clean = build_problem(cfg, write_to=run.dir)
    run.matrix("truth.bin", truth)
    run.matrix("clean.bin", clean)
    run.matrix("y_obs.bin", model.y_obs)
    sigma = _noise_std(model)
    run.json("data.json", {"model": cfg.model.model_dump(mode="json"), "noise_std": sigma,
                           "seed": cfg.data.seed, "param_dim": model.param_dim,
                           "data_dim": model.data_dim})
    run.metrics.update(noise_std=sigma, param_dim=model.param_dim, data_dim=model.data_dim)


def cmd_reduce(cfg, run):
    from .diagnostics import hellinger_is
    from .joint import prior_kl_joint, run_posterior_joint

    model, _, _ = build_problem(cfg)
    settings = cfg.joint_settings()
    seed = run.seeds["construct"]
    trace = []

    def record(jp):
        row = {"iteration": jp.iteration, **jp.dims, "gnh_ess": jp.info.get("gnh_ess"),
               "snapshot_ess": jp.info.get("snapshot_ess"), "seconds": time.time() - run.t0}
        if cfg.trace_n_is:
            rep = hellinger_is(model, None, jp, cfg.trace_n_is, seed=run.seeds["hellinger"],
                               mcmc_opts=settings.mcmc, jobs=cfg.jobs)
            row.update(hellinger2=rep.value, se=rep.std_error, is_ess=rep.info.get("ess"))
        trace.append(row)
        stem = run.dir / f"iter{jp.iteration:02d}"
        jp.save(stem)
        run.track(stem)
        logger.info("iteration %d: %s", jp.iteration, {k: v for k, v in row.items() if k != "seconds"})

    if cfg.strategy == "kl-pod":
        jp = prior_kl_joint(model, cfg.kl_rank, settings, seed, cfg.jobs)
        jp.iteration = 1
        record(jp)
    else:
        iterations = cfg.iterations if cfg.strategy == "posterior-joint" else 1
        init = {"prior-joint": "prior", "laplace-joint": "laplace"}.get(cfg.strategy, cfg.init)
        laplace = _laplace(cfg, model) if init == "laplace" else None
        jp = run_posterior_joint(model, iterations, settings, seed, init, laplace, cfg.jobs,
                                 callback=record, common_seeds=cfg.common_seeds)[-1]
    jp.save(run.dir / "posterior")
    run.track(run.dir / "posterior")
    run.csv("trace.csv", trace)
    run.metrics.update(dims=jp.dims, iterations=trace, cap=jp.cap, strategy=cfg.strategy)
    if trace and "hellinger2" in trace[-1]:
        run.metrics["hellinger2"] = trace[-1]["hellinger2"]


def _load_posterior(cfg, model, stem=None):
    from .joint import JointPosterior

    stem = Path(stem) if stem else Path(cfg.out) / "reduce" / "posterior"
    if not Path(str(stem) + ".json").exists():
        raise InvalidConfigError(f"no reduced posterior at {stem}; run `jointred reduce` first")
    return JointPosterior.load(stem, model)


def cmd_sample(cfg, run):
    from .joint import log_omega_weights

    model, _, _ = build_problem(cfg)
    jp = _load_posterior(cfg, model)
    n = cfg.sample.n_draws
    summary = {"n_draws": n, "dims": jp.dims}
    try:
        X, chain = jp.sample(n, run.seeds["sample"], cfg.sampler.model_dump(), return_chain=True)
    except ChainFailedError as exc:
        summary["error"] = str(exc)
        run.json("summary.json", summary)
        raise
    run.matrix("draws.bin", X)
    chain.save(run.dir / "chain", opts=cfg.sampler.model_dump())
    run.track(run.dir / "chain")
    summary.update(accept_rate=chain.accept_rate, final_step=chain.info.get("final_step"))
    w = np.full(X.shape[0], 1.0 / X.shape[0])
    if cfg.sample.importance:
        lw = log_omega_weights(jp, model, X, cfg.jobs)
        run.matrix("log_weights.bin", lw)
        finite = np.isfinite(lw)
        w = np.where(finite, np.exp(lw - lw[finite].max()), 0.0)
        w /= w.sum()
        summary["ess"] = float(1.0 / np.sum(w**2))
        summary["failed_weights"] = int((~finite).sum())
    mean = w @ X
    if "mean" in cfg.sample.functionals:
        run.matrix("mean.bin", mean)
    if "variance" in cfg.sample.functionals:
        run.matrix("variance.bin", w @ (X - mean) ** 2)
    run.json("summary.json", summary)
    run.metrics.update(summary)


def _reference(cfg, run, model, laplace):
    from .samplers import reference_full_mcmc

    c = cfg.compare
    if c.reference_steps <= 0:
        raise InvalidConfigError("this comparison needs a reference chain; set compare.reference_steps")
    chain = reference_full_mcmc(model, steps=c.reference_steps, seed=run.seeds["reference"],
                                laplace=laplace,
                                opts={"thin": c.reference_thin, "adapt_cov": False})
    chain.save(run.dir / "reference", opts={"thin": c.reference_thin})
    run.track(run.dir / "reference")
    run.metrics["reference_accept_rate"] = chain.accept_rate
    return chain.draws


def _evenly(X, count):
    idx = np.linspace(0, X.shape[0] - 1, min(count, X.shape[0])).round().astype(int)
    return X[idx]


def cmd_compare(cfg, run, artifacts=None):
    from .diagnostics import hellinger_is
    from .experiments import parameter_sweep, reference_marginal_comparison, state_sweep
    from .joint import JointPosterior, misfit_cap
    from .param_reduce import estimate_expected_gnh, lips_from_expected_gnh
    from .state_reduce import ProjectedModel

    c = cfg.compare
    model, _, _ = build_problem(cfg)
    needs_ref = "posterior" in c.parameter_methods or "posterior" in c.state_sources or c.marginal_modes
    needs_lap = ("laplace" in c.parameter_methods or "laplace" in c.state_sources
                 or needs_ref)
    laplace = _laplace(cfg, model) if needs_lap else None
    ref = _reference(cfg, run, model, laplace) if needs_ref else None
    nsamp = c.n_reference_samples
    samples = {}
    if ref is not None:
        samples["posterior"] = _evenly(ref, nsamp)
    if laplace is not None:
        samples["laplace"] = laplace.sample(nsamp, seed=run.seeds["laplace"])
    samples["prior"] = model.prior.sample(nsamp, seed=run.seeds["snapshots"])
    rows = []

    if c.parameter_methods and c.parameter_dims:
        prow = parameter_sweep(model, c.parameter_dims, c.parameter_methods, samples, c.n_is,
                               cfg.budgets.actions_per_sample, cfg.cap.tau_d,
                               run.seeds["hellinger"], cfg.jobs)
        rows.extend(prow)
        run.metrics["parameter"] = {f"{r['method']}": {} for r in prow}
        for r in prow:
            run.metrics["parameter"][r["method"]][str(r["dim"])] = {"hellinger2": r["hellinger2"], "se": r["se"]}

    if c.state_sources:
        if c.liss_rank is None:
            raise InvalidConfigError("compare.liss_rank is required for state-basis sweeps")
        src = "posterior" if "posterior" in samples else "laplace"
        S = estimate_expected_gnh(model, samples[src], actions_per_sample=cfg.budgets.actions_per_sample,
                                  seed=run.seeds["construct"], jobs=cfg.jobs)
        basis = lips_from_expected_gnh(S, model.prior, 0.0, c.liss_rank, method_tag=f"{src}-lips")
        K = misfit_cap(model.data_dim, cfg.cap.tau_d)
        n_snap = cfg.budgets.n_snap
        sources = {}
        for name in c.state_sources:
            if name == "posterior":
                jp_par = JointPosterior(ProjectedModel(model, basis), K, model.y_obs)
                sources[name] = jp_par.sample(n_snap, run.seeds["snapshots"], cfg.sampler.model_dump())
            elif name == "laplace":
                sources[name] = laplace.sample(n_snap, seed=run.seeds["snapshots"])
            else:
                sources[name] = model.prior.sample(n_snap, seed=run.seeds["snapshots"])
        srows = state_sweep(model, basis, sources, c.deim_dims, c.output_dims, c.state_dims,
                            c.n_is, cfg.cap.tau_d, run.seeds["hellinger"], cfg.jobs)
        run.csv("state_hellinger.csv", srows,
                ["method", "dim", "r", "s", "t", "o", "hellinger2", "se", "estimator"])
        run.metrics["state"] = {}
        for r in srows:
            run.metrics["state"].setdefault(r["method"], {})[r["dim"]] = {"hellinger2": r["hellinger2"], "se": r["se"]}

    stems = list(artifacts or [])
    if not stems and (Path(cfg.out) / "reduce" / "posterior.json").exists():
        stems = [Path(cfg.out) / "reduce" / "posterior"]
    joint_metrics = {}
    for stem in stems:
        jp = _load_posterior(cfg, model, stem)
        label = Path(stem).name
        if c.hellinger:
            rep = hellinger_is(model, None, jp, c.n_is, seed=run.seeds["hellinger"],
                               mcmc_opts=cfg.sampler.model_dump(), jobs=cfg.jobs)
            dims = "/".join(f"{k}{v}" for k, v in jp.dims.items())
            rows.append({"method": f"{jp.tag or 'joint'}:{label}", "dim": dims, "hellinger2": rep.value,
                         "se": rep.std_error, "estimator": rep.method})
            joint_metrics[label] = {"hellinger2": rep.value, "se": rep.std_error, "dims": jp.dims}
        if c.marginal_modes:
            cmp = reference_marginal_comparison(jp, model, ref, c.marginal_draws, c.marginal_modes,
                                                seed=run.seeds["sample"],
                                                mcmc_opts=cfg.sampler.model_dump(), jobs=cfg.jobs)
            run.matrix(f"{label}.is_mean.bin", cmp.pop("mean"))
            run.csv(f"{label}.marginals.csv",
                    [{"mode": k + 1, "tv": v} for k, v in enumerate(cmp["marginal_tv"])])
            cmp["marginal_tv_max"] = max(cmp["marginal_tv"])
            joint_metrics.setdefault(label, {}).update(cmp)
    if joint_metrics:
        run.metrics["joint"] = joint_metrics
    if rows:
        run.csv("hellinger.csv", rows, ["method", "dim", "hellinger2", "se", "estimator"])


def cmd_spectra(cfg, run):
    from .diagnostics import write_spectra_csv
    from .experiments import state_moment_spectra
    from .param_reduce import estimate_expected_gnh, lips_from_expected_gnh

    model, _, _ = build_problem(cfg)
    sp = cfg.spectra
    X = model.prior.sample(sp.n_samples, seed=run.seeds["snapshots"])
    S = estimate_expected_gnh(model, X[: cfg.budgets.n_gnh], actions_per_sample=cfg.budgets.actions_per_sample,
                              seed=run.seeds["construct"], jobs=cfg.jobs)
    basis = lips_from_expected_gnh(S, model.prior, 0.0, sp.rank, method_tag="prior-lips")
    if model.kind == "random-linear":
        spectra = state_moment_spectra(model, basis, sp.k)
    else:
        lap = _laplace(cfg, model)
        XL = lap.sample(sp.n_samples, seed=run.seeds["laplace"])
        spectra = state_moment_spectra(model, basis, sp.k, samples={
            "prior": X, "laplace": XL,
            "reduced-prior": basis.project_affine(X),
            "reduced-laplace": basis.project_affine(XL),
        })
    write_spectra_csv(run.path("spectra.csv"), spectra)
    r = basis.dim
    tails = {}
    for label, v in spectra.items():
        v = np.asarray(v)
        if v.size > r:
            tails[label] = {"rel_after_rank": float(v[r] / v[0]), "drop_at_rank": float(v[r] / v[r - 1])}
    run.metrics.update(rank=r, tails=tails)


COMMANDS = {
    "make-data": cmd_make_data,
    "reduce": cmd_reduce,
    "sample": cmd_sample,
    "compare": cmd_compare,
    "spectra": cmd_spectra,
}


def build_parser():
    p = argparse.ArgumentParser(prog="jointred", description="Jointly-reduced Bayesian inversion.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "make-data": "draw a truth and synthetic data",
        "reduce": "build bases and the jointly-reduced posterior",
        "sample": "sample the reduced posterior and importance-correct",
        "compare": "Hellinger sweeps, reference-chain marginals",
        "spectra": "state second-moment spectra",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help="YAML config (default: $JOINTRED_CONFIG)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--seed", type=int, help="master seed")
        s.add_argument("--jobs", type=int, help="worker threads (-1: all cores)")
        s.add_argument("-v", "--verbose", action="count", default=0)
        if name == "compare":
            s.add_argument("artifacts", nargs="*", help="saved posterior stems to compare")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"out": args.out, "seed": args.seed, "jobs": args.jobs})
    except InvalidConfigError as exc:
        print(f"jointred: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(cfg, args.command)
    fn = COMMANDS[args.command]
    try:
        if args.command == "compare":
            fn(cfg, run, args.artifacts)
        else:
            fn(cfg, run)
    except InvalidConfigError as exc:
        run.finish("error", str(exc))
        print(f"jointred {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except JointRedError as exc:
        where = f" (iteration {exc.iteration})" if getattr(exc, "iteration", None) else ""
        msg = f"{type(exc).__name__}{where}: {exc}"
        run.finish("error", msg)
        print(f"jointred {args.command}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    failed = run.finish()
    if failed:
        print(f"jointred {args.command}: {failed} assertion(s) failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
