"""Experiment configuration: a YAML tree validated by pydantic.

Precedence, lowest first: field defaults, the config file, ``JOINTRED_*``
environment variables, command-line flags. Nested keys in environment
variables are separated by a double underscore and values are parsed as
YAML scalars, e.g. ``JOINTRED_TRUNCATION__TAU_G=0.05`` or
``JOINTRED_SAMPLER__THIN=20``.

Schema (all sections optional except ``model``)::

    model:       {kind: elliptic|gomos|random-linear|toy2d, params: {...}}
    data:        {seed, snr | noise_std, truth: [..] | null}
    strategy:    kl-pod | prior-joint | laplace-joint | posterior-joint
    init:        laplace | prior           # posterior-joint only
    iterations:  int                       # posterior-joint only
    common_seeds: bool                     # reuse random streams across iterations
    trace_n_is:  int                       # IS draws for a per-iteration Hellinger trace (0: off)
    kl_rank:     int                       # kl-pod only
    budgets:     {n_gnh, n_snap, actions_per_sample, gnh_method}
    truncation:  {tau_g, r_max, pod_tol, s_max, deim_tol, t_max, data_tol}
    cap:         {tau_d, convention: eta|2eta}
    ess_floor:   float
    sampler:     {target_accept, adapt_rate, adapt_decay, thin, burn_in, step_size, adapt_cov}
    sample:      {n_draws, functionals: [mean, variance], importance: bool}
    compare:     {parameter_methods, parameter_dims, n_is, reference_steps, reference_thin,
                  n_reference_samples, state_sources, deim_dims, output_dims, state_dims,
                  liss_rank, marginal_modes, marginal_draws, hellinger: bool}
    spectra:     {rank, k}
    seed, jobs, out
    assertions:  [{metric: dotted.path, op: "<"|"<="|">"|">="|"=="|"!=", value}]
"""

import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .exceptions import InvalidConfigError

ENV_PREFIX = "JOINTRED_"

__all__ = ["ExperimentConfig", "load_config", "env_overrides", "ENV_PREFIX"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Strict):
    kind: Literal["toy2d", "random-linear", "gomos", "elliptic"]
    params: Dict[str, Any] = Field(default_factory=dict)


class DataSection(_Strict):
    seed: int = 1
    snr: Optional[float] = None
    noise_std: Optional[float] = None
    truth: Optional[List[float]] = None

    @model_validator(mode="after")
    def _one_noise(self):
        if self.snr is not None and self.noise_std is not None:
            raise ValueError("give either snr or noise_std, not both")
        return self


class Budgets(_Strict):
    n_gnh: int = Field(100, ge=1)
    n_snap: int = Field(200, ge=1)
    actions_per_sample: int = Field(30, ge=1)
    gnh_method: Literal["auto", "exact", "nystrom", "dense"] = "auto"


class Truncation(_Strict):
    tau_g: float = Field(0.1, ge=0)
    r_max: Optional[int] = Field(None, ge=1)
    pod_tol: float = Field(1e-8, ge=0)
    s_max: Optional[int] = Field(None, ge=1)
    deim_tol: float = Field(1e-8, ge=0)
    t_max: Optional[int] = Field(None, ge=1)
    data_tol: Optional[float] = Field(None, ge=0)


class CapSection(_Strict):
    tau_d: float = Field(1e-4, gt=0, lt=1)
    convention: Literal["eta", "2eta"] = "eta"


class SamplerSection(_Strict):
    target_accept: float = Field(0.574, gt=0, lt=1)
    adapt_rate: float = Field(1.0, gt=0)
    adapt_decay: float = Field(0.6, gt=0)
    thin: int = Field(10, ge=1)
    burn_in: float = Field(0.2, ge=0)
    step_size: Optional[float] = Field(None, ge=0)
    adapt_cov: bool = True


class SampleSection(_Strict):
    n_draws: int = Field(1000, ge=1)
    functionals: List[Literal["mean", "variance"]] = Field(default_factory=lambda: ["mean", "variance"])
    importance: bool = True


class CompareSection(_Strict):
    parameter_methods: List[Literal["posterior", "laplace", "prior", "kl"]] = Field(default_factory=list)
    parameter_dims: List[int] = Field(default_factory=list)
    n_is: int = Field(2000, ge=2)
    hellinger: bool = True
    reference_steps: int = Field(0, ge=0)
    reference_thin: int = Field(10, ge=1)
    n_reference_samples: int = Field(200, ge=1)
    state_sources: List[Literal["posterior", "laplace", "prior"]] = Field(default_factory=list)
    liss_rank: Optional[int] = Field(None, ge=1)
    deim_dims: List[Optional[int]] = Field(default_factory=lambda: [None])
    output_dims: List[Optional[int]] = Field(default_factory=lambda: [None])
    state_dims: List[Optional[int]] = Field(default_factory=lambda: [None])
    marginal_modes: int = Field(0, ge=0)
    marginal_draws: int = Field(10000, ge=2)


class SpectraSection(_Strict):
    rank: int = Field(20, ge=1)
    k: Optional[int] = Field(None, ge=1)
    n_samples: int = Field(500, ge=2)


class Assertion(_Strict):
    metric: str
    op: Literal["<", "<=", ">", ">=", "==", "!="]
    value: Any


class ExperimentConfig(_Strict):
    """Validated experiment configuration; unknown keys are rejected."""

    model: ModelSection
    data: DataSection = Field(default_factory=DataSection)
    strategy: Literal["kl-pod", "prior-joint", "laplace-joint", "posterior-joint"] = "posterior-joint"
    init: Literal["laplace", "prior"] = "laplace"
    iterations: int = Field(3, ge=1)
    common_seeds: bool = True
    trace_n_is: int = Field(0, ge=0)
    kl_rank: int = Field(10, ge=1)
    laplace_rank: Optional[int] = Field(None, ge=1)
    budgets: Budgets = Field(default_factory=Budgets)
    truncation: Truncation = Field(default_factory=Truncation)
    cap: CapSection = Field(default_factory=CapSection)
    ess_floor: float = Field(0.01, ge=0, lt=1)
    sampler: SamplerSection = Field(default_factory=SamplerSection)
    sample: SampleSection = Field(default_factory=SampleSection)
    compare: CompareSection = Field(default_factory=CompareSection)
    spectra: SpectraSection = Field(default_factory=SpectraSection)
    seed: int = 0
    jobs: Optional[int] = None
    out: str = "out"
    assertions: List[Assertion] = Field(default_factory=list)

    @field_validator("jobs")
    @classmethod
    def _jobs(cls, v):
        if v is not None and v == 0:
            raise ValueError("jobs must be nonzero")
        return v

    def joint_settings(self):
        from .joint import JointSettings

        t, b = self.truncation, self.budgets
        return JointSettings(
            n_gnh=b.n_gnh, n_snap=b.n_snap, actions_per_sample=b.actions_per_sample,
            tau_g=t.tau_g, r_max=t.r_max, pod_tol=t.pod_tol, s_max=t.s_max,
            deim_tol=t.deim_tol, t_max=t.t_max, data_tol=t.data_tol,
            tau_d=self.cap.tau_d, cap_convention=self.cap.convention,
            ess_floor=self.ess_floor, thin=self.sampler.thin,
            mcmc=self.sampler.model_dump(), gnh_method=b.gnh_method,
        )

    def dump(self):
        return self.model_dump(mode="json")


def _set_path(tree, keys, value):
    node = tree
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            node[k] = nxt
        node = nxt
    node[keys[-1]] = value


def env_overrides(environ=None):
    """Nested override tree from ``JOINTRED_*`` variables."""
    environ = os.environ if environ is None else environ
    tree = {}
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX) or name == ENV_PREFIX + "CONFIG":
            continue
        keys = [k.lower() for k in name[len(ENV_PREFIX):].split("__") if k]
        if keys:
            _set_path(tree, keys, yaml.safe_load(raw))
    return tree


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path=None, overrides=None, environ=None):
    """Read, merge and validate a configuration.

    Parameters
    ----------
    path : str or Path, optional
        YAML file; ``JOINTRED_CONFIG`` is used when omitted.
    overrides : dict, optional
        Highest-precedence values (command-line flags).

    Raises
    ------
    InvalidConfigError
        Unreadable file, unknown keys or invalid values.
    """
    environ = os.environ if environ is None else environ
    path = path or environ.get(ENV_PREFIX + "CONFIG")
    tree = {}
    if path is not None:
        try:
            tree = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InvalidConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(tree, dict):
            raise InvalidConfigError(f"config {path} must hold a mapping at the top level")
    tree = _merge(tree, env_overrides(environ))
    tree = _merge(tree, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as exc:
        raise InvalidConfigError(f"invalid configuration:\n{exc}") from None
