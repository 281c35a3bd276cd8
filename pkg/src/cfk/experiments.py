"""Experiment definitions, configuration resolution and result files.

Each experiment expands its resolved config into independent tasks. A task
is a plain tuple so it can cross a process boundary; its random streams are
keyed by ``(seed, ...task identity...)`` and never by task position, so
changing the number of repetitions leaves earlier repetitions untouched.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Union

import numpy as np

from ._rng import substream
from .cme import CmeModel, epsilon_schedule
from .embedding import empirical_embedding, squared_mmd_biased
from .herding import herd
from .kernels import KernelFamily, KernelSpec, gram, median_heuristic
from .kte import Normalization, ipw_embeddings
from .simgen import (
    MixtureShiftConfig,
    RecSysConfig,
    Scenario,
    ScenarioConfig,
    gen_mixture_shift,
    gen_recsys,
    gen_scenario,
    potential_outcome_law,
)
from .twosample import CmeConfig, Statistic, TestConfig, bootstrap_two_sample_test, fit_cme, run_test

EXPERIMENTS = ("table1", "mixture_shift", "herding_demo", "ope_sweep", "theorem3_check", "theorem4_rate")


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """User-facing configuration; ``None`` means "use the experiment default".

    ``overrides`` holds generator fields and experiment options by name.
    """

    experiment: str
    seed: int = 0
    reps: Optional[int] = None
    n: Optional[int] = None
    ns: Optional[tuple] = None
    alpha: Optional[float] = None
    alphas: Optional[tuple] = None
    kernel: Optional[str] = None
    bandwidth: Optional[Union[str, float]] = None
    epsilon: Optional[Union[str, float]] = None
    bootstrap: Optional[int] = None
    nystrom_rank: Optional[int] = None
    overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        if "experiment" not in data:
            raise ConfigError("config needs an 'experiment' field")
        return cls(**data)


# per-experiment defaults; every key here is echoed in the resolved config
_DEFAULTS: dict[str, dict[str, Any]] = {
    "table1": dict(reps=200, ns=(50, 100), alpha=0.01, kernel="gaussian", bandwidth="median", bootstrap=1000),
    "mixture_shift": dict(
        reps=20, n=500, ns=(50, 200, 800), alpha=0.01, kernel="gaussian", bandwidth="median",
        epsilon="cv", bootstrap=1000,
    ),
    "herding_demo": dict(reps=1, n=500, kernel="gaussian", bandwidth="median"),
    "ope_sweep": dict(reps=30, n=1000, alphas=(-1.0, -0.5, 0.0, 0.5, 1.0), epsilon="cv"),
    "theorem3_check": dict(reps=2000, n=2000, kernel="gaussian", bandwidth=1.0),
    "theorem4_rate": dict(reps=500, ns=(250, 500, 1000), kernel="gaussian", bandwidth=1.0),
}

# experiment options accepted in ``overrides`` besides generator fields
_OPTIONS: dict[str, dict[str, Any]] = {
    "table1": dict(design="randomized", scenarios=("I", "II", "III")),
    "mixture_shift": dict(herd_reps=50, oracle_size=2000, parts=("consistency", "herding")),
    "herding_demo": dict(m=100, separation=2.0, spread=0.5),
    "ope_sweep": dict(mc_draws=1000, estimators=("kpe", "wips", "dm", "dr", "slate")),
    "theorem3_check": dict(test_points=(-1.0, 0.0, 1.0, 2.0, 3.0), truth_draws=1_000_000, scenario="II"),
    "theorem4_rate": dict(scenario="II", assignment="randomized"),
}

_GENERATORS: dict[str, Optional[type]] = {
    "table1": ScenarioConfig,
    "mixture_shift": MixtureShiftConfig,
    "herding_demo": None,
    "ope_sweep": RecSysConfig,
    "theorem3_check": ScenarioConfig,
    "theorem4_rate": ScenarioConfig,
}

# fields the experiment sets itself, per repetition or grid point
_MANAGED = {"n", "scenario", "policy_shift"}


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def resolve(config: ExperimentConfig) -> dict:
    """Fill defaults and validate; the result is what gets echoed into every output."""
    if config.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {config.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    exp = config.experiment
    out: dict[str, Any] = {"experiment": exp, "seed": int(config.seed)}
    defaults = _DEFAULTS[exp]
    for key in ("reps", "n", "ns", "alpha", "alphas", "kernel", "bandwidth", "epsilon", "bootstrap", "nystrom_rank"):
        value = getattr(config, key)
        if value is None:
            value = defaults.get(key)
        out[key] = _tupled(value)
    # --n alone narrows a size sweep to that size
    if config.n is not None and config.ns is None and "ns" in defaults and exp != "mixture_shift":
        out["ns"] = (int(config.n),)

    generator = _GENERATORS[exp]
    gen_fields = {f.name for f in dataclasses.fields(generator)} - _MANAGED if generator else set()
    options = dict(_OPTIONS[exp])
    generator_overrides = {}
    for key, value in sorted(config.overrides.items()):
        value = _tupled(value)
        if key in options:
            options[key] = value
        elif key in gen_fields:
            generator_overrides[key] = value
        else:
            allowed = sorted(set(options) | gen_fields)
            raise ConfigError(f"unknown override {key!r} for {exp}; allowed: {', '.join(allowed)}")
    out["options"] = options
    out["generator"] = generator_overrides
    _validate(out)
    return out


def _validate(cfg: dict):
    if cfg["reps"] is not None and cfg["reps"] < 1:
        raise ConfigError("reps must be positive")
    if cfg["alpha"] is not None and not 0.0 < cfg["alpha"] < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg["bootstrap"] is not None and cfg["bootstrap"] < 1:
        raise ConfigError("bootstrap must be positive")
    if cfg["kernel"] is not None:
        try:
            KernelFamily(cfg["kernel"])
        except ValueError:
            raise ConfigError(f"unknown kernel {cfg['kernel']!r}") from None
    bw = cfg["bandwidth"]
    if bw is not None and bw != "median" and not (isinstance(bw, (int, float)) and bw > 0):
        raise ConfigError("bandwidth must be 'median' or a positive number")
    eps = cfg["epsilon"]
    if eps is not None and eps != "cv" and not (isinstance(eps, (int, float)) and eps > 0):
        raise ConfigError("epsilon must be 'cv' or a positive number")
    if cfg["experiment"] in ("theorem3_check", "theorem4_rate"):
        if cfg["kernel"] != "gaussian" or bw == "median":
            raise ConfigError("theorem checks need a Gaussian kernel with a numeric bandwidth")
    if cfg["experiment"] == "table1" and cfg["options"]["design"] not in ("randomized", "observed"):
        raise ConfigError("design must be 'randomized' or 'observed'")
    # surface generator validation errors before any work starts
    generator = _GENERATORS[cfg["experiment"]]
    if generator is not None:
        try:
            generator(**cfg["generator"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid generator override: {exc}") from None


def _kernel_arg(cfg: dict, pooled=None) -> Union[KernelSpec, str]:
    """Concrete kernel, or a family name when the bandwidth is set by the median heuristic."""
    family = KernelFamily(cfg["kernel"])
    if family in (KernelFamily.GAUSSIAN, KernelFamily.LAPLACE):
        if cfg["bandwidth"] == "median":
            return family.value if pooled is None else KernelSpec(family, median_heuristic(pooled))
        return KernelSpec(family, float(cfg["bandwidth"]))
    return KernelSpec.linear() if family is KernelFamily.LINEAR else KernelSpec.polynomial()


# ---------------------------------------------------------------------------
# table1


def _table1_tasks(cfg):
    for scenario in cfg["options"]["scenarios"]:
        for n in cfg["ns"]:
            for rep in range(cfg["reps"]):
                yield ("table1", cfg, Scenario(scenario).value, int(n), rep)


def _table1_trial(task):
    _, cfg, scenario, n, rep = task
    seed = cfg["seed"]
    s_key = ("I", "II", "III").index(scenario)
    gen = ScenarioConfig(scenario=scenario, n=n, **cfg["generator"])
    data = gen_scenario(gen, substream(seed, s_key, n, rep, 0))
    if cfg["options"]["design"] == "randomized":
        half = n // 2
        a, b = data.y0_star[:half], data.y1_star[half:]
    else:
        a, b = data.y[data.control], data.y[data.treated]
    rows = []
    for j, (test, kernel) in enumerate((("ATE", KernelSpec.linear()), ("DATE", _kernel_arg(cfg)))):
        row = dict(scenario=scenario, n=n, rep=rep, test=test, n_a=len(a), n_b=len(b))
        if len(a) < 2 or len(b) < 2:
            row.update(statistic=math.nan, p_value=math.nan, reject=False)
        else:
            res = bootstrap_two_sample_test(
                a, b, kernel, Statistic.MMD_UNBIASED, cfg["bootstrap"], cfg["alpha"],
                substream(seed, s_key, n, rep, 1 + j),
            )
            row.update(statistic=res.statistic, p_value=res.p_value, reject=res.reject)
        rows.append(row)
    return rows


def _power_summary(rows, keys):
    groups: dict = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(bool(r["reject"]))
    out = []
    for key, rej in groups.items():
        p = float(np.mean(rej))
        out.append(dict(zip(keys, key), power=p, se=math.sqrt(p * (1 - p) / len(rej)), reps=len(rej)))
    return out


def _table1_summarize(cfg, rows):
    power = _power_summary(rows, ("scenario", "n", "test"))
    return {"power": power}, power


# ---------------------------------------------------------------------------
# mixture_shift


def _mixture_tasks(cfg):
    parts = cfg["options"]["parts"]
    if "consistency" in parts:
        for n in cfg["ns"]:
            for rep in range(cfg["reps"]):
                yield ("mixture_shift", "consistency", cfg, int(n), rep)
    if "herding" in parts:
        for rep in range(cfg["options"]["herd_reps"]):
            yield ("mixture_shift", "herding", cfg, int(cfg["n"]), rep)


def _outcome_kernel(cfg, y):
    return _kernel_arg(cfg, pooled=y)


def _mixture_trial(task):
    _, part, cfg, n, rep = task
    seed = cfg["seed"]
    gen = MixtureShiftConfig(n=n, **cfg["generator"])
    if part == "consistency":
        data = gen_mixture_shift(gen, substream(seed, 0, n, rep, 0))
        ky = _outcome_kernel(cfg, data.y_control)
        kx = KernelSpec.gaussian(median_heuristic(data.x_control))
        eps = epsilon_schedule(n) if cfg["epsilon"] == "cv" else float(cfg["epsilon"])
        model = CmeModel(data.x_control, data.y_control, kx, ky, eps, nystrom_rank=cfg["nystrom_rank"],
                         rng=substream(seed, 0, n, rep, 2))
        estimate = model.estimate_counterfactual_embedding(data.x_treated)
        oracle = empirical_embedding(ky, gen.sample_counterfactual(cfg["options"]["oracle_size"], substream(seed, 0, n, rep, 1)))
        return [dict(part=part, n=n, rep=rep, epsilon=eps, mmd2=squared_mmd_biased(estimate, oracle))]

    data = gen_mixture_shift(gen, substream(seed, 1, n, rep, 0))
    ky = _outcome_kernel(cfg, data.y_control)
    eps = "cv" if cfg["epsilon"] == "cv" else float(cfg["epsilon"])
    model = fit_cme(CmeConfig(kernel_y=ky, epsilon=eps, nystrom_rank=cfg["nystrom_rank"]),
                    data.x_control, data.y_control, substream(seed, 1, n, rep, 2))
    herded = herd(model.estimate_counterfactual_embedding(data.x_treated), n)
    fresh = gen.sample_counterfactual(n, substream(seed, 1, n, rep, 1))
    rows = []
    for j, (test, kernel) in enumerate((("ATE", KernelSpec.linear()), ("DATE", _kernel_arg(cfg)))):
        res = run_test(TestConfig(kernel, Statistic.MMD_UNBIASED, cfg["bootstrap"], cfg["alpha"]),
                       herded, fresh, substream(seed, 1, n, rep, 3 + j))
        rows.append(dict(part=part, n=n, rep=rep, test=test, epsilon=model.epsilon,
                         sigma_x=model.kernel_x.bandwidth, statistic=res.statistic,
                         p_value=res.p_value, reject=res.reject))
    return rows


def _mixture_summarize(cfg, rows):
    consistency = []
    for n in cfg["ns"]:
        vals = [r["mmd2"] for r in rows if r["part"] == "consistency" and r["n"] == n]
        if vals:
            consistency.append(dict(part="consistency", n=n, median_mmd2=float(np.median(vals)),
                                     mean_mmd2=float(np.mean(vals)),
                                     se=float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan,
                                     reps=len(vals)))
    herding = []
    for s in _power_summary([r for r in rows if r["part"] == "herding"], ("n", "test")):
        s["pass_rate"] = 1.0 - s["power"]
        herding.append(s)
    plot = consistency + [dict(part="herding", n=h["n"], test=h["test"], pass_rate=h["pass_rate"], se=h["se"]) for h in herding]
    return {"consistency": consistency, "herding": herding}, plot


# ---------------------------------------------------------------------------
# herding_demo


def _herding_tasks(cfg):
    for rep in range(cfg["reps"]):
        yield ("herding_demo", cfg, rep)


def _herding_trial(task):
    _, cfg, rep = task
    opts = cfg["options"]
    rng = substream(cfg["seed"], rep, 0)
    n = cfg["n"]
    centers = np.where(rng.random(n) < 0.5, -opts["separation"], opts["separation"])
    sample = centers + opts["spread"] * rng.standard_normal(n)
    kernel = _kernel_arg(cfg, pooled=sample)
    target = empirical_embedding(kernel, sample)
    herded = herd(target, opts["m"])
    iid = substream(cfg["seed"], rep, 1).choice(sample, size=opts["m"], replace=False)
    rows = []
    for t in range(1, opts["m"] + 1):
        rows.append(dict(
            rep=rep, step=t, point=float(herded[t - 1, 0]),
            mmd2_herded=squared_mmd_biased(empirical_embedding(kernel, herded[:t]), target),
            mmd2_iid=squared_mmd_biased(empirical_embedding(kernel, iid[:t]), target),
        ))
    return rows


def _herding_summarize(cfg, rows):
    final = [r for r in rows if r["step"] == cfg["options"]["m"]]
    summary = dict(
        final_mmd2_herded=float(np.mean([r["mmd2_herded"] for r in final])),
        final_mmd2_iid=float(np.mean([r["mmd2_iid"] for r in final])),
    )
    steps = sorted({r["step"] for r in rows})
    plot = [dict(step=t,
                 mmd2_herded=float(np.mean([r["mmd2_herded"] for r in rows if r["step"] == t])),
                 mmd2_iid=float(np.mean([r["mmd2_iid"] for r in rows if r["step"] == t])))
            for t in steps]
    return summary, plot


# ---------------------------------------------------------------------------
# ope_sweep


def _alpha_key(alpha: float) -> int:
    # stable nonnegative stream key per policy shift
    return int(round((alpha + 1.0) * 1_000_000))


def _ope_tasks(cfg):
    for alpha in cfg["alphas"]:
        for rep in range(cfg["reps"]):
            yield ("ope_sweep", cfg, float(alpha), rep)


def _ope_trial(task):
    from . import ope

    _, cfg, alpha, rep = task
    seed, key = cfg["seed"], _alpha_key(alpha)
    gen = RecSysConfig(n=cfg["n"], policy_shift=alpha, **cfg["generator"])
    data = gen_recsys(gen, substream(seed, key, rep, 0))
    truth = data.true_value
    draws = cfg["options"]["mc_draws"]
    logged, target_policy = data.logged, data.target_policy
    estimates: dict[str, float] = {}
    extra: dict[str, float] = {}
    wanted = cfg["options"]["estimators"]
    if "kpe" in wanted:
        if cfg["epsilon"] == "cv":
            eps = ope.kpe_select_epsilon(logged, data.target, data.item_features, target_policy,
                                         seed=int(substream(seed, key, rep, 1).integers(2**31))).best
        else:
            eps = float(cfg["epsilon"])
        estimates["kpe"] = ope.kpe(logged, data.target, data.item_features, eps,
                                   nystrom_rank=cfg["nystrom_rank"], rng=substream(seed, key, rep, 2)).estimate
        extra["kpe"] = eps
    if "wips" in wanted:
        try:
            estimates["wips"] = ope.wips(logged, target_policy)
        except ope.DegenerateEstimateError:
            estimates["wips"] = math.nan
    if "dm" in wanted or "dr" in wanted:
        regressor = ope.fit_reward_regressor(logged, data.item_features)
        if "dm" in wanted:
            estimates["dm"] = ope.dm(logged, target_policy, regressor, draws, substream(seed, key, rep, 3))
        if "dr" in wanted:
            estimates["dr"] = ope.dr(logged, target_policy, regressor, draws, substream(seed, key, rep, 3))
    if "slate" in wanted:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ope.InconsistentSlateWarning)
            estimates["slate"] = ope.slate_estimator(logged, data.logging_policy, target_policy, draws,
                                                     substream(seed, key, rep, 4))
    return [
        dict(alpha=alpha, rep=rep, estimator=name, estimate=est, truth=truth,
             sq_error=(est - truth) ** 2, epsilon=extra.get(name, math.nan))
        for name, est in estimates.items()
    ]


def _ope_summarize(cfg, rows):
    out = []
    for name in cfg["options"]["estimators"]:
        for alpha in cfg["alphas"]:
            errs = np.array([r["sq_error"] for r in rows if r["estimator"] == name and r["alpha"] == alpha])
            if errs.size:
                out.append(dict(estimator=name, alpha=float(alpha), mse=float(np.mean(errs)),
                                se=float(np.std(errs, ddof=1) / math.sqrt(errs.size)) if errs.size > 1 else math.nan,
                                reps=int(errs.size)))
    return {"mse": out}, out


# ---------------------------------------------------------------------------
# theorem3_check: unbiasedness of the propensity-weighted embeddings


def _theorem3_tasks(cfg):
    for rep in range(cfg["reps"]):
        yield ("theorem3_check", cfg, rep)


def _scenario_gen(cfg, n):
    fields = dict(cfg["generator"])
    if "assignment" in cfg["options"]:
        fields.setdefault("assignment", cfg["options"]["assignment"])
    return ScenarioConfig(scenario=cfg["options"]["scenario"], n=n, **fields)


def _theorem3_trial(task):
    _, cfg, rep = task
    gen = _scenario_gen(cfg, cfg["n"])
    data = gen_scenario(gen, substream(cfg["seed"], 1, rep))
    kernel = KernelSpec.gaussian(float(cfg["bandwidth"]))
    points = np.asarray(cfg["options"]["test_points"], dtype=float)
    rows = []
    for norm in Normalization:
        mu1, mu0 = ipw_embeddings(data, gen.propensity_model(), kernel, norm)
        for arm, emb in ((1, mu1), (0, mu0)):
            for y, value in zip(points, emb(points)):
                rows.append(dict(rep=rep, normalization=norm.value, arm=arm, point=float(y), value=float(value)))
    return rows


def _theorem3_truth(cfg):
    gen = _scenario_gen(cfg, cfg["options"]["truth_draws"])
    big = gen_scenario(gen, substream(cfg["seed"], 0))
    kernel = KernelSpec.gaussian(float(cfg["bandwidth"]))
    points = np.asarray(cfg["options"]["test_points"], dtype=float)
    truth = {}
    for arm, y in ((1, big.y1_star), (0, big.y0_star)):
        K = gram(kernel, points, y)
        closed = potential_outcome_law(gen, arm).embedding(points, float(cfg["bandwidth"]))
        for i, p in enumerate(points):
            truth[(arm, float(p))] = (float(K[i].mean()), float(K[i].std() / math.sqrt(y.size)), float(closed[i]))
    return truth


def _theorem3_summarize(cfg, rows):
    truth = _theorem3_truth(cfg)
    out = []
    for norm in Normalization:
        for (arm, point), (true_value, truth_se, closed) in truth.items():
            vals = np.array([r["value"] for r in rows
                             if r["normalization"] == norm.value and r["arm"] == arm and r["point"] == point])
            mean = float(vals.mean())
            se = float(math.sqrt(vals.var(ddof=1) / vals.size + truth_se**2))
            out.append(dict(normalization=norm.value, arm=arm, point=point, mc_mean=mean, truth=true_value,
                            closed_form=closed, se=se, z=(mean - true_value) / se,
                            ratio=mean / true_value, within_3se=abs(mean - true_value) <= 3 * se))
    return {"evaluations": out}, out


# ---------------------------------------------------------------------------
# theorem4_rate: squared RKHS error of the weighted embeddings versus n


def _theorem4_tasks(cfg):
    for n in cfg["ns"]:
        for rep in range(cfg["reps"]):
            yield ("theorem4_rate", cfg, int(n), rep)


def _theorem4_trial(task):
    _, cfg, n, rep = task
    gen = _scenario_gen(cfg, n)
    data = gen_scenario(gen, substream(cfg["seed"], n, rep))
    bw = float(cfg["bandwidth"])
    kernel = KernelSpec.gaussian(bw)
    rows = []
    for norm in Normalization:
        mu1, mu0 = ipw_embeddings(data, gen.propensity_model(), kernel, norm)
        for arm, emb in ((1, mu1), (0, mu0)):
            law = potential_outcome_law(gen, arm)
            w = emb.weights
            err = float(w @ gram(kernel, emb.points) @ w - 2.0 * w @ law.embedding(emb.points[:, 0], bw)
                        + law.squared_norm(bw))
            rows.append(dict(n=n, rep=rep, normalization=norm.value, arm=arm, sq_error=err))
    return rows


def _theorem4_summarize(cfg, rows):
    out = []
    for norm in Normalization:
        for arm in (1, 0):
            prev = None
            for n in cfg["ns"]:
                errs = np.array([r["sq_error"] for r in rows
                                 if r["normalization"] == norm.value and r["arm"] == arm and r["n"] == n])
                mse = float(errs.mean())
                out.append(dict(normalization=norm.value, arm=arm, n=n, mse=mse,
                                se=float(errs.std(ddof=1) / math.sqrt(errs.size)),
                                ratio=(mse / prev) if prev else math.nan))
                prev = mse
    return {"rates": out}, out


# ---------------------------------------------------------------------------
# running and writing


_REGISTRY: dict[str, tuple[Callable, Callable, Callable]] = {
    "table1": (_table1_tasks, _table1_trial, _table1_summarize),
    "mixture_shift": (_mixture_tasks, _mixture_trial, _mixture_summarize),
    "herding_demo": (_herding_tasks, _herding_trial, _herding_summarize),
    "ope_sweep": (_ope_tasks, _ope_trial, _ope_summarize),
    "theorem3_check": (_theorem3_tasks, _theorem3_trial, _theorem3_summarize),
    "theorem4_rate": (_theorem4_tasks, _theorem4_trial, _theorem4_summarize),
}


def worker_count() -> int:
    cpus = os.cpu_count() or 1
    cap = os.environ.get("CFK_THREADS")
    if cap is None:
        return cpus
    try:
        value = int(cap)
    except ValueError:
        raise ConfigError(f"CFK_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(cpus, value))


def _run_task(task):
    return _REGISTRY[task[0]][1](task)


@dataclass
class RunResult:
    config: dict
    rows: list
    summary: Any
    plot: list


def execute(config: Union[ExperimentConfig, dict], workers: Optional[int] = None) -> RunResult:
    """Run an experiment in memory. Row order follows task order whatever the worker count."""
    cfg = resolve(config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config))
    tasks_fn, _, summarize = _REGISTRY[cfg["experiment"]]
    tasks = list(tasks_fn(cfg))
    workers = worker_count() if workers is None else workers
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        chunks = [_run_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    summary, plot = summarize(cfg, rows)
    return RunResult(cfg, rows, summary, plot)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if not math.isfinite(value) else value
    return value


def config_line(cfg: dict) -> str:
    return "# config: " + json.dumps(_jsonable(cfg), sort_keys=True, separators=(",", ":"))


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, cfg: dict, rows: list):
    """CSV with a leading ``# config:`` comment line and shortest round-trip floats."""
    columns: list = []
    for row in rows:
        columns.extend(k for k in row if k not in columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(config_line(cfg) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c, "")) for c in columns])


def run(config: Union[ExperimentConfig, dict], out_dir, workers: Optional[int] = None) -> dict:
    """Run and write ``<experiment>_trials.csv``, ``<experiment>_summary.json`` and ``<experiment>_plot.csv``."""
    result = execute(config, workers)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = result.config["experiment"]
    paths = {
        "trials": out / f"{name}_trials.csv",
        "summary": out / f"{name}_summary.json",
        "plot": out / f"{name}_plot.csv",
    }
    write_csv(paths["trials"], result.config, result.rows)
    write_csv(paths["plot"], result.config, result.plot)
    document = {"experiment": name, "seed": result.config["seed"], "config": result.config, "results": result.summary}
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(_jsonable(document), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return paths
