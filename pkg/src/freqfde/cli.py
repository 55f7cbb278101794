"""Command-line entry point.

One JSON config per run (flags override file fields); every command writes
``report.json`` plus a ``manifest.json`` recording input hashes, the seed,
and library versions, so a run can be audited and reproduced.  Exit codes:
0 success, 2 infeasible synthesis / failed validation, 1 usage or runtime
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bench import fault_scenarios, load_plant
from .runtime import (MonteCarloReport, ThresholdSpec, chebyshev_threshold,
                      evaluate_windows, fdr_bound, monte_carlo_rates,
                      sub_gaussian_noise, threshold)
from .sysmodel import FilterForm, StateSpace
from . import synth_detect, synth_estim

_COMMANDS = ("synth-detect", "synth-estimate", "gap", "threshold",
             "simulate", "validate")


class ConfigError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    pass


@dataclass
class RunConfig:
    command: str
    plant: str | None = None
    bands: list = field(default_factory=list)
    seed: int = 0
    outdir: str = "runs/out"
    params: dict = field(default_factory=dict)

    @staticmethod
    def from_sources(path=None, overrides=None) -> "RunConfig":
        data: dict = {}
        if path is not None:
            with open(path) as fh:
                data = json.load(fh)
        if overrides:
            params = dict(data.get("params", {}))
            params.update(overrides.pop("params", {}))
            data.update({k: v for k, v in overrides.items() if v is not None})
            data["params"] = params
        if "command" not in data:
            raise ConfigError("config needs a 'command' field")
        cfg = RunConfig(**data)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.command not in _COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; "
                              f"expected one of {', '.join(_COMMANDS)}")
        for band in self.bands:
            if len(band) != 2 or not (band[0] <= band[1]):
                raise ConfigError(f"malformed band {band!r}")
        needs_plant = self.command in ("synth-detect", "synth-estimate",
                                       "gap", "validate")
        if needs_plant and not self.plant:
            raise ConfigError(f"command {self.command!r} needs a plant")
        if self.command in ("synth-detect", "synth-estimate", "gap") \
                and not self.bands:
            raise ConfigError(f"command {self.command!r} needs at least one band")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_coerce) + "\n"


def _coerce(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(f"not JSON-serializable: {type(x)}")


def _sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _input_hashes(cfg: RunConfig) -> dict:
    hashes = {}
    if cfg.plant:
        p = Path(cfg.plant)
        if p.exists():
            hashes["plant"] = _sha256_file(p)
        else:
            sys_ = load_plant(cfg.plant)
            blob = json.dumps(sys_.to_json_dict(), sort_keys=True)
            hashes["plant"] = hashlib.sha256(blob.encode()).hexdigest()
    for key in ("filter", "design"):
        ref = cfg.params.get(key)
        if ref and Path(str(ref)).exists():
            hashes[key] = _sha256_file(ref)
    return hashes


def _write_manifest(cfg: RunConfig, outdir: Path) -> None:
    manifest = {
        "schema_version": 1,
        "config": cfg.to_json_dict(),
        "inputs_sha256": _input_hashes(cfg),
        "seed": cfg.seed,
        "versions": {
            "python": sys.version.split()[0],
            "freqfde": __version__,
            "numpy": np.__version__,
        },
    }
    try:
        import scipy
        manifest["versions"]["scipy"] = scipy.__version__
    except ImportError:
        pass
    try:
        import cvxpy
        manifest["versions"]["cvxpy"] = cvxpy.__version__
    except ImportError:
        pass
    (outdir / "manifest.json").write_text(_json_dumps(manifest))


def _save_filter(filt: FilterForm, path: Path) -> None:
    path.write_text(_json_dumps(filt.to_json_dict()))


def _load_filter(ref) -> FilterForm:
    with open(ref) as fh:
        return FilterForm.from_json_dict(json.load(fh))


def _cmd_synth_detect(cfg: RunConfig, outdir: Path) -> dict:
    sys_ = load_plant(cfg.plant)
    p = cfg.params
    spec = synth_detect.DetectionSpec(
        band=tuple(cfg.bands[0]), n_r=int(p.get("n_r", 1)),
        d_N=int(p.get("d_N", 1)), alpha=float(p.get("alpha", 0.5)),
        init_pole=float(p.get("pole", 0.1)),
        max_iters=int(p.get("max_iters", 50)), tol=float(p.get("tol", 1e-5)))
    try:
        design = synth_detect.synthesize(sys_, spec)
    except RuntimeError as exc:
        raise InfeasibleError(str(exc)) from exc
    check = synth_detect.validate(design, sys_, grid=int(p.get("grid", 512)))
    _save_filter(design.filter, outdir / "filter.json")
    design_blob = {"kind": "detection", "band": list(design.band),
                   "alpha": design.alpha, "eta1": design.eta1,
                   "eta2": design.eta2,
                   "filter": design.filter.to_json_dict()}
    (outdir / "design.json").write_text(_json_dumps(design_blob))
    return {"eta1": design.eta1, "eta2": design.eta2,
            "objective": design.objective,
            "objective_history": list(design.objective_history),
            "proposals": design.proposals, "converged": design.converged,
            "decoupling_residual": design.decoupling_residual,
            "validation_passed": check.passed}


def _estimation_spec(cfg: RunConfig) -> synth_estim.EstimationSpec:
    p = cfg.params
    a_low = p.get("a_low")
    thetas = p.get("thetas")
    return synth_estim.EstimationSpec(
        band=tuple(cfg.bands[0]), d_N=int(p.get("d_N", 1)),
        beta=float(p.get("beta", 0.0)), pole=float(p.get("pole", 0.1)),
        a_low=None if a_low is None else tuple(float(x) for x in a_low),
        n_samples=int(p.get("n_samples", 6)),
        thetas=None if thetas is None else tuple(float(x) for x in thetas),
        max_iters=int(p.get("max_iters", 50)), tol=float(p.get("tol", 1e-5)))


def _cmd_synth_estimate(cfg: RunConfig, outdir: Path) -> dict:
    sys_ = load_plant(cfg.plant)
    spec = _estimation_spec(cfg)
    try:
        design = synth_estim.synthesize_exact(sys_, spec)
    except RuntimeError as exc:
        raise InfeasibleError(str(exc)) from exc
    check = synth_estim.validate(design, sys_,
                                 grid=int(cfg.params.get("grid", 512)))
    _save_filter(design.filter, outdir / "filter.json")
    design_blob = {"kind": "estimation", "band": list(design.band),
                   "beta": design.beta, "eta1": design.eta1,
                   "eta3": design.eta3,
                   "filter": design.filter.to_json_dict()}
    (outdir / "design.json").write_text(_json_dumps(design_blob))
    return {"eta1": design.eta1, "eta3": design.eta3,
            "upper_bound": design.upper_bound,
            "objective_history": list(design.objective_history),
            "proposals": design.proposals, "converged": design.converged,
            "decoupling_residual": design.decoupling_residual,
            "validation_passed": check.passed}


def _cmd_gap(cfg: RunConfig, outdir: Path) -> dict:
    sys_ = load_plant(cfg.plant)
    spec = _estimation_spec(cfg)
    try:
        result = synth_estim.suboptimality_gap(sys_, spec)
    except RuntimeError as exc:
        raise InfeasibleError(str(exc)) from exc
    _save_filter(result.sampled.filter, outdir / "filter_sampled.json")
    _save_filter(result.exact.filter, outdir / "filter.json")
    return {"lower": result.lower, "upper": result.upper,
            "width": result.width,
            "thetas": list(result.sampled.thetas),
            "sampled": {"eta1": result.sampled.eta1,
                        "eta3_bar": result.sampled.eta3_bar},
            "exact": {"eta1": result.exact.eta1,
                      "eta3": result.exact.eta3,
                      "proposals": result.exact.proposals,
                      "converged": result.exact.converged}}


def _threshold_spec(params: dict) -> ThresholdSpec:
    try:
        return ThresholdSpec(
            lam=float(params["lam"]), eps1=float(params["eps1"]),
            T=int(params["T"]), n_r=int(params["n_r"]),
            eta1=float(params["eta1"]),
            eta2=None if params.get("eta2") is None else float(params["eta2"]),
            f_floor=None if params.get("f_floor") is None
            else float(params["f_floor"]))
    except KeyError as exc:
        raise ConfigError(f"threshold needs parameter {exc.args[0]!r}") from exc


def _cmd_threshold(cfg: RunConfig, outdir: Path) -> dict:
    spec = _threshold_spec(cfg.params)
    J_th = threshold(spec)
    report = {"threshold": J_th, "chebyshev": chebyshev_threshold(spec),
              "spec": dataclasses.asdict(spec)}
    if spec.eta2 is not None and spec.f_floor is not None:
        try:
            report["fdr_bound"] = fdr_bound(spec)
        except ValueError as exc:
            report["fdr_bound"] = None
            report["fdr_note"] = str(exc)
    print(f"J_th = {J_th!r}")
    return report


def _cmd_simulate(cfg: RunConfig, outdir: Path) -> dict:
    p = cfg.params
    if "scenario" not in p:
        raise ConfigError("simulate needs params.scenario")
    scenarios = fault_scenarios()
    name = p["scenario"]
    if name not in scenarios:
        raise ConfigError(f"unknown scenario {name!r}; "
                          f"expected one of {', '.join(sorted(scenarios))}")
    scen = scenarios[name]
    sys_ = scen.plant if not cfg.plant else load_plant(cfg.plant)
    if "filter" not in p:
        raise ConfigError("simulate needs params.filter (path to filter JSON)")
    filt = _load_filter(p["filter"])
    J_th = float(p["threshold"]) if "threshold" in p \
        else threshold(_threshold_spec(p))
    horizon = int(p.get("horizon", scen.horizon))
    T = int(p.get("T", 10))

    rng = np.random.Generator(np.random.Philox(
        key=[np.uint64(cfg.seed), np.uint64(0)]))
    noise = sub_gaussian_noise(p.get("noise_kind", "gaussian"),
                               scen.noise_std, horizon, sys_.n_w, seed=rng)
    dist = scen.disturbance(rng, horizon)
    fault = scen.fault_signal(horizon)

    from .runtime import _simulate_batch
    r = _simulate_batch(sys_, filt, noise[None, :, :], fault,
                        dist[None, :, :] if sys_.n_d else None)[0]
    trace = evaluate_windows(r, T, J_th)
    trace.to_csv(outdir / "trace.csv")
    alarm_idx = np.flatnonzero(trace.alarms)
    return {"scenario": name, "threshold": J_th, "window": T,
            "horizon": horizon, "seed": cfg.seed,
            "alarms": int(trace.alarms.sum()),
            "first_alarm_window": int(alarm_idx[0]) if alarm_idx.size else None,
            "max_statistic": float(trace.J.max())}


def _cmd_validate(cfg: RunConfig, outdir: Path) -> dict:
    p = cfg.params
    if "design" not in p:
        raise ConfigError("validate needs params.design (path to design JSON)")
    with open(p["design"]) as fh:
        blob = json.load(fh)
    sys_ = load_plant(cfg.plant)
    filt = FilterForm.from_json_dict(blob["filter"])
    grid = int(p.get("grid", 512))
    if blob.get("kind") == "detection":
        design = synth_detect.DetectionDesign(
            filter=filt, eta1=blob["eta1"], eta2=blob["eta2"],
            alpha=blob.get("alpha", 0.5), band=tuple(blob["band"]),
            objective_history=(), proposals=0, converged=True,
            decoupling_residual=0.0)
        check = synth_detect.validate(design, sys_, grid=grid)
    elif blob.get("kind") == "estimation":
        design = synth_estim.ExactDesign(
            filter=filt, eta1=blob["eta1"], eta3=blob["eta3"],
            beta=blob.get("beta", 0.0), band=tuple(blob["band"]),
            objective_history=(), proposals=0, converged=True,
            decoupling_residual=0.0)
        check = synth_estim.validate(design, sys_, grid=grid)
    else:
        raise ConfigError("design JSON must declare kind detection|estimation")
    report = dataclasses.asdict(check)
    report["passed"] = check.passed
    if not check.passed:
        raise InfeasibleError("validation failed; see report.json")
    return report


_RUNNERS = {
    "synth-detect": _cmd_synth_detect,
    "synth-estimate": _cmd_synth_estimate,
    "gap": _cmd_gap,
    "threshold": _cmd_threshold,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
}


def run(cfg: RunConfig) -> int:
    """Execute one command; writes report.json + manifest.json in outdir."""
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        report = _RUNNERS[cfg.command](cfg, outdir)
        status = 0
    except InfeasibleError as exc:
        report = {"error": str(exc), "infeasible": True}
        status = 2
    (outdir / "report.json").write_text(_json_dumps(report))
    _write_manifest(cfg, outdir)
    return status


def _parse_param(text: str):
    key, _, raw = text.partition("=")
    if not _:
        raise ConfigError(f"--param expects key=value, got {text!r}")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="freqfde",
        description="Synthesis and validation of frequency-band fault "
                    "detection and estimation filters.")
    parser.add_argument("command", nargs="?", choices=_COMMANDS)
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--plant", help="plant fixture name or JSON path")
    parser.add_argument("--outdir", help="output directory")
    parser.add_argument("--seed", type=int, help="RNG seed (64-bit)")
    parser.add_argument("--band", action="append", metavar="LO,HI",
                        help="frequency band in rad/sample (repeatable)")
    parser.add_argument("--param", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="module parameter override (JSON value)")
    args = parser.parse_args(argv)

    try:
        overrides: dict = {"params": dict(_parse_param(p) for p in args.param)}
        if args.command:
            overrides["command"] = args.command
        if args.plant:
            overrides["plant"] = args.plant
        if args.outdir:
            overrides["outdir"] = args.outdir
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.band:
            overrides["bands"] = [[float(x) for x in b.split(",")]
                                  for b in args.band]
        cfg = RunConfig.from_sources(args.config, overrides)
        return run(cfg)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
