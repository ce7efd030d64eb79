"""Command-line front-end: ``twinspring <command> --config <path>``.

Exit codes: 0 success, 2 config error, 3 numerical or divergence
error, 4 validation failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from importlib import metadata

import numpy as np

from . import analytic, checks, estimate, sim
from .config import ConfigError, ScenarioConfig, default_config, load_config
from .model import OscillatorMode, build_pair, effective_temperature
from .table import ResultTable

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4
MAX_FULLBAND_STEPS = 1e9
FULLBAND_TOL = 0.10
ENTRY_NAMES = ("X1", "Y1", "X2", "Y2")


class ValidationFailure(RuntimeError):
    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


def tool_version() -> str:
    try:
        return metadata.version("twinspring")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _table(config: ScenarioConfig, command, columns, units, normalization) -> ResultTable:
    meta = {
        "command": command,
        "config_hash": config.hash(),
        "seed": config["run"]["seed"],
        "tool_version": tool_version(),
        "normalization": normalization,
    }
    return ResultTable(list(columns), list(units), [], meta)


# --- commands ------------------------------------------------------------


def cmd_stationary_sweep(config: ScenarioConfig, gbar_list=None) -> ResultTable:
    """Zero-frequency extrema versus gain, spectral normalization.

    Monte Carlo columns are NaN unless ``sweep.mc`` is set.
    """
    gbar_list = config.gbar_list() if gbar_list is None else list(gbar_list)
    for i, g in enumerate(gbar_list):
        if not 0 <= g < 1:
            raise ConfigError(f"gbar_list[{i}] = {g:g}: stationary sweep requires 0 <= gbar < 1")
    pair = config.pair()
    var_dtheta = config.dtheta_rms**2
    sw = config["sweep"]
    t = _table(
        config,
        "stationary-sweep",
        ("gbar", "smin_analytic", "smax_analytic", "smin_corrected", "smin_mc", "smax_mc", "theta_min_rad"),
        ("1", "1", "1", "1", "1", "1", "rad"),
        "spectral",
    )
    for i, g in enumerate(gbar_list):
        lo = analytic.stationary_min(g, pair.alpha)
        hi = analytic.stationary_max(g, pair.alpha)
        corrected = analytic.phase_noise_corrected(lo.value, hi.value, var_dtheta)
        smin_mc = smax_mc = math.nan
        if sw["mc"]:
            m, _ = estimate.simulated_zero_freq_matrix(pair.with_gbar(g), sw["mc_records"], config["run"]["seed"] + i)
            m = estimate.jittered_covariance(m, config.dtheta_rms)
            smin_mc = estimate.global_min(m, "spectral").value
            smax_mc = estimate.global_max(m, "spectral").value
        t.append([g, lo.value, hi.value, corrected, smin_mc, smax_mc, lo.theta])
    return t


def cmd_burst(config: ScenarioConfig) -> ResultTable:
    """Minimal variance versus delay after drive onset, with analytic overlays."""
    pair = config.pair()
    sched = config.schedule()
    run = config["run"]
    ens = sim.run_burst_ensemble(pair, sched, run["seed"], run["workers"])
    ens = sim.apply_phase_jitter(ens, config.dtheta_rms, run["seed"])
    if ens.valid_samples.shape[0] < estimate.MIN_BURSTS:
        raise sim.DivergenceError(
            f"only {ens.valid_samples.shape[0]} of {ens.n_bursts} bursts survived; "
            f"first aborted burst index {int(np.argmax(ens.aborted))}"
        )
    covs = estimate.ensemble_covariances(ens)
    ref = analytic.covariance_trajectory(pair, np.eye(2), ens.times)
    plus = analytic.eigen_quadrature_variance(pair, ref, "plus")
    t = _table(
        config,
        "burst",
        ("t_s", "sigma2_min", "sigma2_min_analytic_no_jitter", "sigma2_plus_analytic"),
        ("s", "1", "1", "1"),
        "variance",
    )
    for k, tk in enumerate(ens.times):
        t.append([tk, estimate.global_min(covs[k]).value, analytic.min_quadrature_from_cov(ref[k]).value, plus[k]])
    return t


def scaled_modes(config: ScenarioConfig, scale: float):
    """Both modes with frequencies and linewidths multiplied by ``scale``."""
    out = []
    for name in ("mode1", "mode2"):
        s = config[name]
        out.append(
            OscillatorMode.from_hz(
                s["mass_kg"], s["freq_hz"] * scale, s["q_factor"], s["gamma_eff_hz"] * scale, s["temperature_k"]
            )
        )
    return out


def cmd_fullband_validate(config: ScenarioConfig) -> ResultTable:
    """Full-band ensemble demodulated by software lock-ins versus the
    rotating-frame stationary covariance (variance normalization)."""
    fb = config["fullband"]
    scale = fb["freq_scale"]
    if not scale > 0:
        raise ConfigError("fullband.freq_scale: must be > 0")
    gbar = config.pair().gbar
    if not gbar < 1:
        raise ConfigError(f"drive: full-band validation needs a stationary state, gbar = {gbar:g} >= 1")
    m1, m2 = scaled_modes(config, scale)
    pair = build_pair(m1, m2, gbar=gbar)
    f_max = max(m1.omega, m2.omega) / (2 * math.pi)
    steps = fb["duration_s"] * fb["steps_per_period"] * f_max * fb["n_traj"]
    if steps > MAX_FULLBAND_STEPS:
        suggest = scale * MAX_FULLBAND_STEPS / steps
        raise ConfigError(
            f"fullband: projected {steps:.3g} trajectory-steps exceeds {MAX_FULLBAND_STEPS:.0e}; "
            f"set fullband.freq_scale <= {suggest:.3g} (duration_s scaled by {scale / suggest:.3g}) "
            "or lower fullband.n_traj"
        )
    run = sim.fullband_demodulated_covariance(
        pair,
        n_traj=fb["n_traj"],
        duration=fb["duration_s"],
        snapshot_interval=fb["snapshot_interval_s"],
        steps_per_period=fb["steps_per_period"],
        lockin_tau=fb["lockin_tau_s"],
        lockin_order=fb["lockin_order"],
        seed=config["run"]["seed"],
    )
    ref = analytic.embed_subsystem(analytic.stationary_covariance(pair).sigma)
    t = _table(
        config,
        "fullband-validate",
        ("entry", "cov_fullband", "cov_rotating", "deviation", "sign_match", "passed"),
        ("-", "1", "1", "1", "bool", "bool"),
        "variance",
    )
    failed = []
    for i in range(4):
        for j in range(i, 4):
            a, b = run.covariance[i, j], ref[i, j]
            dev = (a - b) / math.sqrt(ref[i, i] * ref[j, j])
            sign_ok = abs(b) < 1e-9 or np.sign(a) == np.sign(b)
            ok = abs(dev) < FULLBAND_TOL and sign_ok
            name = ENTRY_NAMES[i] + ENTRY_NAMES[j]
            if not ok:
                failed.append(name)
            t.append([name, a, b, dev, int(sign_ok), int(ok)])
    if failed:
        raise ValidationFailure(f"full-band entries outside tolerance: {', '.join(failed)}", t)
    return t


def cmd_analytic_eval(config: ScenarioConfig) -> ResultTable:
    """Derived scalars of the configured pair."""
    p = config.pair()
    t = _table(
        config,
        "analytic-eval",
        ("k_threshold", "gbar", "lambda_plus", "lambda_minus", "alpha", "alpha_prime", "t_eff1", "t_eff2"),
        ("N/m", "1", "1/s", "1/s", "1", "1", "K", "K"),
        "variance",
    )
    t.append(
        [
            p.k_threshold,
            p.gbar,
            p.lambda_plus,
            p.lambda_minus,
            p.alpha,
            p.alpha_prime,
            effective_temperature(p.mode1),
            effective_temperature(p.mode2),
        ]
    )
    return t


def cmd_validate(config: ScenarioConfig, out=None) -> int:
    out = sys.stdout if out is None else out
    run = config["run"]
    results = checks.run_suite(config.pair(), config.schedule(), run["seed"], run["workers"])
    for r in results:
        print(r.line(), file=out)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_VALIDATION if failed else EXIT_OK


# --- entry point ---------------------------------------------------------

COMMANDS = {
    "stationary-sweep": cmd_stationary_sweep,
    "burst": cmd_burst,
    "fullband-validate": cmd_fullband_validate,
    "analytic-eval": cmd_analytic_eval,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twinspring", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {tool_version()}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI scenario file (default: built-in reference device)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", help="CSV output path (default: run.out_path, else stdout)")
        if name == "stationary-sweep":
            p.add_argument("--gbar", help="comma-separated gains, overrides sweep.gbar_list")
            p.add_argument("--mc", action="store_true", help="add Monte Carlo estimates")
    return ap


def _resolve(args) -> ScenarioConfig:
    config = default_config() if args.config is None else load_config(args.config)
    run, sweep = {}, {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.workers is not None:
        run["workers"] = args.workers
    if args.out is not None:
        run["out_path"] = args.out
    if getattr(args, "gbar", None) is not None:
        sweep["gbar_list"] = args.gbar
    if getattr(args, "mc", False):
        sweep["mc"] = True
    return config.with_overrides(run=run, sweep=sweep)


def _emit(table: ResultTable, config: ScenarioConfig):
    path = config["run"]["out_path"]
    if path:
        table.write(path)
    else:
        sys.stdout.write(table.to_csv())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve(args)
        if args.command == "validate":
            return cmd_validate(config)
        config.pair()  # surface drive/mode errors as config errors
        table = COMMANDS[args.command](config)
        _emit(table, config)
        return EXIT_OK
    except (ConfigError, sim.StepSizeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as exc:
        if exc.table is not None:
            _emit(exc.table, config)
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (sim.DivergenceError, analytic.AboveThresholdError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
