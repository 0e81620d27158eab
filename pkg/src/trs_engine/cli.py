"""Command-line surface: tide tooling, calibration fits, simulation,
training, evaluation and report aggregation.

Every command prints a short human summary, writes machine-readable CSV or
JSON next to its outputs together with the fully resolved configuration,
and exits 0 only on success.  ``TRS_ENGINE_SEED`` provides a fallback seed
when neither a flag nor the config sets one.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .control import make_controller
from .geometry import fit_area_model, load_stage_storage_csv, volume_between
from .hydraulics import (
    Direction,
    RampCalibrationTrace,
    SluicingTrace,
    calibrate_zeta,
    ebb_hill_chart,
    fit_discharge_coefficients,
    flood_hill_chart,
)
from .simulator import (
    SluiceMode,
    TurbineMode,
    energy_summary,
    export_trace,
    import_trace,
    simulate,
)
from .tide import (
    apply_correction,
    calibrate_correction_factor,
    export_tide_csv,
    ingest_tide_csv,
    synthesize_tide,
)

EXIT_DEGENERATE = 3


def _resolve_seed(flag_seed: int | None, config: RunConfig) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("TRS_ENGINE_SEED")
    if env is not None:
        return int(env)
    return config.seed


def _write_json(payload: dict, path: Path) -> None:
    payload = {"schema_version": 1, **payload}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _prepare_out_dir(out_dir: str | Path, config: RunConfig) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "resolved_config.yaml")
    return out


@click.group()
@click.version_option(__version__)
def main() -> None:
    """Tidal range structure engine: simulate, calibrate, train, evaluate."""


@main.command("tide-gen")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True, help="Output tide CSV.")
@click.option("--duration-days", type=float, default=None, help="Override duration.")
def tide_gen(config_path, out, duration_days):
    """Synthesize harmonic forcing into a tide CSV."""
    config = RunConfig.load(config_path)
    tc = config.tide
    duration_s = (duration_days if duration_days is not None else tc.duration_days) * 86400.0
    series = synthesize_tide(
        tc.harmonic_constituents(), tc.mean_level_m, tc.start_time_s, duration_s, tc.dt_s,
        datum_offset_m=tc.datum_offset_m,
    )
    if tc.correction_factor != 1.0:
        series = apply_correction(series, tc.correction_factor)
    out_path = Path(out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    export_tide_csv(series, out_path)
    click.echo(
        f"wrote {len(series)} samples, dt={series.dt_s:.0f} s, "
        f"range {series.levels_m.max() - series.levels_m.min():.2f} m -> {out_path}"
    )


@main.command("tide-calibrate")
@click.option("--predicted", type=click.Path(exists=True), required=True)
@click.option("--reference", type=click.Path(exists=True), required=True)
@click.option("--json", "json_out", type=click.Path(), default=None)
def tide_calibrate(predicted, reference, json_out):
    """Least-squares correction factor between two tide CSVs."""
    pred = ingest_tide_csv(predicted)
    ref = ingest_tide_csv(reference)
    c_f = calibrate_correction_factor(pred, ref)
    click.echo(f"C_f = {c_f:.6f}")
    if json_out:
        _write_json({"correction_factor": c_f}, Path(json_out))


@main.command("fit-area")
@click.option("--points", type=click.Path(exists=True), required=True,
              help="Stage-storage CSV (z_m,delta_v_m3).")
@click.option("--json", "json_out", type=click.Path(), default=None)
def fit_area(points, json_out):
    """Fit the linear equivalent-wetted-area law to stage-storage points."""
    pts = load_stage_storage_csv(points)
    model = fit_area_model(pts)
    s = model.slope_2s / 2.0
    click.echo(f"s = {s:.6g} m^2/m, Al0 = {model.al0:.6g} m^2")
    residuals = []
    for p in pts:
        if p.z_m == 0:
            continue
        pred = volume_between(model, 0.0, p.z_m)
        rel = (pred - p.delta_v_m3) / p.delta_v_m3
        residuals.append({"z_m": p.z_m, "predicted_m3": pred, "relative_error": rel})
        click.echo(f"  z={p.z_m:5.1f} m: predicted {pred:.4g} m^3 ({rel * 100:+.2f}%)")
    if json_out:
        _write_json(
            {"s_m2_per_m": s, "al0_m2": model.al0, "residuals": residuals},
            Path(json_out),
        )


def _sluicing_trace_from_csv(path: str, n_turbines: int) -> SluicingTrace:
    trace = import_trace(path)
    if len(trace) < 2:
        raise click.ClickException(f"{path}: trace too short")
    records = trace.records
    steps = records[1:]
    sluices_on = sum(r.sluice_mode is SluiceMode.ONLINE for r in steps) > len(steps) / 2
    idling = sum(r.turbine_mode is TurbineMode.IDLING for r in steps) > len(steps) / 2
    return SluicingTrace(
        dt_s=trace.dt_s,
        ocean_m=np.array([r.ocean_m for r in records]),
        lagoon_m=np.array([r.lagoon_m for r in records]),
        sluices_online=sluices_on,
        n_idling_turbines=n_turbines if idling else 0,
    )


@main.command("fit-cd")
@click.option("--trace", "traces", type=click.Path(exists=True), multiple=True,
              required=True, help="Sluicing-stage trace CSVs (repeatable).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--json", "json_out", type=click.Path(), default=None)
def fit_cd(traces, config_path, json_out):
    """Fit sluice and idling-turbine discharge coefficients to traces."""
    config = RunConfig.load(config_path)
    bundle = config.plant.bundle()
    sluicing = [_sluicing_trace_from_csv(t, bundle.spec.n_turbines) for t in traces]
    coeffs = fit_discharge_coefficients(sluicing, bundle.area_model, bundle.spec)
    click.echo(f"cd_sluice = {coeffs.cd_sluice:.4f}, cd_turbine = {coeffs.cd_turbine:.4f}")
    if json_out:
        _write_json(
            {"cd_sluice": coeffs.cd_sluice, "cd_turbine": coeffs.cd_turbine},
            Path(json_out),
        )


@main.command("fit-zeta")
@click.option("--trace", "trace_path", type=click.Path(exists=True), required=True,
              help="Ramp trace CSV (time_s,head_m,power_w).")
@click.option("--direction", type=click.Choice(["ebb", "flood"]), default="ebb")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--json", "json_out", type=click.Path(), default=None)
def fit_zeta(trace_path, direction, config_path, json_out):
    """Fit accelerating/decelerating ramp constants to a power record.

    Exits with status 3 when the record never moves (degenerate fit).
    """
    config = RunConfig.load(config_path)
    bundle = config.plant.bundle()
    rows = []
    with open(trace_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"time_s", "head_m", "power_w"}:
            raise click.ClickException(f"{trace_path}: expected header 'time_s,head_m,power_w'")
        for row in reader:
            rows.append((float(row["time_s"]), float(row["head_m"]), float(row["power_w"])))
    if len(rows) < 3:
        raise click.ClickException(f"{trace_path}: need at least 3 samples")
    dt = rows[1][0] - rows[0][0]
    trace = RampCalibrationTrace(
        dt_s=dt,
        head_m=np.array([r[1] for r in rows]),
        power_w=np.array([r[2] for r in rows]),
    )
    chart = bundle.ebb_chart if direction == "ebb" else bundle.flood_chart
    fit = calibrate_zeta(trace, chart, bundle.spec, bundle.coeffs.cd_turbine)
    click.echo(
        f"zeta_accel = {fit.zeta_accel_min:.3f} min, "
        f"zeta_decel = {fit.zeta_decel_min:.3f} min, ssr = {fit.ssr:.4g}"
        + (" [degenerate]" if fit.degenerate else "")
    )
    if json_out:
        _write_json(
            {
                "zeta_accel_min": fit.zeta_accel_min,
                "zeta_decel_min": fit.zeta_decel_min,
                "ssr": fit.ssr,
                "degenerate": fit.degenerate,
            },
            Path(json_out),
        )
    if fit.degenerate:
        sys.exit(EXIT_DEGENERATE)


@main.command("simulate")
@click.option("--tide", "tide_path", type=click.Path(exists=True), required=True)
@click.option("--scheme", type=click.Choice(["eog", "twp"]), default=None,
              help="Override the configured control scheme.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", type=click.Path(), default="sim_out")
@click.option("--initial-level", type=float, default=None)
def simulate_cmd(tide_path, scheme, config_path, out_dir, initial_level):
    """Run a heuristic controller over a tide file."""
    config = RunConfig.load(config_path)
    if scheme:
        config.control.scheme = scheme
    bundle = config.plant.bundle()
    tide = ingest_tide_csv(tide_path, datum_offset_m=config.tide.datum_offset_m)
    controller = make_controller(config.control.scheme, **config.control.controller_kwargs())
    trace = simulate(
        controller, tide, bundle,
        initial_level_m=initial_level, dt_s=tide.dt_s,
    )
    out = _prepare_out_dir(out_dir, config)
    export_trace(trace, out / "trace.csv")
    summary = energy_summary(trace)
    from .rl.ppo import count_positive_head_pumping, mode_occupancy

    payload = {
        "scheme": config.control.scheme,
        "steps": len(trace) - 1,
        "dt_s": tide.dt_s,
        **summary,
        "net_gwh": summary["net_j"] / 3.6e12,
        "mode_occupancy": mode_occupancy(trace),
        "pumping_at_positive_head_steps": count_positive_head_pumping(trace),
    }
    _write_json(payload, out / "summary.json")
    click.echo(
        f"{config.control.scheme}: generated {summary['generated_j'] / 3.6e12:.3f} GWh, "
        f"pump {summary['pump_input_j'] / 3.6e12:.3f} GWh, "
        f"net {summary['net_j'] / 3.6e12:.3f} GWh -> {out}"
    )


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--tide", "tide_path", type=click.Path(exists=True), default=None,
              help="Training forcing CSV; synthesized from config when omitted.")
@click.option("--out-dir", type=click.Path(), default="train_out")
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=1)
@click.option("--total-steps", type=int, default=None)
@click.option("--quiet", is_flag=True, default=False)
def train_cmd(config_path, tide_path, out_dir, seed, jobs, total_steps, quiet):
    """Train the PPO policy on synthetic or supplied forcing."""
    from .rl.env import NormalizationSpec, make_env
    from .rl.ppo import save_checkpoint, train, write_learning_curve

    config = RunConfig.load(config_path)
    seed = _resolve_seed(seed, config)
    if total_steps is not None:
        config.rl.total_steps = total_steps
    bundle = config.plant.bundle()
    tc = config.tide
    if tide_path:
        tide = ingest_tide_csv(tide_path, datum_offset_m=tc.datum_offset_m)
    else:
        duration_s = max(
            tc.duration_days * 86400.0, (config.rl.episode_steps + 2) * tc.dt_s
        )
        tide = synthesize_tide(
            tc.harmonic_constituents(), tc.mean_level_m, tc.start_time_s,
            duration_s, tc.dt_s, datum_offset_m=tc.datum_offset_m,
        )
    norm = NormalizationSpec()

    def factory(env_seed: int):
        return make_env(
            tide, bundle, config.rl.episode_steps, tc.dt_s, seed=env_seed, norm=norm
        )

    def progress(point, diag):
        if not quiet:
            click.echo(
                f"update {point.update_idx}: mean episode net "
                f"{point.mean_episode_energy_j / 3.6e12:.4f} GWh, "
                f"entropy {point.entropy:.3f}, beta {point.beta:.4f}"
            )

    policy, curve = train(
        factory, config.rl.n_envs, config.rl.total_steps,
        seed=seed, config=config.rl.ppo_config(), jobs=jobs, progress=progress,
    )
    out = _prepare_out_dir(out_dir, config)
    reward_scale = 1.0 / (
        bundle.spec.n_turbines * bundle.spec.turbine_capacity_w * tc.dt_s
    )
    save_checkpoint(
        out / "checkpoint.npz", policy, norm, reward_scale, extra={"seed": seed}
    )
    write_learning_curve(curve, out / "learning_curve.csv")
    final = curve[-1].mean_episode_energy_j / 3.6e12 if curve else float("nan")
    _write_json(
        {
            "updates": len(curve),
            "final_mean_episode_energy_gwh": final,
            "seed": seed,
            "total_steps": config.rl.total_steps,
        },
        out / "summary.json",
    )
    click.echo(f"trained {len(curve)} updates; final mean episode net {final:.4f} GWh -> {out}")


@main.command("evaluate")
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--scheme", type=click.Choice(["eog", "twp"]), default=None,
              help="Evaluate a heuristic through the same path instead.")
@click.option("--tide", "tide_path", type=click.Path(exists=True), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", type=click.Path(), default="eval_out")
@click.option("--initial-level", type=float, default=None)
def evaluate_cmd(checkpoint, scheme, tide_path, config_path, out_dir, initial_level):
    """Greedy policy (or heuristic) evaluation over a forcing series."""
    from .rl.ppo import evaluate, load_checkpoint

    if (checkpoint is None) == (scheme is None):
        raise click.ClickException("exactly one of --checkpoint or --scheme is required")
    config = RunConfig.load(config_path)
    bundle = config.plant.bundle()
    tide = ingest_tide_csv(tide_path, datum_offset_m=config.tide.datum_offset_m)
    if checkpoint:
        policy, norm, _ = load_checkpoint(checkpoint)
        report, trace = evaluate(
            policy, tide, bundle, tide.dt_s, norm=norm, initial_level_m=initial_level
        )
        subject = Path(checkpoint).name
    else:
        controller = make_controller(scheme, **config.control.controller_kwargs())
        report, trace = evaluate(
            controller, tide, bundle, tide.dt_s, initial_level_m=initial_level
        )
        subject = scheme
    out = _prepare_out_dir(out_dir, config)
    report["subject"] = subject
    _write_json(report, out / "report.json")
    export_trace(trace, out / "trace.csv")
    click.echo(
        f"{subject}: generated {report['generated_gwh']:.3f} GWh, "
        f"pump {report['pump_input_gwh']:.3f} GWh, net {report['net_gwh']:.3f} GWh, "
        f"positive-head pumping steps {report['pumping_at_positive_head_steps']} -> {out}"
    )


@main.command("report")
@click.argument("inputs", nargs=-1, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default=None, help="Comparison table CSV.")
def report_cmd(inputs, out):
    """Aggregate evaluation JSONs into a comparison table."""
    if not inputs:
        raise click.ClickException("no evaluation reports given")
    rows = []
    for path in inputs:
        data = json.loads(Path(path).read_text())
        rows.append(
            {
                "subject": data.get("subject", Path(path).stem),
                "generated_gwh": data["generated_gwh"],
                "pump_input_gwh": data["pump_input_gwh"],
                "net_gwh": data["net_gwh"],
                "pumping_at_positive_head_steps": data.get(
                    "pumping_at_positive_head_steps", 0
                ),
            }
        )
    rows.sort(key=lambda r: -r["net_gwh"])
    header = list(rows[0].keys())
    click.echo(" | ".join(header))
    for r in rows:
        click.echo(
            " | ".join(
                f"{r[k]:.3f}" if isinstance(r[k], float) else str(r[k]) for k in header
            )
        )
    if out:
        with open(out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=header)
            writer.writeheader()
            writer.writerows(rows)


if __name__ == "__main__":
    main()
