"""Experiment orchestration: configs, controller artifacts, CSV emission,
multi-seed aggregation.

A run is fully determined by one flat key=value config plus CLI overrides.
Seed-level parallelism uses a spawn-based worker pool; every file is
written by exactly one worker.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ctrlq import agents, envs, lti, qnet, synth
from ctrlq.agents import AgentConfig, RunLog
from ctrlq.errors import ConfigurationError
from ctrlq.lti import LearningModel, NTKBounds, UncertaintyModel
from ctrlq.synth import FixedGains, H2Weights, HinfWeights, LTIController

RUN_CSV_COLUMNS = (
    "episode", "steps", "return", "moving_avg_100", "loss_mean",
    "theta1_mean", "theta2_mean", "u_mean_abs", "u_max_abs", "epsilon",
)

TRACE_CSV_COLUMNS = ("r", "q1", "q2", "theta1", "theta2", "u", "epsilon")


@dataclass
class RunConfig:
    """Everything needed to reproduce one (env, variant) experiment."""

    env_id: str = "cartpole"
    variant: str = "hinf_dynamic"
    seeds: list[int] = field(default_factory=lambda: [0])
    episodes: int = 2000
    alpha: float = 5e-5
    discount: float = 1.0
    hidden: int = 2500
    bias_std: float = 0.45
    init_gain: float = 1.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay: float = 0.995
    target_sync: int = 500
    buffer_size: int = 100_000
    batch_size: int = 64
    h2_cache_tol: float = 0.01
    # H2 weights.
    h2_wx: tuple[float, float, float] = (1e-4, 1.0, 1e-2)
    h2_wc: float = 1e-4
    # H-infinity weights and synthesis knobs.
    w_r: float = 1.0
    w_qhat: float = 1.0
    q_scale: float = 1.0
    delta_q_frac: float = 0.1
    delta_exp_frac: float = 0.1
    process_noise: float = 1e-2
    gamma_tol: float = 1e-3
    # Kernel bounds: explicit, from file, or estimated by a plain run.
    theta1_min: float | None = None
    theta1_max: float | None = None
    ratio_min: float | None = None
    ratio_max: float | None = None
    bounds_file: str | None = None
    bounds_episodes: int = 200
    bounds_safety: float = 1.1
    # Orchestration.
    outdir: str = "runs/out"
    workers: int = 2
    collect_traces: bool = True  # per-step traces for the first seed

    def __post_init__(self):
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        envs.spec(self.env_id)
        if self.variant not in agents.VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")

    def agent_config(self, collect_traces: bool = False) -> AgentConfig:
        return AgentConfig(
            variant=self.variant,
            alpha=self.alpha,
            discount=self.discount,
            hidden=self.hidden,
            bias_std=self.bias_std,
            init_gain=self.init_gain,
            episodes=self.episodes,
            eps_start=self.eps_start,
            eps_end=self.eps_end,
            eps_decay=self.eps_decay,
            target_sync=self.target_sync,
            buffer_size=self.buffer_size,
            batch_size=self.batch_size,
            h2_cache_tol=self.h2_cache_tol,
            collect_traces=collect_traces,
        )

    def h2_weights(self) -> H2Weights:
        return H2Weights(wx=np.array(self.h2_wx), wc=self.h2_wc)

    def hinf_weights(self) -> HinfWeights:
        return HinfWeights(w_r=self.w_r, w_qhat=self.w_qhat, q_scale=self.q_scale)


@dataclass
class SummaryRow:
    variant: str
    env: str
    mean_final: float
    std_final: float
    n_seeds: int
    best: bool = False
    degenerate_std: bool = False  # single seed: std reported as 0


# ---------------------------------------------------------------------------
# Flat key=value config files


_LIST_KEYS = {"seeds", "h2_wx"}
_STR_KEYS = {"env_id", "variant", "outdir", "bounds_file"}
_BOOL_KEYS = {"collect_traces"}
_INT_KEYS = {"episodes", "hidden", "target_sync", "buffer_size", "batch_size",
             "bounds_episodes", "workers"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return None if raw.lower() == "none" else raw
    if key in _BOOL_KEYS:
        return raw.lower() in ("1", "true", "yes", "on")
    if key in _LIST_KEYS:
        parts = [p for p in raw.replace(",", " ").split() if p]
        if key == "seeds":
            return [int(p) for p in parts]
        return tuple(float(p) for p in parts)
    if key in _INT_KEYS:
        return int(raw)
    if raw.lower() == "none":
        return None
    return float(raw)


def parse_config(path: str | Path | None = None,
                 overrides: dict[str, str] | None = None) -> RunConfig:
    """Key=value config file plus CLI overrides (override wins)."""
    values: dict = {}
    valid = {f.name for f in dataclasses.fields(RunConfig)}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in valid:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
    for key, raw in (overrides or {}).items():
        if key not in valid:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw) if isinstance(raw, str) else raw
    return RunConfig(**values)


def write_config(config: RunConfig, path: str | Path) -> None:
    lines = []
    for f in dataclasses.fields(RunConfig):
        val = getattr(config, f.name)
        if val is None:
            text = "none"
        elif isinstance(val, (list, tuple)):
            text = ",".join(repr(v) for v in val)
        elif isinstance(val, bool):
            text = "true" if val else "false"
        else:
            text = repr(val)
        lines.append(f"{f.name} = {text}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Artifacts: kernel bounds and controllers


def write_bounds(bounds: NTKBounds, path: str | Path) -> None:
    Path(path).write_text(
        f"theta1_min = {bounds.theta1_min!r}\n"
        f"theta1_max = {bounds.theta1_max!r}\n"
        f"ratio_min = {bounds.ratio_min!r}\n"
        f"ratio_max = {bounds.ratio_max!r}\n"
    )


def read_bounds(path: str | Path) -> NTKBounds:
    vals = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            key, raw = line.split("=", 1)
            vals[key.strip()] = float(raw)
    try:
        return NTKBounds(vals["theta1_min"], vals["theta1_max"],
                         vals["ratio_min"], vals["ratio_max"])
    except KeyError as missing:
        raise ConfigurationError(f"bounds file {path} lacks key {missing}") from None


def _write_matrix(fh, name: str, mat: np.ndarray) -> None:
    mat = np.atleast_2d(mat)
    fh.write(f"block {name} {mat.shape[0]} {mat.shape[1]}\n")
    for row in mat:
        fh.write(" ".join(f"{v!r}" for v in row) + "\n")


def write_controller(path: str | Path,
                     controller: LTIController | FixedGains,
                     gamma: float | None = None) -> None:
    """Text artifact, row-major labeled blocks."""
    with open(path, "w") as fh:
        if isinstance(controller, FixedGains):
            fh.write("kind fixed_gains\n")
            fh.write(f"k1 {controller.k1!r}\nk2 {controller.k2!r}\nk3 {controller.k3!r}\n")
            if gamma is not None:
                fh.write(f"gamma {gamma!r}\n")
        else:
            fh.write("kind lti_controller\n")
            g = controller.gamma if gamma is None else gamma
            if g is not None:
                fh.write(f"gamma {g!r}\n")
            _write_matrix(fh, "Ac", controller.Ac)
            _write_matrix(fh, "Bc", controller.Bc)
            _write_matrix(fh, "Cc", controller.Cc)
            _write_matrix(fh, "Dc", controller.Dc)


def read_controller(path: str | Path) -> LTIController | FixedGains:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("kind "):
        raise ConfigurationError(f"{path}: not a controller artifact")
    kind = lines[0].split(None, 1)[1]
    scalars: dict[str, float] = {}
    blocks: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line.startswith("block "):
            _, name, rows, cols = line.split()
            rows, cols = int(rows), int(cols)
            data = [
                [float(v) for v in lines[i + r].split()]
                for r in range(rows)
            ]
            i += rows
            blocks[name] = np.array(data).reshape(rows, cols)
        else:
            key, raw = line.split(None, 1)
            scalars[key] = float(raw)
    if kind == "fixed_gains":
        return FixedGains(scalars["k1"], scalars["k2"], scalars["k3"])
    if kind == "lti_controller":
        return LTIController(blocks["Ac"], blocks["Bc"], blocks["Cc"], blocks["Dc"],
                             gamma=scalars.get("gamma"))
    raise ConfigurationError(f"{path}: unknown controller kind {kind!r}")


# ---------------------------------------------------------------------------
# Kernel bound estimation runs


def collect_bounds(config: RunConfig, seed: int | None = None) -> NTKBounds:
    """Estimate kernel bounds from an uncontrolled learning run.

    Runs the plain variant for bounds_episodes, evaluating the kernel on
    every step, then boxes the observed range.
    """
    seed = config.seeds[0] if seed is None else seed
    cfg = dataclasses.replace(
        config.agent_config(collect_traces=True),
        variant="plain",
        episodes=config.bounds_episodes,
    )
    log = agents.train_run(config.env_id, cfg, seed)
    t1 = np.array(log.traces.theta1)
    t2 = np.array(log.traces.theta2)
    ratios = t2 / t1
    r_lo, r_hi = float(ratios.min()), float(ratios.max())
    r_mid, r_half = 0.5 * (r_lo + r_hi), 0.5 * (r_hi - r_lo)
    s = config.bounds_safety
    return NTKBounds(
        theta1_min=float(t1.min()),
        theta1_max=float(t1.max()) * s,
        ratio_min=r_mid - s * r_half,
        ratio_max=r_mid + s * r_half,
    )


def resolve_bounds(config: RunConfig, outdir: Path | None = None) -> NTKBounds:
    """Bounds from explicit config values, a bounds file, or an estimation run."""
    explicit = (config.theta1_min, config.theta1_max, config.ratio_min, config.ratio_max)
    if all(v is not None for v in explicit):
        return NTKBounds(*explicit)
    if any(v is not None for v in explicit):
        raise ConfigurationError("either give all four bound values or none")
    if config.bounds_file is not None:
        return read_bounds(config.bounds_file)
    bounds = collect_bounds(config)
    if outdir is not None:
        write_bounds(bounds, outdir / "bounds.txt")
    return bounds


def build_model(config: RunConfig, bounds: NTKBounds) -> LearningModel:
    """Nominal learning model at the box midpoint with data-driven
    uncertainty magnitudes."""
    spread = (bounds.theta1_max - bounds.theta1_min) / (
        bounds.theta1_max + bounds.theta1_min
    )
    unc = UncertaintyModel(
        delta_q=np.array([config.delta_q_frac, config.delta_q_frac]),
        delta_theta=spread,
        delta_exp=config.delta_exp_frac,
    )
    return LearningModel(ntk=bounds.midpoint(), discount=config.discount,
                         uncertainty=unc)


def synthesize_controller(
    config: RunConfig, bounds: NTKBounds
) -> tuple[LTIController | FixedGains | None, float | None]:
    """Controller artifact for the configured variant (None for the
    variants that need none)."""
    if config.variant == "hinf_dynamic":
        model = build_model(config, bounds)
        plant = synth.build_plant(model, config.hinf_weights())
        controller, gamma = synth.hinf_synthesize(
            plant, gamma_tol=config.gamma_tol, process_noise=config.process_noise
        )
        return controller, gamma
    if config.variant == "hinf_fixed":
        model = build_model(config, bounds)
        gains = synth.tune_fixed_structure(model, config.hinf_weights(), bounds)
        plants = [
            synth.build_plant(
                LearningModel(ntk=v, discount=model.discount,
                              uncertainty=model.uncertainty),
                config.hinf_weights(),
            )
            for v in bounds.vertices()
        ]
        return gains, synth.worst_case_norm(plants, gains)
    return None, None


# ---------------------------------------------------------------------------
# CSV emission


def moving_average_100(returns: np.ndarray) -> np.ndarray:
    out = np.empty(len(returns))
    csum = np.cumsum(returns)
    for i in range(len(returns)):
        lo = max(0, i - 99)
        out[i] = (csum[i] - (csum[lo - 1] if lo > 0 else 0.0)) / (i - lo + 1)
    return out


def write_run_csv(log: RunLog, path: str | Path) -> None:
    ma = moving_average_100(log.returns())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUN_CSV_COLUMNS)
        for ep, m in zip(log.episodes, ma):
            writer.writerow([
                ep.episode, ep.steps, repr(ep.ret), repr(float(m)),
                repr(ep.loss_mean), repr(ep.theta1_mean), repr(ep.theta2_mean),
                repr(ep.u_mean_abs), repr(ep.u_max_abs), repr(ep.epsilon),
            ])


def read_run_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows)
    return {name: data[:, i] for i, name in enumerate(header)}


def write_trace_csvs(log: RunLog, outdir: Path, seed: int, thin: int = 100) -> None:
    """Per-step trace CSV, thinned kernel scatter, and FFT spectra."""
    tr = log.traces
    if tr is None:
        return
    with open(outdir / f"traces_seed{seed}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_COLUMNS)
        for vals in zip(tr.r, tr.q1, tr.q2, tr.theta1, tr.theta2, tr.u, tr.epsilon):
            writer.writerow([repr(v) for v in vals])
    with open(outdir / f"ntk_scatter_seed{seed}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theta1", "theta2"])
        for i in range(0, len(tr.theta1), thin):
            writer.writerow([repr(tr.theta1[i]), repr(tr.theta2[i])])


def write_fft_csvs(traces_csv: str | Path, outdir: Path, dt: float) -> list[Path]:
    """One-sided spectra of the r, q1, q2 traces as (omega, re, im, magnitude)."""
    data = read_run_csv(traces_csv)  # same reader: header + float rows
    written = []
    for name in ("r", "q1", "q2"):
        signal = data[name]
        freqs, mags = lti.fft_spectrum(signal, dt)
        coeffs = np.fft.rfft(signal)
        path = outdir / f"fft_{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["omega", "re", "im", "magnitude"])
            for f, c, m in zip(freqs, coeffs, mags):
                writer.writerow([repr(2.0 * np.pi * f), repr(c.real), repr(c.imag), repr(m)])
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Multi-seed runs


def _limit_blas_threads() -> None:
    # The training loop is many small BLAS calls; thread pools only add
    # contention, and worker processes must not oversubscribe the cores.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def _seed_worker(args: tuple) -> dict:
    config_values, controller_path, seed, collect_traces, outdir = args
    _limit_blas_threads()
    config = RunConfig(**config_values)
    controller_artifact = (
        read_controller(controller_path) if controller_path is not None else None
    )
    ctrl = agents.build_controller(
        config.variant,
        config.agent_config(),
        h2_weights=config.h2_weights(),
        hinf_controller=(
            controller_artifact if isinstance(controller_artifact, LTIController) else None
        ),
        fixed_gains=(
            controller_artifact if isinstance(controller_artifact, FixedGains) else None
        ),
    )
    log = agents.train_run(
        config.env_id, config.agent_config(collect_traces=collect_traces), seed, ctrl
    )
    out = Path(outdir)
    write_run_csv(log, out / f"run_{config.env_id}_{config.variant}_seed{seed}.csv")
    if collect_traces:
        write_trace_csvs(log, out, seed)
    final = log.final_score()
    return {"seed": seed, "final100": final, "episodes": len(log.episodes)}


def run(config: RunConfig) -> dict:
    """Full experiment: resolve bounds, synthesize, train all seeds, emit CSVs.

    Per-seed training failures are recorded and the remaining seeds continue;
    a synthesis failure before training aborts.
    """
    _limit_blas_threads()
    outdir = Path(config.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_config(config, outdir / "config.txt")

    controller_path = None
    bounds = None
    if config.variant in ("hinf_dynamic", "hinf_fixed", "h2_scheduled"):
        bounds = resolve_bounds(config, outdir)
        write_bounds(bounds, outdir / "bounds.txt")
    if config.variant in ("hinf_dynamic", "hinf_fixed"):
        controller, gamma = synthesize_controller(config, bounds)
        controller_path = outdir / f"controller_{config.variant}.txt"
        write_controller(controller_path, controller, gamma=gamma)

    config_values = dataclasses.asdict(config)
    jobs = [
        (config_values, controller_path, seed,
         config.collect_traces and seed == config.seeds[0], str(outdir))
        for seed in config.seeds
    ]
    results = []
    failures = []
    if config.workers > 1 and len(jobs) > 1:
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as pool:
            futures = {pool.submit(_seed_worker, job): job[2] for job in jobs}
            for fut, seed in futures.items():
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - recorded per seed
                    failures.append({"seed": seed, "error": str(exc)})
    else:
        for job in jobs:
            try:
                results.append(_seed_worker(job))
            except Exception as exc:  # noqa: BLE001
                failures.append({"seed": job[2], "error": str(exc)})

    results.sort(key=lambda r: r["seed"])
    summary = {
        "env_id": config.env_id,
        "variant": config.variant,
        "results": results,
        "failures": failures,
    }
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")

    traces_csv = outdir / f"traces_seed{config.seeds[0]}.csv"
    if traces_csv.exists():
        write_fft_csvs(traces_csv, outdir, dt=config.alpha)
    return summary


# ---------------------------------------------------------------------------
# Reporting


def report(run_dirs: list[str | Path]) -> list[SummaryRow]:
    """Aggregate final-100-episode scores across seeds per (variant, env)."""
    cells: dict[tuple[str, str], list[float]] = {}
    episode_counts: dict[tuple[str, str], set[int]] = {}
    for d in run_dirs:
        summary_path = Path(d) / "summary.json"
        if not summary_path.exists():
            raise ConfigurationError(f"{d}: no summary.json (incomplete run)")
        summary = json.loads(summary_path.read_text())
        key = (summary["variant"], summary["env_id"])
        for res in summary["results"]:
            cells.setdefault(key, []).append(res["final100"])
            episode_counts.setdefault(key, set()).add(res["episodes"])
    rows = []
    for (variant, env), finals in sorted(cells.items()):
        if len(episode_counts[(variant, env)]) > 1:
            raise ConfigurationError(
                f"mismatched episode counts across seeds for {variant}/{env}"
            )
        finals_arr = np.array(finals)
        degenerate = len(finals) < 2
        rows.append(
            SummaryRow(
                variant=variant,
                env=env,
                mean_final=float(finals_arr.mean()),
                std_final=0.0 if degenerate else float(finals_arr.std(ddof=1)),
                n_seeds=len(finals),
                degenerate_std=degenerate,
            )
        )
    best: dict[str, float] = {}
    for row in rows:
        best[row.env] = max(best.get(row.env, -np.inf), row.mean_final)
    for row in rows:
        row.best = row.mean_final == best[row.env]
    return rows


def write_report_csv(rows: list[SummaryRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "env", "mean_final", "std_final",
                         "n_seeds", "best", "degenerate_std"])
        for r in rows:
            writer.writerow([r.variant, r.env, repr(r.mean_final), repr(r.std_final),
                             r.n_seeds, int(r.best), int(r.degenerate_std)])


def format_report(rows: list[SummaryRow]) -> str:
    lines = [f"{'variant':14s} {'env':12s} {'final score':>22s}  best"]
    for r in rows:
        mark = "*" if r.best else " "
        warn = " (single seed)" if r.degenerate_std else ""
        lines.append(
            f"{r.variant:14s} {r.env:12s} {r.mean_final:10.2f} +/- {r.std_final:6.2f}  {mark}{warn}"
        )
    return "\n".join(lines)
