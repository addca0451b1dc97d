"""Seeded Monte-Carlo sweeps over SNR or positioning error.

Every trial draws its own random stream from ``(seed, sweep index, trial
index, attempt)``, so the result set does not depend on how trials are
scheduled across worker threads.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from fris_ce import estimators as est
from fris_ce.model import (
    ChannelSet,
    ConfigError,
    SystemConfig,
    build_phase_matrix,
    build_pilot_matrix,
    build_protocol,
    crandn,
    generate_channels,
    noise_variance,
    synthesize_received,
)
from fris_ce.tensor import DegenerateColumnError, khatri_rao

log = logging.getLogger(__name__)

LS_IDEAL = "ls-ideal-T"
KRF_IDEAL = "krf-ideal-T"
LS_MISMATCHED = "ls-mismatched-T"
KRF_MISMATCHED = "krf-mismatched-T"
JOINT = "joint-TGH"
STATIC = "static-ris-baseline"
ESTIMATORS = (LS_IDEAL, KRF_IDEAL, LS_MISMATCHED, KRF_MISMATCHED, JOINT, STATIC)

# metric plotted for each estimator
HEADLINE = {LS_IDEAL: "nmse_theta", KRF_IDEAL: "nmse_theta", LS_MISMATCHED: "nmse_theta",
            KRF_MISMATCHED: "nmse_theta", JOINT: "nmse_z", STATIC: "nmse_theta"}

SWEEP_AXES = ("snr_db", "sigma_pos")
DEFAULT_SWEEPS = {
    "snr_db": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0],
    "sigma_pos": [1 / 100, 1 / 50, 1 / 20, 1 / 10],
}
CSV_HEADER = ["estimator", "sweep_axis", "sweep_value", "trial",
              "nmse_theta", "nmse_z", "nmse_G", "nmse_H", "nmse_T", "seed"]
METRICS = CSV_HEADER[4:9]
MAX_ATTEMPTS = 10


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    sweep_axis: str = "snr_db"
    sweep_values: tuple = tuple(DEFAULT_SWEEPS["snr_db"])
    estimators: tuple = ESTIMATORS
    output_path: str = "results.csv"

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        vals = tuple(self.sweep_values)
        if not vals:
            raise ConfigError("sweep_values must be nonempty")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) or math.isnan(v) for v in vals):
            raise ConfigError(f"sweep_values must be numbers, got {list(vals)!r}")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError(f"sweep_values must be strictly increasing, got {list(vals)!r}")
        if self.sweep_axis == "sigma_pos" and (vals[0] < 0 or not math.isfinite(vals[-1])):
            raise ConfigError("sigma_pos sweep values must be finite and >= 0")
        object.__setattr__(self, "sweep_values", tuple(float(v) for v in vals))
        ests = tuple(self.estimators)
        bad = [e for e in ests if e not in ESTIMATORS]
        if bad or not ests:
            raise ConfigError(f"unknown or empty estimators {bad}; choose from {ESTIMATORS}")
        if len(set(ests)) != len(ests):
            raise ConfigError(f"duplicate estimators in {list(ests)}")
        object.__setattr__(self, "estimators", ests)
        # validate every point of the sweep up front
        for v in self.sweep_values:
            self.system_at(v)

    def system_at(self, value: float) -> SystemConfig:
        return replace(self.system, **{self.sweep_axis: value})

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = dict(d)
        system = kw.get("system", {})
        if not isinstance(system, dict):
            raise ConfigError("'system' must be an object")
        kw["system"] = SystemConfig.from_dict(system)
        if "sweep_values" not in kw and "sweep_axis" in kw:
            kw["sweep_values"] = DEFAULT_SWEEPS.get(kw["sweep_axis"], [])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {"system": self.system.to_dict(), "sweep_axis": self.sweep_axis,
                "sweep_values": list(self.sweep_values), "estimators": list(self.estimators),
                "output_path": self.output_path}


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)


@dataclass(frozen=True)
class ResultRow:
    estimator: str
    sweep_axis: str
    sweep_value: float
    trial: int
    nmse_theta: float | None = None
    nmse_z: float | None = None
    nmse_G: float | None = None
    nmse_H: float | None = None
    nmse_T: float | None = None
    seed: int = 0


def trial_seed(seed: int, sweep_index: int, trial: int, attempt: int = 0) -> int:
    ss = np.random.SeedSequence([seed, sweep_index, trial, attempt])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def static_ris_baseline(cfg: SystemConfig, rng: np.random.Generator,
                        channels: ChannelSet | None = None) -> dict:
    """Fixed-element RIS trained with ``J*K`` DFT phase configurations.

    Motion is disabled (a single all-ones motion row), so the training
    budget matches the FRIS protocol. Estimates go through the same LS and
    Khatri-Rao path. Returns the NMSE fields of a result row.
    """
    if channels is None:
        channels = generate_channels(cfg, rng)
    L = cfg.J * cfg.K
    Phi = build_phase_matrix(L, cfg.M)
    Xp = build_pilot_matrix(cfg.Q, cfg.T_s)
    T = np.ones((1, cfg.M), dtype=np.complex128)
    # noiseless matched-filter output for each configuration, plus filtered noise
    Y = np.einsum("am,lm,mq->aql", channels.H, Phi, channels.G)[:, :, None, :]
    V = crandn(rng, (cfg.M_r, cfg.T_s, 1, L))
    nv = noise_variance(cfg.M, cfg.Q, cfg.snr_db)
    if nv > 0:
        Y = Y + math.sqrt(nv) * np.einsum("atkl,qt->aqkl", V, Xp.conj()) / cfg.T_s
    bundle = est.resolve_scaling(est.run_krf2(Y, Phi, T), channels)
    rep = est.nmse_report(bundle, channels, T)
    return {"nmse_theta": rep.nmse_theta, "nmse_G": rep.nmse_G, "nmse_H": rep.nmse_H}


def run_trial(cfg: SystemConfig, estimators, rng: np.random.Generator) -> dict:
    """One Monte-Carlo draw; returns ``{estimator: NMSE field dict}``.

    Random draws happen in a fixed order (channels, motion schedule,
    positioning error, receiver noise, baseline noise) whatever estimators
    are selected, so the estimators share the same realization.
    """
    ch = generate_channels(cfg, rng)
    proto = build_protocol(cfg, rng)
    sig = synthesize_received(ch, proto, cfg.snr_db, rng)
    Y = est.matched_filter(sig, proto.Xp)
    out = {}
    for name in estimators:
        if name == STATIC:
            continue
        if name in (LS_IDEAL, LS_MISMATCHED):
            T = proto.T_real if name == LS_IDEAL else proto.T_cmd
            bundle = est.run_ls_theta(Y, proto.Phi, T)
        elif name in (KRF_IDEAL, KRF_MISMATCHED):
            T = proto.T_real if name == KRF_IDEAL else proto.T_cmd
            bundle = est.run_krf2(Y, proto.Phi, T)
        else:
            bundle = est.run_krf3(Y, proto.Phi)
        bundle = est.resolve_scaling(bundle, ch, proto.T_real)
        out[name] = est.nmse_report(bundle, ch, proto.T_real).__dict__
    if STATIC in estimators:
        out[STATIC] = static_ris_baseline(cfg, rng, channels=ch)
    return out


def _run_item(cfg: ExperimentConfig, sweep_index: int, trial: int):
    value = cfg.sweep_values[sweep_index]
    sys_cfg = cfg.system_at(value)
    for attempt in range(MAX_ATTEMPTS):
        s = trial_seed(cfg.system.seed, sweep_index, trial, attempt)
        try:
            res = run_trial(sys_cfg, cfg.estimators, np.random.default_rng(s))
        except DegenerateColumnError as exc:
            log.warning("%s=%g trial %d attempt %d: %s; resampling",
                        cfg.sweep_axis, value, trial, attempt, exc)
            continue
        return [ResultRow(estimator=name, sweep_axis=cfg.sweep_axis, sweep_value=value,
                          trial=trial, seed=s, **res[name]) for name in cfg.estimators], attempt
    raise RuntimeError(f"{cfg.sweep_axis}={value} trial {trial}: degenerate after {MAX_ATTEMPTS} attempts")


def sort_rows(rows, estimators=ESTIMATORS):
    order = {e: i for i, e in enumerate(estimators)}
    return sorted(rows, key=lambda r: (order.get(r.estimator, len(order)), r.estimator,
                                       r.sweep_value, r.trial))


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Run every (sweep point, trial) pair; rows come back in canonical order."""
    items = [(i, t) for i in range(len(cfg.sweep_values)) for t in range(cfg.system.trials)]
    log.info("running %d trials x %d sweep points on %d thread(s)",
             cfg.system.trials, len(cfg.sweep_values), threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda it: _run_item(cfg, *it), items))
    else:
        results = [_run_item(cfg, *it) for it in items]
    resampled = sum(1 for _, attempt in results if attempt)
    if resampled:
        log.warning("%d trial(s) resampled after degenerate columns", resampled)
    return sort_rows([row for batch, _ in results for row in batch], cfg.estimators)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_csv(rows, path) -> Path:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_HEADER])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_csv(path) -> list[ResultRow]:
    rows = []
    with Path(path).open(encoding="utf-8", newline="") as f:
        for rec in csv.DictReader(f):
            kw = {m: (float(rec[m]) if rec[m] != "" else None) for m in METRICS}
            rows.append(ResultRow(estimator=rec["estimator"], sweep_axis=rec["sweep_axis"],
                                  sweep_value=float(rec["sweep_value"]), trial=int(rec["trial"]),
                                  seed=int(rec["seed"]), **kw))
    return rows


def summarize(rows) -> dict:
    """Median and mean of each estimator's headline metric per sweep value.

    Returns ``{estimator: [(sweep_value, median, mean, n), ...]}``.
    """
    groups = defaultdict(list)
    for r in rows:
        v = getattr(r, HEADLINE.get(r.estimator, "nmse_theta"))
        if v is not None:
            groups[(r.estimator, r.sweep_value)].append(v)
    out = defaultdict(list)
    for (name, x), vals in sorted(groups.items(), key=lambda kv: kv[0][1]):
        out[name].append((x, float(np.median(vals)), float(np.mean(vals)), len(vals)))
    return dict(out)


_LAMBDA_FRACTIONS = (1000, 500, 200, 100, 50, 40, 20, 10, 5, 4, 2, 1)


def _lambda_label(x: float) -> str:
    for d in _LAMBDA_FRACTIONS:
        if math.isclose(x * d, 1.0, rel_tol=1e-9):
            return "λ" if d == 1 else f"λ/{d}"
    if x == 0:
        return "0"
    return f"{x:g}λ"


def emit_plot_script(rows, path, csv_path=None) -> Path:
    """Write a gnuplot script of median NMSE (dB) versus the sweep axis.

    Medians are embedded as data blocks, one series per estimator, so the
    script runs standalone; ``csv_path`` is recorded in the header.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("cannot plot an empty result set")
    path = Path(path)
    axis = rows[0].sweep_axis
    summary = summarize(rows)
    names = [e for e in ESTIMATORS if e in summary] + sorted(set(summary) - set(ESTIMATORS))
    lines = [
        "# gnuplot script written by fris-ce",
        f"# source: {csv_path if csv_path is not None else '(in-memory rows)'}",
        "# columns: sweep value, median NMSE, mean NMSE, trials",
        'set encoding utf8',
        'set terminal svg size 800,600 enhanced font "sans,12"',
        f'set output "{path.with_suffix(".svg").name}"',
        "set grid",
        'set key top right',
        'set ylabel "NMSE [dB]"',
    ]
    if axis == "snr_db":
        lines.append('set xlabel "SNR [dB]"')
    else:
        xs = sorted({r.sweep_value for r in rows})
        lines.append('set xlabel "position error std"')
        lines.append("set logscale x" if xs[0] > 0 else "unset logscale x")
        tics = ", ".join(f'"{_lambda_label(x)}" {x!r}' for x in xs)
        lines.append(f"set xtics ({tics})")
    blocks = []
    for i, name in enumerate(names):
        label = f"$s{i}"
        lines.append(f"{label} << EOD")
        lines.extend(f"{x!r} {med!r} {mean!r} {n}" for x, med, mean, n in summary[name])
        lines.append("EOD")
        metric = HEADLINE.get(name, "nmse_theta").replace("nmse_", "")
        blocks.append(f'{label} using 1:(10*log10($2)) with linespoints title "{name} ({metric})"')
    lines.append("plot " + ", \\\n     ".join(blocks))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
