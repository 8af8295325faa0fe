"""Command-line experiment runner: ``dambrl run | transfer | verify``.

Configs are INI files with the sections ``[experiment]``, ``[model]``,
``[train]``, ``[planner]`` and ``[transfer]``. Every key is validated before
any computation starts and unknown keys are rejected with their line number.
The fully resolved configuration (defaults included) is echoed to stdout and
written next to the results.

Output files
------------
``curves.csv``
    ``seed,trial,return,transitions,nll``; ``transitions`` is cumulative.
``summary.csv``
    ``trial,transitions,mean,std,n_seeds``.
``curves.png``
    Mean return vs. transitions with a +-1 std band.
``runs.jsonl``
    One JSON record per seed (append-only).
``transfer.csv``
    ``train_delay,eval_delay,mean,std,episodes``.
``FAILED``
    Present only if a run aborted; holds the traceback.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import re
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._alloc import tune_allocator
from .agent import AgentConfig, AgentKind, RUNNERS, evaluate_transfer
from .core_mdp import ContractError
from .delay import DelayedEnv
from .envs import ENVS, make_env
from .model import TrainConfig, load_model, save_model
from .planner import CemConfig

log = logging.getLogger("dambrl")

CURVE_COLUMNS = ["seed", "trial", "return", "transitions", "nll"]
SUMMARY_COLUMNS = ["trial", "transitions", "mean", "std", "n_seeds"]
TRANSFER_COLUMNS = ["train_delay", "eval_delay", "mean", "std", "episodes"]


class ConfigError(ContractError):
    """Invalid configuration; ``str()`` starts with ``path:line:``."""


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def _int_list(text: str) -> tuple[int, ...]:
    items = [t for t in re.split(r"[,\s]+", text.strip()) if t]
    if not items:
        raise ValueError("empty list")
    return tuple(int(t) for t in items)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "experiment": {
        "env": (str, "pendulum"),
        "delay": (int, 1),
        "agent": (str, "dats"),
        "seeds": (_int_list, (0,)),
        "trials": (int, 15),
        "horizon": (int, 200),
        "gamma": (float, 1.0),
        "output_dir": (str, "results"),
    },
    "model": {
        "ensemble_size": (int, 5),
        "hidden": (_int_list, (200, 200, 200)),
        "rollout_precision": (str, "float32"),
    },
    "train": {
        "epochs": (int, 50),
        "batch_size": (int, 32),
        "lr": (float, 1e-3),
        "weight_decay": (float, 0.0),
        "patience": (int, 5),
        "min_improvement": (float, 1e-3),
    },
    "planner": {
        "population": (int, 400),
        "elites": (int, 40),
        "iterations": (int, 5),
        "horizon": (int, 25),
        "alpha": (float, 0.1),
        "init_std_fraction": (float, 0.25),
        "std_floor": (float, 1e-3),
        "particles": (int, 20),
        "prefix_rewards": (_bool, True),
    },
    "transfer": {
        "train_delays": (_int_list, (1, 2, 4, 8)),
        "eval_delays": (_int_list, (1, 2, 4, 8, 16)),
        "episodes": (int, 10),
        "seed": (int, 0),
        "checkpoint_dir": (str, "checkpoints"),
        "on_missing": (str, "train"),
    },
}

# Fields that do not change what is computed; left out of the config hash.
NON_SEMANTIC = {("experiment", "output_dir"), ("experiment", "seeds"), ("transfer", "checkpoint_dir")}


@dataclass
class ExperimentConfig:
    """Validated experiment settings.

    Attributes:
        values: ``{section: {key: value}}`` with every schema key present.
        source: Path of the file it was read from (for messages).
        lines: ``(section, key) -> line number`` for keys present in the file.
    """

    values: dict[str, dict[str, object]]
    source: str = "<defaults>"
    lines: dict[tuple[str, str], int] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    @property
    def env(self) -> str:
        return self.values["experiment"]["env"]

    @property
    def delay(self) -> int:
        return self.values["experiment"]["delay"]

    @property
    def agent(self) -> AgentKind:
        return AgentKind(self.values["experiment"]["agent"])

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.values["experiment"]["seeds"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["experiment"]["output_dir"])

    def with_overrides(self, **experiment) -> "ExperimentConfig":
        values = {s: dict(kv) for s, kv in self.values.items()}
        values["experiment"].update(experiment)
        out = ExperimentConfig(values, self.source, dict(self.lines))
        out.validate()
        return out

    # -- derived objects ----------------------------------------------------

    def agent_config(self) -> AgentConfig:
        m, t, p = self.values["model"], self.values["train"], self.values["planner"]
        return AgentConfig(
            trials=self.values["experiment"]["trials"],
            ensemble_size=m["ensemble_size"],
            hidden=tuple(m["hidden"]),
            train=TrainConfig(**t),
            cem=CemConfig(**p),
        )

    def rollout_dtype(self):
        return np.float32 if self.values["model"]["rollout_precision"] == "float32" else np.float64

    def make_env(self, delay: int | None = None) -> DelayedEnv:
        base = make_env(self.env, horizon=self.values["experiment"]["horizon"])
        return DelayedEnv(base, self.delay if delay is None else delay)

    # -- validation ---------------------------------------------------------

    def _fail(self, section: str, key: str, message: str):
        line = self.lines.get((section, key))
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: [{section}] {key}: {message}")

    def validate(self) -> None:
        e, m, t, p, x = (self.values[s] for s in ("experiment", "model", "train", "planner", "transfer"))
        if e["env"] not in ENVS:
            self._fail("experiment", "env", f"unknown environment, choose from {sorted(ENVS)}")
        if e["agent"] not in {k.value for k in AgentKind}:
            self._fail("experiment", "agent", f"unknown agent, choose from {[k.value for k in AgentKind]}")
        if e["delay"] < 0:
            self._fail("experiment", "delay", "must be >= 0")
        for key in ("trials", "horizon"):
            if e[key] < 1:
                self._fail("experiment", key, "must be >= 1")
        if any(s < 0 for s in e["seeds"]) or len(set(e["seeds"])) != len(e["seeds"]):
            self._fail("experiment", "seeds", "seeds must be distinct non-negative integers")
        if not 0.0 < e["gamma"] <= 1.0:
            self._fail("experiment", "gamma", "must lie in (0, 1]")
        if m["ensemble_size"] < 1:
            self._fail("model", "ensemble_size", "must be >= 1")
        if any(h < 1 for h in m["hidden"]):
            self._fail("model", "hidden", "layer widths must be >= 1")
        if m["rollout_precision"] not in ("float32", "float64"):
            self._fail("model", "rollout_precision", "must be float32 or float64")
        for key in ("epochs", "batch_size"):
            if t[key] < 1:
                self._fail("train", key, "must be >= 1")
        if t["lr"] <= 0:
            self._fail("train", "lr", "must be positive")
        if t["patience"] < 1:
            self._fail("train", "patience", "must be >= 1")
        try:
            CemConfig(**p)
        except ContractError as exc:
            key = "elites" if "elites" in str(exc) else next(iter(k for k in p if k in str(exc)), "population")
            self._fail("planner", key, str(exc))
        for key in ("train_delays", "eval_delays"):
            if any(v < 0 for v in x[key]):
                self._fail("transfer", key, "delays must be >= 0")
        if x["episodes"] < 1:
            self._fail("transfer", "episodes", "must be >= 1")
        if x["on_missing"] not in ("train", "fail"):
            self._fail("transfer", "on_missing", "must be 'train' or 'fail'")

    # -- serialisation ------------------------------------------------------

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for key, value in keys.items():
                lines.append(f"{key} = {_format(value)}")
            lines.append("")
        return "\n".join(lines)

    def config_hash(self) -> str:
        """sha256 over the canonical text of every semantically meaningful field."""
        canon = {
            s: {k: _format(v) for k, v in sorted(kv.items()) if (s, k) not in NON_SEMANTIC}
            for s, kv in sorted(self.values.items())
        }
        return hashlib.sha256(json.dumps(canon, sort_keys=True).encode()).hexdigest()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def default_config() -> ExperimentConfig:
    return ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})


def _line_index(text: str) -> dict[tuple[str, str], int]:
    index, section = {}, None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        head = re.fullmatch(r"\[([^\]]+)\]", line)
        if head:
            section = head.group(1).strip()
            index.setdefault((section, ""), no)
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        if section is not None:
            index.setdefault((section, key), no)
    return index


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """Parse and validate INI text; raises :class:`ConfigError` with a line anchor."""
    lines = _line_index(text)
    parser = configparser.ConfigParser(interpolation=None, default_section="\0none")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"{source}:{line or '?'}: {exc.message if hasattr(exc, 'message') else exc}") from None
    config = default_config()
    config.source, config.lines = source, lines
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lines.get((section, ''), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                config._fail(section, key, "unknown key")
            conv = SCHEMA[section][key][0]
            try:
                config.values[section][key] = conv(raw)
            except ValueError as exc:
                config._fail(section, key, f"cannot parse {raw!r} ({exc})")
    config.validate()
    return config


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def run_seed(config: ExperimentConfig, seed: int, checkpoint: Path | None = None,
             on_trial=None) -> dict:
    """One independent run; every random draw comes from ``default_rng(seed)``."""
    env = config.make_env()
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    rows = []
    cumulative = 0

    def log_trial(result):
        nonlocal cumulative
        cumulative += result.transitions
        row = {"seed": seed, "trial": result.trial, "return": result.episode_return,
               "transitions": cumulative, "nll": result.nll}
        rows.append(row)
        log.info("seed %d trial %d return %.2f transitions %d nll %.4f (%.1fs)",
                 seed, result.trial, result.episode_return, cumulative, result.nll, result.wall_time)
        if on_trial is not None:
            on_trial(row)

    runner = RUNNERS[config.agent]
    result = runner(env, config.agent_config(), rng, log=log_trial,
                    rollout_dtype=config.rollout_dtype())
    if checkpoint is not None and hasattr(result.model, "params"):
        checkpoint.parent.mkdir(parents=True, exist_ok=True)
        save_model(result.model, checkpoint)
    return {"seed": seed, "rows": rows, "wall_clock": time.perf_counter() - t0}


def _run_seed_job(args):
    text, source, overrides, seed, checkpoint = args
    tune_allocator()
    config = parse_config(text, source).with_overrides(**overrides)
    return run_seed(config, seed, checkpoint)


def write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row[k]) for k in columns})


def _csv_value(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_curves(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {"seed": int(r["seed"]), "trial": int(r["trial"]), "return": float(r["return"]),
             "transitions": int(r["transitions"]), "nll": float(r["nll"])}
            for r in csv.DictReader(fh)
        ]


def summarize(rows: list[dict]) -> list[dict]:
    """Per-trial mean/std of return across seeds (population std)."""
    trials = sorted({r["trial"] for r in rows})
    out = []
    for k in trials:
        sel = [r for r in rows if r["trial"] == k]
        returns = np.array([r["return"] for r in sel])
        out.append({
            "trial": k,
            "transitions": float(np.mean([r["transitions"] for r in sel])),
            "mean": float(returns.mean()),
            "std": float(returns.std()),
            "n_seeds": len(sel),
        })
    return out


def plot_curves(summary_csv: Path, out_png: Path, title: str = "") -> None:
    """Render mean +- std vs. transitions from ``summary.csv`` alone."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(summary_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([float(r["transitions"]) for r in rows])
    mean = np.array([float(r["mean"]) for r in rows])
    std = np.array([float(r["std"]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, mean, lw=1.5)
    ax.fill_between(x, mean - std, mean + std, alpha=0.3)
    ax.set_xlabel("transitions")
    ax.set_ylabel("episode return")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=100)
    plt.close(fig)


def _prepare_out(config: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    (out / "config.resolved.ini").write_text(
        f"# config_hash = {config.config_hash()}\n" + config.to_ini()
    )


def _mark_failed(out: Path, exc: BaseException) -> None:
    (out / "FAILED").write_text("".join(traceback.format_exception(type(exc), exc, exc.__traceback__)))


def run_experiment(config: ExperimentConfig, threads: int = 1) -> int:
    """Run every seed, write the CSVs and plot; returns a process exit status."""
    out = config.output_dir
    _prepare_out(config, out)
    chash = config.config_hash()
    rows: list[dict] = []
    records = []
    ckpt_dir = out / "models"
    seeds = list(config.seeds)

    def finish():
        rows.sort(key=lambda r: (r["seed"], r["trial"]))
        write_csv(out / "curves.csv", CURVE_COLUMNS, rows)
        if rows:
            write_csv(out / "summary.csv", SUMMARY_COLUMNS, summarize(rows))
            plot_curves(out / "summary.csv", out / "curves.png",
                        f"{config.agent.value} on {config.env}, n={config.delay}")
        with open(out / "runs.jsonl", "a") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def record(result):
        records.append({
            "config_hash": chash,
            "seed": result["seed"],
            "returns": [r["return"] for r in result["rows"]],
            "nll": [None if np.isnan(r["nll"]) else r["nll"] for r in result["rows"]],
            "wall_clock": result["wall_clock"],
        })

    try:
        if threads <= 1 or len(seeds) == 1:
            for seed in seeds:
                partial: list[dict] = []
                try:
                    res = run_seed(config, seed, ckpt_dir / f"seed{seed}.dmdl", on_trial=partial.append)
                except BaseException:
                    rows.extend(partial)
                    raise
                rows.extend(res["rows"])
                record(res)
        else:
            text = _config_text(config)
            overrides = {}
            jobs = [(text, config.source, overrides, s, ckpt_dir / f"seed{s}.dmdl") for s in seeds]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for res in pool.map(_run_seed_job, jobs):
                    rows.extend(res["rows"])
                    record(res)
    except BaseException as exc:
        finish()
        _mark_failed(out, exc)
        log.error("run failed: %s", exc)
        if isinstance(exc, KeyboardInterrupt):
            raise
        return 2
    finish()
    return 0


def _config_text(config: ExperimentConfig) -> str:
    return config.to_ini()


# --------------------------------------------------------------------------
# transfer matrix
# --------------------------------------------------------------------------

def checkpoint_path(config: ExperimentConfig, train_delay: int) -> Path:
    x = config["transfer"]
    return Path(x["checkpoint_dir"]) / f"{config.env}_dats_i{train_delay}_seed{x['seed']}.dmdl"


def run_transfer_matrix(config: ExperimentConfig) -> int:
    """Train (or load) one DATS model per training delay and evaluate it at every eval delay."""
    out = config.output_dir
    _prepare_out(config, out)
    x = config["transfer"]
    cem = CemConfig(**config["planner"])
    rows = []
    try:
        for i in x["train_delays"]:
            path = checkpoint_path(config, i)
            if not path.exists():
                if x["on_missing"] == "fail":
                    raise ConfigError(f"missing checkpoint {path} for train delay {i}")
                log.info("training DATS at delay %d -> %s", i, path)
                run_seed(config.with_overrides(delay=i, agent="dats"), x["seed"], path)
            model = load_model(path)
            model.rollout_dtype = config.rollout_dtype()
            for n in x["eval_delays"]:
                rng = np.random.default_rng([x["seed"], i, n])
                mean, std, _ = evaluate_transfer(model, config.make_env(n), x["episodes"], cem, rng)
                log.info("transfer i=%d n=%d mean %.2f std %.2f", i, n, mean, std)
                rows.append({"train_delay": i, "eval_delay": n, "mean": mean, "std": std,
                             "episodes": x["episodes"]})
    except BaseException as exc:
        write_csv(out / "transfer.csv", TRANSFER_COLUMNS, rows)
        _mark_failed(out, exc)
        log.error("transfer failed: %s", exc)
        if isinstance(exc, KeyboardInterrupt):
            raise
        return 2
    write_csv(out / "transfer.csv", TRANSFER_COLUMNS, rows)
    return 0


def read_transfer(path) -> dict[tuple[int, int], tuple[float, float]]:
    with open(path, newline="") as fh:
        return {(int(r["train_delay"]), int(r["eval_delay"])): (float(r["mean"]), float(r["std"]))
                for r in csv.DictReader(fh)}


def row_cv(matrix: dict[tuple[int, int], tuple[float, float]]) -> dict[int, float]:
    """Coefficient of variation (std / |mean|) of the cell means along each training-delay row."""
    out = {}
    for i in sorted({k[0] for k in matrix}):
        means = np.array([v[0] for k, v in sorted(matrix.items()) if k[0] == i])
        out[i] = float(means.std() / abs(means.mean())) if means.mean() != 0 else float("inf")
    return out


# --------------------------------------------------------------------------
# verify
# --------------------------------------------------------------------------

def verify_theorem1(cases: int = 200, tol: float = 1e-12) -> dict:
    from .core_mdp import check_theorem1, random_case

    failing, worst = [], 0.0
    for seed in range(cases):
        mdp, policy, n, init = random_case(seed)
        rep = check_theorem1(mdp, policy, n, init, tol)
        worst = max(worst, rep.max_diff)
        if not rep.passed:
            failing.append(seed)
    return {"suite": "theorem1", "total": cases, "passed": cases - len(failing),
            "failing_seeds": failing, "max_error": worst, "tol": tol}


def verify_gradients(seeds: int = 20, tol: float = 1e-4) -> dict:
    from .neural import gradient_check

    errors = {s: gradient_check(s) for s in range(seeds)}
    failing = [s for s, e in errors.items() if not e < tol]
    return {"suite": "gradients", "total": seeds, "passed": seeds - len(failing),
            "failing_seeds": failing, "max_error": max(errors.values()), "tol": tol}


def delay_protocol_case(n: int, seed: int, steps: int = 30) -> bool:
    """Scripted FIFO check: executed actions are ``c_0..c_{n-1}, u_0, u_1, ...``."""
    rng = np.random.default_rng(seed)
    base = make_env("pendulum")
    init = rng.uniform(-2, 2, size=(n, 1))
    env = DelayedEnv(base, n, init_actions=init)
    env.reset(seed)
    script = rng.uniform(-2, 2, size=(steps, 1))
    for u in script:
        env.step(u)
    expected = np.concatenate([init, script])[:steps]
    ok = np.array_equal(np.array(env.executed), expected)
    if n == 0:
        state = base.reset(seed)
        bare = []
        for u in script:
            state, r, _ = base.step(state, u)
            bare.append((base.observe(state), r))
        env.reset(seed)
        wrapped = []
        for u in script:
            _, r, _ = env.step(u)
            wrapped.append((env.observation(), r))
        ok = ok and all(np.array_equal(a[0], b[0]) and a[1] == b[1] for a, b in zip(bare, wrapped))
    return bool(ok)


def verify_delay_protocol(delays=(0, 1, 3, 8), seeds: int = 10) -> dict:
    failing = [f"n={n},seed={s}" for n in delays for s in range(seeds) if not delay_protocol_case(n, s)]
    total = len(delays) * seeds
    return {"suite": "delay-protocol", "total": total, "passed": total - len(failing),
            "failing_seeds": failing}


def oracle_returns(delays=(0, 1, 4), reset_seeds=tuple(range(10)), cem: CemConfig | None = None,
                   seed: int = 0) -> dict[int, float]:
    """Mean oracle-DATS pendulum return per delay over fixed start states."""
    from .agent import _run_oracle_episode

    cem = cem or CemConfig(population=400, elites=40, iterations=5, horizon=25, particles=1)
    out = {}
    for n in delays:
        env = DelayedEnv(make_env("pendulum"), n)
        returns = [_run_oracle_episode(env, cem, np.random.default_rng([seed, n, r]), r) for r in reset_seeds]
        out[n] = float(np.mean(returns))
    return out


def verify_oracle_planning(band: float = 0.05, **kwargs) -> dict:
    means = oracle_returns(**kwargs)
    ref = means[min(means)]
    rel = {n: abs(v - ref) / abs(ref) for n, v in means.items()}
    spread = (max(means.values()) - min(means.values())) / max(abs(v) for v in means.values())
    failing = [] if spread <= band else [f"spread={spread:.4f}"]
    return {"suite": "oracle-planning", "total": 1, "passed": int(not failing), "failing_seeds": failing,
            "returns": means, "relative_to_n0": rel, "spread": spread, "band": band}


VERIFY_SUITES = {
    "theorem1": verify_theorem1,
    "gradients": verify_gradients,
    "delay-protocol": verify_delay_protocol,
    "oracle-planning": verify_oracle_planning,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dambrl", description="Delay-aware model-based RL experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", help="output directory (overrides [experiment] output_dir)")
        p.add_argument("--seeds", help="comma-separated seeds (overrides [experiment] seeds)")
        p.add_argument("--threads", type=int, default=1, help="worker processes, one seed each")
        p.add_argument("--deterministic", action="store_true",
                       help="single process, seeds run in order (bit-identical curves.csv)")
        p.add_argument("-q", "--quiet", action="store_true")

    common(sub.add_parser("run", help="train an agent across seeds"))
    common(sub.add_parser("transfer", help="evaluate the train-delay x eval-delay reward matrix"))
    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("suite", choices=sorted(VERIFY_SUITES))
    v.add_argument("-q", "--quiet", action="store_true")
    return ap


def _resolve(args) -> ExperimentConfig:
    config = load_config(args.config)
    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.seeds:
        try:
            overrides["seeds"] = _int_list(args.seeds)
        except ValueError:
            raise ConfigError(f"--seeds: cannot parse {args.seeds!r}") from None
    return config.with_overrides(**overrides) if overrides else config


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    tune_allocator()
    if args.command == "verify":
        report = VERIFY_SUITES[args.suite]()
        ok = report["passed"] == report["total"]
        report["status"] = "pass" if ok else "fail"
        print(json.dumps(report, sort_keys=True, default=float))
        return 0 if ok else 1
    try:
        config = _resolve(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"# config_hash = {config.config_hash()}")
    print(config.to_ini())
    threads = 1 if args.deterministic else max(1, args.threads)
    if args.command == "run":
        return run_experiment(config, threads)
    return run_transfer_matrix(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
