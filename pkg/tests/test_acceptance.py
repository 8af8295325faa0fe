"""End-to-end acceptance checks, one test per criterion.

Each test appends a ``ACCEPTANCE <k> PASS|FAIL ...`` line to ``REPORT``; the
lines are printed in pytest's terminal summary (see ``conftest.py``) and by
``python tests/test_acceptance.py``. Criteria 5 to 8 train agents and take
most of the suite's runtime; they share runs through session fixtures.
"""
from __future__ import annotations

import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from dambrl import cli
from dambrl.core_mdp import check_theorem1, random_case
from dambrl.neural import gradient_check

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
REPORT: list[str] = []
LAST_TRIALS = 3


def record(k: int, ok: bool, detail: str) -> None:
    REPORT.append(f"ACCEPTANCE {k} {'PASS' if ok else 'FAIL'}: {detail}")


def seed_scores(curves: list[dict], last: int = LAST_TRIALS) -> np.ndarray:
    """Per-seed mean return over the final ``last`` trials."""
    out = []
    for s in sorted({r["seed"] for r in curves}):
        rows = sorted((r for r in curves if r["seed"] == s), key=lambda r: r["trial"])
        out.append(np.mean([r["return"] for r in rows[-last:]]))
    return np.array(out)


def run_config(name: str, out: Path, **overrides) -> tuple[list[dict], float, Path]:
    config = cli.load_config(CONFIGS / name).with_overrides(output_dir=str(out), **overrides)
    t0 = time.perf_counter()
    status = cli.run_experiment(config)
    elapsed = time.perf_counter() - t0
    assert status == 0, (out / "FAILED").read_text()
    return cli.read_curves(out / "curves.csv"), elapsed, out


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="session")
def dats_pendulum(workdir):
    return run_config("pendulum_dats.ini", workdir / "dats_n1")


@pytest.fixture(scope="session")
def blind_pendulum(workdir):
    return run_config("pendulum_blind_pets.ini", workdir / "blind_n1")


@pytest.fixture(scope="session")
def wpets_pendulum(workdir):
    return run_config("pendulum_wpets.ini", workdir / "wpets_n1")


# --------------------------------------------------------------------------


def test_1_theorem1_exactness():
    t0 = time.perf_counter()
    worst, failing = 0.0, []
    for seed in range(200):
        mdp, policy, n, init = random_case(seed)
        rep = check_theorem1(mdp, policy, n, init, tol=1e-12)
        worst = max(worst, rep.max_diff)
        if not rep.passed:
            failing.append(seed)
    elapsed = time.perf_counter() - t0
    ok = not failing and elapsed < 5.0
    record(1, ok, f"{200 - len(failing)}/200 cases within 1e-12 (max diff {worst:.2e}), {elapsed:.2f}s")
    assert ok


def test_2_gradient_correctness():
    t0 = time.perf_counter()
    errors = [gradient_check(seed) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    ok = max(errors) < 1e-4 and elapsed < 30.0
    record(2, ok, f"max relative error {max(errors):.2e} over 20 seeds, {elapsed:.1f}s")
    assert ok


def test_3_delay_protocol():
    results = {n: all(cli.delay_protocol_case(n, s) for s in range(10)) for n in (0, 1, 3, 8)}
    ok = all(results.values())
    record(3, ok, "FIFO trace exact for n in {0,1,3,8}; n=0 bit-identical to bare env" if ok
           else f"failures: {[n for n, v in results.items() if not v]}")
    assert ok


@pytest.mark.slow
def test_4_oracle_delay_compensation():
    t0 = time.perf_counter()
    report = cli.verify_oracle_planning()
    elapsed = time.perf_counter() - t0
    means = report["returns"]
    ok = report["passed"] == 1 and elapsed < 600
    record(4, ok, "oracle mean return over 10 start states: "
           + ", ".join(f"n={n}: {v:.1f}" for n, v in means.items())
           + f"; spread {report['spread']:.1%} (band 5%), {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_5_learned_dats_pendulum(dats_pendulum):
    curves, elapsed, _ = dats_pendulum
    scores = seed_scores(curves)
    transitions = max(r["transitions"] for r in curves)
    ok = scores.mean() >= 140 and elapsed < 3600
    record(5, ok, f"mean of last {LAST_TRIALS} trials {scores.mean():.1f} +- {scores.std():.1f} "
           f"(threshold 140), {len(scores)} seeds x {transitions} transitions, {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_6_ablation_ordering(dats_pendulum, blind_pendulum, wpets_pendulum):
    d = seed_scores(dats_pendulum[0])
    b = seed_scores(blind_pendulum[0])
    w = seed_scores(wpets_pendulum[0])
    pooled_db = np.sqrt((d.var(ddof=1) + b.var(ddof=1)) / 2)
    pooled_dw = np.sqrt((d.var(ddof=1) + w.var(ddof=1)) / 2)
    gap_blind = d.mean() - b.mean()
    gap_w = abs(w.mean() - d.mean())
    ok = gap_blind > pooled_db and gap_w <= pooled_dw
    record(6, ok, f"DATS {d.mean():.1f}, BlindPets {b.mean():.1f}, WPets {w.mean():.1f}; "
           f"DATS-Blind {gap_blind:.1f} vs pooled std {pooled_db:.1f}; "
           f"|WPets-DATS| {gap_w:.1f} vs pooled std {pooled_dw:.1f}")
    assert ok


@pytest.mark.slow
def test_7_transfer_matrix(dats_pendulum, workdir):
    config = cli.load_config(CONFIGS / "pendulum_transfer.ini").with_overrides(
        output_dir=str(workdir / "transfer"))
    ckpt_dir = workdir / "checkpoints"
    config.values["transfer"]["checkpoint_dir"] = str(ckpt_dir)
    ckpt_dir.mkdir(exist_ok=True)
    # seed 0 of the criterion-5 run is exactly the i = 1 model the matrix would train
    shutil.copy(dats_pendulum[2] / "models" / "seed0.dmdl", cli.checkpoint_path(config, 1))
    t0 = time.perf_counter()
    assert cli.run_transfer_matrix(config) == 0
    elapsed = time.perf_counter() - t0
    matrix = cli.read_transfer(workdir / "transfer" / "transfer.csv")
    cvs = cli.row_cv(matrix)
    min_cell = min(v[0] for v in matrix.values())
    ok = min_cell >= 130 and max(cvs.values()) < 0.15
    rows = "; ".join(
        f"i={i}: " + " ".join(f"{matrix[(i, n)][0]:.0f}" for n in (1, 2, 4, 8, 16)) + f" (cv {cvs[i]:.3f})"
        for i in sorted(cvs)
    )
    record(7, ok, f"min cell {min_cell:.1f} (threshold 130), max row cv {max(cvs.values()):.3f} "
           f"(threshold 0.15); {rows}; {elapsed / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_8_cartpole_sanity(workdir):
    n0, _, _ = run_config("cartpole_dats.ini", workdir / "cartpole_n0", delay=0)
    n1, _, _ = run_config("cartpole_dats.ini", workdir / "cartpole_n1", delay=1)
    s0, s1 = seed_scores(n0), seed_scores(n1)
    ratio = s1.mean() / s0.mean()
    ok = ratio >= 0.9
    record(8, ok, f"DATS n=1 {s1.mean():.1f} vs n=0 {s0.mean():.1f} (ratio {ratio:.3f}, threshold 0.9), "
           f"{len(s0)} seeds")
    assert ok


if __name__ == "__main__":  # pragma: no cover
    import sys

    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
