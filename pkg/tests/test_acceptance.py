"""Acceptance run: one PASS/FAIL line per criterion.

Criteria 4 to 6 are empirical measurements on the synthetic benchmark. They
train real models (about 20 minutes on one CPU) and share the trained states
through a session fixture. When a measured quantity misses its target the line
reads FAIL and the test is reported as an expected failure with the numbers,
rather than hidden.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from cecnet import checkpoint
from cecnet.config import RunConfig
from cecnet.harness import (TrainState, evaluate, make_datasets, query_relation_maps,
                            sample_episode, train)
from cecnet.localization import inside_outside_means

import test_properties
from suites import equivalence_suite, gradient_suite, timed

SEEDS = (0, 1, 2)
ABLATION_CELLS = {"baseline": ("none", "cosine"), "cecm_M+cecd_C": ("M", "C"),
                  "cam": ("cam", "cosine")}
CEC_CELLS = ("cecm_M+cecd_C",)
MARGIN = 2.0
ABLATION_BUDGET_S = 20 * 60

LINES: list[str] = []


def report(capsys, number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    LINES.append(line)
    with capsys.disabled():
        print("\n" + line, flush=True)


def empirical(ok: bool, detail: str) -> None:
    if not ok:
        pytest.xfail(f"measured shortfall: {detail}")


@pytest.fixture(scope="session")
def ablation_runs():
    """Train every ablation cell for every seed; returns accuracies and states."""
    start = time.perf_counter()
    accs: dict[str, list[float]] = {name: [] for name in ABLATION_CELLS}
    states: dict[tuple[str, int], TrainState] = {}
    for seed in SEEDS:
        for name, (attn, metric) in ABLATION_CELLS.items():
            config = RunConfig(attention=attn, metric=metric, seed=seed)
            state = TrainState.create(config)
            base, novel = make_datasets(config)
            train(state, base, config.train_episodes)
            result = evaluate(state, novel, config.eval_episodes, config.n_way, config.k_shot,
                              seed=config.seed + 1000)
            accs[name].append(result.metric[0])
            states[name, seed] = state
    return accs, states, time.perf_counter() - start


def test_criterion_1_oracle_equivalence(capsys):
    reports, seconds = timed(equivalence_suite, 200)
    worst = max(r.max_abs_err for r in reports)
    ok = all(r.passed for r in reports) and seconds < 60
    report(capsys, 1, ok, f"{len(reports)} equations x 200 instances, worst abs err {worst:.2e}, "
                          f"{seconds:.1f}s")
    assert ok, [r.line() for r in reports if not r.passed]


def test_criterion_2_gradient_suite(capsys):
    worst, seconds = timed(gradient_suite, 20)
    ok = all(v < 1e-4 for v in worst.values()) and seconds < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(capsys, 2, ok, f"worst rel err per group: {detail}; {seconds:.1f}s")
    assert ok, worst


def test_criterion_3_invariants(capsys):
    failures = []
    test_properties.CALLS.clear()
    for name, prop in test_properties.INVARIANTS.items():
        try:
            prop()
        except Exception as exc:  # noqa: BLE001 - any failing case counts
            failures.append(f"{name}: {exc!r}"[:200])
    counts = {name: test_properties.CALLS[name] for name in test_properties.INVARIANTS}
    ok = not failures and min(counts.values()) >= 100
    report(capsys, 3, ok, f"{len(counts)} invariants, min cases {min(counts.values())}, "
                          f"failures {len(failures)}")
    assert ok, failures or counts


def test_criterion_4_directional_ablation(capsys, ablation_runs):
    accs, _, seconds = ablation_runs
    mean = {name: float(np.mean(v)) for name, v in accs.items()}
    best_cec = max(mean[name] for name in CEC_CELLS)
    ordered = mean["baseline"] + MARGIN <= mean["cecm_M+cecd_C"]
    cam_ok = mean["cam"] <= best_cec
    ok = ordered and cam_ok and seconds < ABLATION_BUDGET_S
    detail = ", ".join(f"{k} {v:.2f}" for k, v in mean.items())
    report(capsys, 4, ok, f"mean acc over seeds {list(SEEDS)}: {detail}; "
                          f"baseline+{MARGIN} <= M+C: {ordered}; cam <= best CEC: {cam_ok}; "
                          f"{seconds / 60:.1f} min")
    empirical(ok, detail)


def test_criterion_5_finetune_direction(capsys, ablation_runs):
    _, states, _ = ablation_runs
    metric, combined = [], []
    for seed in SEEDS:
        state = states["cecm_M+cecd_C", seed]
        _, novel = make_datasets(state.config)
        result = evaluate(state, novel, 500, 5, 5, seed=seed + 2000, finetune=True)
        metric.append(result.metric[0])
        combined.append(result.combined[0])
    m, c = float(np.mean(metric)), float(np.mean(combined))
    ok = c >= m - 0.5
    report(capsys, 5, ok, f"5-way 5-shot over {len(SEEDS)} seeds x 500 episodes: "
                          f"metric {m:.2f}, combined {c:.2f}")
    empirical(ok, f"metric {m:.2f} combined {c:.2f}")


def test_criterion_6_localization(capsys, ablation_runs):
    _, states, _ = ablation_runs
    state = states["cecm_M+cecd_C", SEEDS[0]]
    _, novel = make_datasets(state.config)
    rng = np.random.default_rng(6)
    wins = 0
    episodes = 100
    for _ in range(episodes):
        episode = sample_episode(novel, 5, 1, 1, rng)
        pick = int(rng.integers(len(episode.queries)))
        relation = query_relation_maps(state, episode)[pick]
        inside, outside = inside_outside_means(relation, episode.queries[pick].object_mask)
        wins += inside > outside
    ok = wins >= 0.8 * episodes
    report(capsys, 6, ok, f"inside mean > outside mean in {wins}/{episodes} episodes")
    empirical(ok, f"{wins}/{episodes}")


def test_criterion_7_determinism_and_resume(capsys, tmp_path):
    config = RunConfig(seed=11, items_per_class=20, n_query=2, train_episodes=30)

    def run(name):
        state = TrainState.create(config)
        train(state, make_datasets(config)[0], config.train_episodes, tmp_path / name)
        return (tmp_path / name).read_bytes()

    same_csv = run("a.csv") == run("b.csv")

    straight = TrainState.create(config)
    base = make_datasets(config)[0]
    train(straight, base, 10)
    checkpoint.save(tmp_path / "mid.cec1", straight)
    train(straight, base, 50, tmp_path / "straight.csv")
    resumed = checkpoint.load(tmp_path / "mid.cec1")
    train(resumed, make_datasets(resumed.config)[0], 50, tmp_path / "resumed.csv")
    same_resume = (tmp_path / "straight.csv").read_bytes() == (tmp_path / "resumed.csv").read_bytes()
    same_params = all(np.array_equal(p.data, resumed.model.named_parameters()[k].data)
                      for k, p in straight.model.named_parameters().items())
    ok = same_csv and same_resume and same_params
    report(capsys, 7, ok, f"identical CSVs {same_csv}; resume 50 steps identical losses "
                          f"{same_resume}, parameters {same_params}")
    assert ok
