"""Acceptance gate: one test per release criterion, one printed verdict each.

Every test prints a single PASS/FAIL line on the real stdout (visible even
under pytest capture) and then asserts, so a red run names exactly which
criterion fell over. These tests are intentionally heavier than the unit
suites; the full gate takes a few minutes, dominated by the importance
repeats and the Monte-Carlo hypervolume cross-check.
"""

import math
import sys
import time
from random import Random

import numpy as np
import pytest

from conftest import stub_command
from oracles import brute_force_fronts, mc_hypervolume, schaffer_grid_front
from pareto_tuner.evaluation import EvalRequest, ExternalBackend, FunctionBackend
from pareto_tuner.experiment import ExperimentConfig, run_experiment
from pareto_tuner.importance import (
    TARGET_QUALITY,
    TARGET_TIME,
    ForestConfig,
    _tree_seeds,
    fit_forest,
    fit_tree,
    importance_analysis,
    mdi_importance,
)
from pareto_tuner.metrics import HvPoint, RefPoint, front_points, hypervolume_2d
from pareto_tuner.nsga2 import (
    MODE_PARETO,
    MODE_WEIGHTED,
    QUALITY_ONLY_WEIGHTS,
    Individual,
    NsgaConfig,
    ObjectiveVector,
    ScalingWeights,
    comparison_key,
    evolve,
    fast_nondominated_sort,
)
from pareto_tuner.protocol import (
    HandshakeError,
    ResponseTimeoutError,
    WireRequest,
    WireResponse,
    roundtrip,
    spawn_backend,
)
from pareto_tuner.space import Candidate, ParamSpec, RealRange, SearchSpace, default_space
from pareto_tuner.surrogate import SurrogateBackend

UNIT_WEIGHTS = ScalingWeights(w_quality=1.0, w_time=-1.0)


@pytest.fixture
def report(capfd):
    """Verdict printer that bypasses capture so the line always shows."""

    def _report(name: str, ok: bool, detail: str) -> None:
        verdict = "PASS" if ok else "FAIL"
        with capfd.disabled():
            print(f"ACCEPTANCE {name}: {verdict} ({detail})", file=sys.__stdout__, flush=True)
        assert ok, f"{name}: {detail}"

    return _report


@pytest.fixture(scope="module")
def rq1_archives():
    """15 paired runs at reference settings: pareto mode vs quality-only."""
    space = default_space()
    backend = SurrogateBackend()
    pareto, weighted = [], []
    start = time.perf_counter()
    for seed in range(15):
        pareto.append(
            evolve(space, backend, NsgaConfig(master_seed=seed), base_prompt="two people and a bus")
        )
        weighted.append(
            evolve(
                space,
                backend,
                NsgaConfig(master_seed=seed, mode=MODE_WEIGHTED, weights=QUALITY_ONLY_WEIGHTS),
                base_prompt="two people and a bus",
            )
        )
    return pareto, weighted, time.perf_counter() - start


def test_sorting_matches_brute_force_oracle(report):
    rng = Random(424242)
    sort_elapsed = 0.0
    checked = 0
    for _ in range(200):
        n = rng.randint(1, 200)
        objectives = []
        for i in range(n):
            if i and rng.random() < 0.1:  # inject exact duplicates
                objectives.append(objectives[rng.randrange(i)])
            else:
                objectives.append(
                    ObjectiveVector(time_ms=rng.uniform(0, 50000), quality=rng.random())
                )
        population = [Individual(candidate=Candidate((i,)), objectives=o)
                      for i, o in enumerate(objectives)]
        t0 = time.perf_counter()
        fronts = fast_nondominated_sort(population, UNIT_WEIGHTS, MODE_PARETO)
        sort_elapsed += time.perf_counter() - t0
        keys = np.array([comparison_key(o, UNIT_WEIGHTS, MODE_PARETO) for o in objectives])
        expected = brute_force_fronts(keys)
        got = [sorted(front) for front in fronts]
        if got != expected:
            report("sorting-oracle", False, f"partition mismatch on n={n}")
        checked += 1
    report(
        "sorting-oracle",
        checked == 200 and sort_elapsed < 5.0,
        f"200 random populations equal the oracle, sort time {sort_elapsed:.2f}s < 5s",
    )


def test_hypervolume_exact_monte_carlo_and_invariants(report):
    ref = RefPoint(1.0, 50000.0)

    single = hypervolume_2d([HvPoint(0.35, 9400.0)], ref)
    exact_ok = single == 26390.0

    # One shared 10^7-point draw; each set's estimate is still unbiased.
    samples = np.random.default_rng(77).random((10_000_000, 2))
    rng = Random(909)
    worst_rel = 0.0
    for _ in range(100):
        pts = [
            HvPoint(rng.uniform(0.0, 0.7), rng.uniform(0.0, 0.7 * 50000.0))
            for _ in range(rng.randint(3, 40))
        ]
        exact = hypervolume_2d(pts, ref)
        estimate = mc_hypervolume(
            [(p.quality_loss, p.time_ms) for p in pts], (1.0, 50000.0), samples=samples
        )
        worst_rel = max(worst_rel, abs(exact - estimate) / exact)
    del samples
    mc_ok = worst_rel < 0.005

    fuzz_rng = Random(1717)
    invariant_ok = True
    for _ in range(1000):
        pts = [
            HvPoint(fuzz_rng.random(), fuzz_rng.uniform(0.0, 60000.0))
            for _ in range(fuzz_rng.randint(1, 30))
        ]
        hv = hypervolume_2d(pts, ref)
        extra = pts + [HvPoint(fuzz_rng.random(), fuzz_rng.uniform(0.0, 60000.0))]
        if hypervolume_2d(extra, ref) < hv - 1e-9:  # monotonicity
            invariant_ok = False
            break
        survivors = [
            p
            for i, p in enumerate(pts)
            if not any(
                (q.quality_loss <= p.quality_loss and q.time_ms <= p.time_ms)
                and (q.quality_loss < p.quality_loss or q.time_ms < p.time_ms or j < i)
                for j, q in enumerate(pts)
                if j != i
            )
        ]
        if not math.isclose(hypervolume_2d(survivors, ref), hv, rel_tol=1e-12, abs_tol=1e-9):
            invariant_ok = False
            break

    report(
        "hypervolume",
        exact_ok and mc_ok and invariant_ok,
        f"single-point exact={single}, worst MC deviation {100 * worst_rel:.3f}% < 0.5%, "
        f"1000 fuzz invariants {'held' if invariant_ok else 'violated'}",
    )


def test_convergence_on_analytic_two_objective_problem(report):
    def fn(candidate):
        x = candidate.genes[0]
        return x * x, 1.0 - (x - 2.0) ** 2 / 144.0

    space = SearchSpace((ParamSpec("x", RealRange(-10.0, 10.0)),))
    backend = FunctionBackend(fn, evaluator_id="schaffer")
    grid = schaffer_grid_front()
    lo, hi = float(grid.min()), float(grid.max())

    start = time.perf_counter()
    worst = 0.0
    for seed in range(15):
        archive = evolve(
            space, backend, NsgaConfig(population_size=25, generations=50, master_seed=seed)
        )
        for ind in archive.final_front:
            x = ind.candidate.genes[0]
            distance = max(lo - x, x - hi, 0.0)
            worst = max(worst, distance)
    elapsed = time.perf_counter() - start
    report(
        "nsga2-convergence",
        worst <= 0.05 and elapsed < 30.0,
        f"15 seeds, worst distance to [{lo:.3f}, {hi:.3f}] is {worst:.4f} <= 0.05, "
        f"{elapsed:.1f}s < 30s",
    )


def test_rq1_time_quality_tradeoff(rq1_archives, report):
    pareto, weighted, elapsed = rq1_archives
    pareto_best_times, baseline_best_times, gaps = [], [], []
    hv_wins = 0
    for archive_p, archive_w in zip(pareto, weighted):
        front_p = [ind.objectives for ind in archive_p.final_front]
        front_w = [ind.objectives for ind in archive_w.final_front]
        pareto_best_times.append(min(o.time_ms for o in front_p))
        baseline_best_times.append(min(o.time_ms for o in front_w))
        gaps.append(max(o.quality for o in front_w) - max(o.quality for o in front_p))
        if hypervolume_2d(front_points(archive_p)) > hypervolume_2d(front_points(archive_w)):
            hv_wins += 1
    mean_p = sum(pareto_best_times) / len(pareto_best_times)
    mean_b = sum(baseline_best_times) / len(baseline_best_times)
    reduction = 1.0 - mean_p / mean_b
    mean_gap = sum(gaps) / len(gaps)
    report(
        "rq1-directional",
        reduction >= 0.40 and mean_gap <= 0.25 and hv_wins >= 14 and elapsed < 300.0,
        f"mean best time {mean_p:.0f}ms vs {mean_b:.0f}ms ({100 * reduction:.1f}% lower, "
        f"need >=40%), mean quality gap {mean_gap:.3f} <= 0.25, hypervolume wins "
        f"{hv_wins}/15 (need >=14), runs took {elapsed:.1f}s < 300s",
    )


def test_rq2_time_importance(rq1_archives, report):
    pareto, _, _ = rq1_archives
    rep = importance_analysis(pareto[:2], TARGET_TIME, repeats=10, search_budget=4)
    steps = rep.feature_names.index("inference_steps")
    top = sum(1 for r in range(10) if int(np.argmax(rep.per_repeat[r])) == steps)
    report(
        "rq2-directional",
        top == 10,
        f"inference_steps is the top time feature in {top}/10 repeats (need 10/10), "
        f"mean share {rep.mean[steps]:.2f}",
    )


def test_rq3_quality_importance(rq1_archives, report):
    pareto, _, _ = rq1_archives
    rep = importance_analysis(pareto[:2], TARGET_QUALITY, repeats=10, search_budget=4)
    rescale = rep.feature_names.index("guidance_rescale")
    top2 = sum(
        1 for r in range(10) if rescale in np.argsort(-rep.per_repeat[r], kind="stable")[:2]
    )
    group_index = {g: i for i, g in enumerate(rep.group_names)}
    per_repeat_groups = np.zeros((10, len(rep.group_names)))
    for col, name in enumerate(rep.feature_names):
        per_repeat_groups[:, group_index[name.split(":")[0]]] += rep.per_repeat[:, col]
    pos, neg = group_index["positive_prompt"], group_index["negative_prompt"]
    pos_wins = sum(1 for r in range(10) if per_repeat_groups[r, pos] > per_repeat_groups[r, neg])
    report(
        "rq3-directional",
        top2 >= 8 and pos_wins >= 8,
        f"guidance_rescale in top-2 features {top2}/10, positive group beats negative "
        f"{pos_wins}/10 (need >=8/10 each)",
    )


def test_random_forest_oracles(report):
    rng = np.random.default_rng(31)

    # Single informative feature: y depends on x0 alone.
    x = rng.random((150, 3))
    y = 3.0 * x[:, 0]
    forest = fit_forest(x, y, ForestConfig(n_trees=50, rng_seed=2))
    signal, _ = mdi_importance(forest)
    signal_ok = signal[0] > 0.8

    # Null signal: no feature may claim more than 3x the uniform share.
    null_worst = 0.0
    x_null = rng.random((150, 4))
    for seed in range(10):
        y_null = rng.normal(0.0, 1.0, size=150)
        vec, _ = mdi_importance(fit_forest(x_null, y_null, ForestConfig(n_trees=30, rng_seed=seed)))
        null_worst = max(null_worst, float(vec.max()))
    null_ok = null_worst <= 3.0 / 4.0

    # A forest of one unbagged tree is that tree, exactly.
    x_small = rng.random((60, 3))
    y_small = x_small[:, 0] + 0.5 * x_small[:, 1] ** 2
    cfg = ForestConfig(n_trees=1, bootstrap=False, rng_seed=11)
    one_tree_forest = fit_forest(x_small, y_small, cfg)
    _, skl_seed = _tree_seeds(cfg.rng_seed, 0)
    lone_tree = fit_tree(x_small, y_small, cfg, tree_seed=skl_seed)
    probe = rng.random((80, 3))
    identical = np.array_equal(
        one_tree_forest.predict(probe), lone_tree.predict(probe)
    ) and np.array_equal(one_tree_forest.trees[0].raw_importance(), lone_tree.raw_importance())

    report(
        "random-forest-oracles",
        signal_ok and null_ok and identical,
        f"single-signal share {signal[0]:.3f} > 0.8, null worst share {null_worst:.3f} "
        f"<= 0.75, forest-of-one {'==' if identical else '!='} single tree",
    )


def test_run_determinism(tmp_path, report):
    config = ExperimentConfig(repeats=3, master_seed=12)
    first = run_experiment(config, tmp_path / "first")
    second = run_experiment(config, tmp_path / "second")
    repeat_ok = all(
        a.path.read_bytes() == b.path.read_bytes() for a, b in zip(first.runs, second.runs)
    )

    wide_config = ExperimentConfig(repeats=3, master_seed=12, parallelism=4)
    wide = run_experiment(wide_config, tmp_path / "wide")
    parallel_ok = all(
        a.path.read_bytes() == w.path.read_bytes() for a, w in zip(first.runs, wide.runs)
    )
    report(
        "determinism",
        repeat_ok and parallel_ok,
        f"3 archives byte-identical across executions ({repeat_ok}) "
        f"and across parallelism 1 vs 4 ({parallel_ok})",
    )


def test_protocol_conformance_with_stubs(report):
    space = default_space()
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    handle = spawn_backend(stub_command("stub_ok.py"), handshake_timeout=8.0, request_timeout=8.0)
    handshake_ok = not handle.parallel_safe
    try:
        roundtrip_ok = True
        for i in range(5):
            request = WireRequest(
                id=f"a{i}", steps=10 + i, guidance_scale=7.5, guidance_rescale=0.5,
                seed=i, positive_prompt="p", negative_prompt="n",
            )
            response = roundtrip(handle, request)
            roundtrip_ok = roundtrip_ok and response.id == request.id
            roundtrip_ok = roundtrip_ok and (response.time_ms, response.quality) == (1000.0, 0.5)
    finally:
        handle.close()
    timings["handshake+roundtrip"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        spawn_backend(stub_command("stub_bad_version.py"), handshake_timeout=8.0)
        version_ok = False
    except HandshakeError:
        version_ok = True
    timings["version-check"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    handle = spawn_backend(
        stub_command("stub_slow_response.py", "5"), handshake_timeout=8.0, request_timeout=0.5
    )
    try:
        roundtrip(
            handle,
            WireRequest(id="t1", steps=1, guidance_scale=1.0, guidance_rescale=0.0,
                        seed=0, positive_prompt="", negative_prompt=""),
        )
        timeout_ok = False
    except ResponseTimeoutError:
        timeout_ok = True
    finally:
        handle.close()
    timings["timeout"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    backend = ExternalBackend(stub_command("stub_malformed.py"), space, request_timeout=8.0)
    try:
        from pareto_tuner.evaluation import BackendError
        from pareto_tuner.space import sample_random

        try:
            backend.evaluate(EvalRequest(id="m1", candidate=sample_random(space, Random(3))))
            malformed_ok = False
        except BackendError:
            malformed_ok = True
    finally:
        backend.close()
    timings["malformed-response"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    fuzz_rng = Random(555)
    pieces = ["a", "と", "🙂", '"', "\\", "\n", "\t", ", ", "{}", "line"]
    fuzz_ok = True
    for i in range(300):
        text = "".join(fuzz_rng.choice(pieces) for _ in range(fuzz_rng.randint(0, 12)))
        request = WireRequest(
            id=f"f{i}", steps=fuzz_rng.randint(1, 100),
            guidance_scale=fuzz_rng.uniform(1, 20), guidance_rescale=fuzz_rng.random(),
            seed=fuzz_rng.randint(0, 2**31), positive_prompt=text, negative_prompt=text[::-1],
            base_prompt=text,
        )
        line = request.to_line()
        fuzz_ok = fuzz_ok and "\n" not in line and WireRequest.from_line(line) == request
        if fuzz_rng.random() < 0.5:
            response = WireResponse(id=f"f{i}", time_ms=fuzz_rng.uniform(0, 1e5),
                                    quality=fuzz_rng.random())
        else:
            response = WireResponse(id=f"f{i}", error=text or "boom")
        line = response.to_line()
        fuzz_ok = fuzz_ok and "\n" not in line and WireResponse.from_line(line) == response
    timings["fuzz-serialization"] = time.perf_counter() - t0

    slowest = max(timings.values())
    all_ok = (
        handshake_ok and roundtrip_ok and version_ok and timeout_ok and malformed_ok and fuzz_ok
    )
    report(
        "protocol-conformance",
        all_ok and slowest < 10.0,
        "handshake/roundtrip/version/timeout/malformed/fuzz all passed, slowest suite "
        f"{slowest:.1f}s < 10s",
    )
