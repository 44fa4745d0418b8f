"""End-to-end acceptance criteria, each reported as one PASS/FAIL line."""
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_invertible
from orthosync import algo1, algo2
from orthosync.graph import DirectedGraph, classify, random_graph
from orthosync.netsim import Network, synth_instance
from orthosync.ortho import project_orthogonal, random_orthogonal
from orthosync.synccore import (
    EdgeTransformSet,
    build_directed_laplacian,
    build_undirected_laplacian,
    consistent_transforms,
    is_transitively_consistent,
    nullity,
    nullspace_containment,
    objective_f1,
    perturb_consistent,
)

N, D, DENSITY, SIGMA = 10, 5, 0.9, 0.2
SEEDS = range(20)
# Algorithm 1 horizon for the spectral-limit criterion; the double-precision
# horizons of this setup (D^-k overflow near 2e4, column conditioning near 3e3)
# both lie well beyond it.
SPECTRAL_HORIZON = 500
PRECISION_FLOOR = 1e-12


def report(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


# --- shared Algorithm 1 runs ------------------------------------------------------

@pytest.fixture(scope="module")
def consistent_run():
    inst = synth_instance(N, D, DENSITY, noise_sigma=0.0, seed=0)
    start = time.perf_counter()
    res = algo1.run_algorithm1(inst.graph, inst.transforms, iterations=10_000, gaps=False, record_every=100)
    return res, time.perf_counter() - start


@pytest.fixture(scope="module")
def noisy_runs():
    runs = []
    for seed in SEEDS:
        inst = synth_instance(N, D, DENSITY, noise_sigma=SIGMA, seed=seed)
        h = algo1.horizons(inst.graph, inst.transforms)
        assert SPECTRAL_HORIZON < min(h.overflow, h.conditioning)
        runs.append(algo1.run_algorithm1(inst.graph, inst.transforms, iterations=SPECTRAL_HORIZON, record_every=10))
    return runs


def test_criterion_01_consistent_exactness(consistent_run):
    res, elapsed = consistent_run
    resid = res.trace.column("edge_residual_R")
    iters = res.trace.iterations
    hit = np.flatnonzero(resid <= 1e-8)
    first = int(iters[hit[0]]) if len(hit) else None
    stays = len(hit) > 0 and np.all(resid[hit[0]:] <= 1e-8)
    passed = first is not None and stays and elapsed < 60
    report(1, passed, f"edge residual <= 1e-8 from k={first}, final {resid[-1]:.2e}, runtime {elapsed:.1f}s")
    assert passed


def test_criterion_02_spectral_limit(noisy_runs):
    iters = noisy_runs[0].trace.iterations
    gap_Q = np.array([r.trace.column("gap_Q") for r in noisy_runs])
    gap_R = np.array([r.trace.column("gap_R") for r in noisy_runs])
    edge_err = np.array([r.trace.rows[-1].get("spectral_edge_error_Q", np.nan) for r in noisy_runs])
    # Q is withheld while the tracked column norms are still non-positive; that must be an early transient
    defined = ~np.isnan(gap_Q).any(axis=0)
    withheld = iters[~defined]
    transient_ok = len(withheld) == 0 or withheld.max() < SPECTRAL_HORIZON // 10
    mean_Q = gap_Q[:, defined].mean(axis=0)
    mean_R = gap_R[:, defined].mean(axis=0)
    k_defined = iters[defined]
    # decrease until the machine-precision floor, then stay on it
    above = mean_Q > PRECISION_FLOOR
    settle = int(np.argmin(above)) if not above.all() else len(above) - 1
    decreasing = bool(np.all(np.diff(mean_Q[:settle + 1]) <= 0) and not above[settle + 1:].any())
    ratio_ok = mean_Q[-1] <= mean_R[-1] / 10
    edge_ok = bool(np.all(edge_err <= 1e-3))
    passed = transient_ok and decreasing and ratio_ok and edge_ok and k_defined[-1] == SPECTRAL_HORIZON
    report(2, passed, f"Q withheld only at k in {withheld.tolist()}; mean gap_Q decreasing to floor by "
                      f"k={int(k_defined[settle])}; k={int(k_defined[-1])}: gap_Q {mean_Q[-1]:.2e} vs "
                      f"gap_R {mean_R[-1]:.2e}; max edge error {np.nanmax(edge_err):.2e}")
    assert passed


def _raw_polar(M):
    U, _, Vt = np.linalg.svd(M)
    return U @ Vt


def test_criterion_03_algorithm2_gap():
    details, passed = [], True
    for density in (0.5, 0.9):
        defined, raw = [], []
        for seed in SEEDS:
            inst = synth_instance(N, D, density, mode="qsc", noise_sigma=SIGMA, seed=seed)
            g, T = inst.graph, inst.transforms
            res = algo2.run_algorithm2(g, T, iterations=10_000, record_every=10_000)
            ref = res.reference
            gap_final = res.trace.rows[-1]["gap_R"]
            if gap_final is not None:
                defined.append(np.log10(gap_final))
            # ill-conditioned iterates: fall back to the raw SVD polar factor
            R = np.array([_raw_polar(a.R_tilde).T for a in res.agents])
            raw.append(np.log10(abs(objective_f1(g, T, R) / ref.f1_projected - 1)))
        mean_defined, mean_raw = float(np.mean(defined)), float(np.mean(raw))
        ok = mean_defined <= -0.5 and mean_raw <= -0.5
        passed &= ok
        details.append(f"density {density}: {mean_defined:.3f} over {len(defined)} defined seeds, "
                       f"{mean_raw:.3f} with raw polar")
    report(3, passed, "mean log10 gap_R at k=1e4: " + "; ".join(details))
    assert passed


def test_criterion_04_nullity_characterization():
    misclassified, instances, perturbations = 0, 0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(2, 9)), int(rng.integers(1, 5))
        g = random_graph(n, float(rng.uniform(min(1.0, 2 / n + 0.05), 1.0)), "symmetric-connected", rng)
        orthogonal = seed % 2 == 0
        C = np.array([random_orthogonal(d, rng) if orthogonal else random_invertible(d, rng) for _ in range(n)])
        T = consistent_transforms(g, C)

        def count(T):
            lam = np.linalg.eigvalsh(build_undirected_laplacian(g, T).matrix)
            independent = int(np.sum(lam < 1e-9 * lam[-1]))
            assert independent == nullity(build_undirected_laplacian(g, T))
            return independent

        instances += 1
        misclassified += count(T) != d
        for e in g.edges:
            E = rng.standard_normal((d, d))
            bumped = T[e] @ (np.eye(d) + 0.1 * E / np.linalg.norm(E, 2))
            perturbations += 1
            misclassified += count(T.replace({e: bumped})) >= d
    passed = misclassified == 0
    report(4, passed, f"{misclassified} misclassified over {instances} instances and {perturbations} perturbations")
    assert passed


def _random_orthogonal_instance(seed, mode):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 9)), int(rng.integers(1, 5))
    density = float(rng.uniform(min(1.0, 2 / n + 0.05), 1.0))
    g = random_graph(n, density, mode, rng)
    weights = {e: float(rng.uniform(0.2, 3.0)) for e in g.edges}
    g = DirectedGraph(n, weights)
    T = EdgeTransformSet(d, {e: random_orthogonal(d, rng) for e in g.edges})
    return g, T


def test_criterion_05_spectral_bounds():
    worst_u, worst_d = np.inf, np.inf
    for seed in range(100):
        g, T = _random_orthogonal_instance(seed, "symmetric-connected" if seed % 2 else "qsc")
        A = g.adjacency()
        S = A + A.T
        P = np.diag(S.sum(axis=1)) + S
        lam_max = np.linalg.eigvalsh(build_undirected_laplacian(g, T).matrix)[-1]
        worst_u = min(worst_u, np.linalg.norm(P, 2) - lam_max)
        Ld = build_directed_laplacian(g, T).matrix
        worst_d = min(worst_d, np.linalg.norm(np.diag(A.sum(axis=1)) + A, 2) - np.linalg.norm(Ld, 2))
    passed = worst_u >= -1e-9 and worst_d >= -1e-9
    report(5, passed, f"min slack {worst_u:.3e} (undirected), {worst_d:.3e} (directed)")
    assert passed


def test_criterion_06_stability_spectra():
    worst_all, worst_strong, strong = np.inf, np.inf, 0
    for seed in range(100):
        g, T = _random_orthogonal_instance(seed, "qsc")
        L = build_directed_laplacian(g, T).matrix
        norm = np.linalg.norm(L, 2)
        lam = np.linalg.eigvals(L)
        worst_all = min(worst_all, lam.real.min() / norm)
        if classify(g).strongly_connected:
            strong += 1
            big = lam[np.abs(lam) > 1e-8 * norm]
            if len(big):
                worst_strong = min(worst_strong, big.real.min() / norm)
    passed = worst_all >= -1e-9 and worst_strong > 1e-8 and strong > 0
    report(6, passed, f"min Re/||L|| {worst_all:.3e} over 100 QSC; "
                      f"{worst_strong:.3e} over {strong} strongly connected (non-null part)")
    assert passed


def test_criterion_07_consensus_conservation(consistent_run, noisy_runs):
    runs = [consistent_run[0]] + list(noisy_runs)
    rounds = sum(len(r.conservation.residuals) for r in runs)
    worst = max(r.conservation.worst for r in runs)
    passed = worst <= 1e-10
    report(7, passed, f"max relative residual {worst:.2e} over {rounds} rounds in {len(runs)} runs")
    assert passed


def test_criterion_08_perturbation_constructor():
    failures, worst_null, worst_size = 0, 0.0, 0.0
    graphs = 0
    seed = 0
    while graphs < 50:
        rng = np.random.default_rng(1000 + seed)
        seed += 1
        n, d = int(rng.integers(3, 9)), int(rng.integers(1, 5))
        g = random_graph(n, float(rng.uniform(0.3, 0.9)), "qsc", rng)
        if max(len(g.neighbors(i)) for i in range(n)) < 2:
            continue
        graphs += 1
        C = np.array([random_invertible(d, rng) for _ in range(n)])
        T = consistent_transforms(g, C)
        eps = float(10 ** rng.uniform(-4, -1))
        Tp = perturb_consistent(g, T, C, eps)
        res = is_transitively_consistent(g, Tp)
        failures += res.constructive_consistent or res.consistent
        worst_null = max(worst_null, nullspace_containment(build_directed_laplacian(g, Tp), C))
        size = sum(np.linalg.norm(Tp[e] - T[e]) for e in g.edges)
        worst_size = max(worst_size, size / eps)
    passed = failures == 0 and worst_null <= 1e-10 and worst_size <= 1
    report(8, passed, f"{failures} still consistent of {graphs}; max containment {worst_null:.2e}; "
                      f"max perturbation/eps {worst_size:.3f}")
    assert passed


def _replay_error(network, step, R0, eps, laplacian, rounds=1000):
    """Max over k <= rounds of the relative distance between the stacked iterate and (I - eps L)^k R0."""
    stacked = []
    network.run_rounds(step, rounds, monitors=[lambda k, agents: stacked.append(
        np.concatenate([a.R_tilde for a in agents]))])
    assert len(stacked) == rounds + 1
    M = np.eye(laplacian.shape[0]) - eps * laplacian
    worst = 0.0
    for k, X in enumerate(stacked):
        ref = np.linalg.matrix_power(M, k) @ R0
        worst = max(worst, np.linalg.norm(X - ref) / np.linalg.norm(ref))
    return worst


def test_criterion_09_distributed_equals_centralized():
    worst = {"alg1": 0.0, "alg2": 0.0}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(3, 9)), int(rng.integers(1, 5))
        eps = 1 / (2 * n)

        inst = synth_instance(n, d, float(rng.uniform(0.5, 1.0)), noise_sigma=0.3, seed=seed)
        g, T = inst.graph, inst.transforms
        net = Network(g, algo1.init_agents(g, T), algo1.publish)
        err = _replay_error(net, lambda a, box: algo1.agent_step(a, box, eps, eps),
                            np.tile(np.eye(d), (n, 1)), eps, build_undirected_laplacian(g, T).matrix)
        worst["alg1"] = max(worst["alg1"], err)

        inst = synth_instance(n, d, float(rng.uniform(0.4, 1.0)), mode="qsc", noise_sigma=0.3, seed=seed)
        g, T = inst.graph, inst.transforms
        R0 = rng.standard_normal((n, d, d))
        net = Network(g, algo2.init_agents(g, T, R0), algo2.publish)
        err = _replay_error(net, lambda a, box: algo2.agent_step(a, box, eps),
                            np.concatenate(R0), eps, build_directed_laplacian(g, T).matrix)
        worst["alg2"] = max(worst["alg2"], err)
    passed = worst["alg1"] <= 1e-10 and worst["alg2"] <= 1e-10
    report(9, passed, f"max relative deviation {worst['alg1']:.2e} (alg1), {worst['alg2']:.2e} (alg2) "
                      f"over k <= 1000, 20 instances each")
    assert passed


def test_criterion_10_projection_brute_force():
    rng = np.random.default_rng(2024)
    theta = np.arange(0, 2 * np.pi, 1e-4)
    c, s = np.cos(theta), np.sin(theta)
    worst = 0.0
    for _ in range(100):
        M = rng.standard_normal((2, 2))
        # trace(Q^T M) for rotations [[c,-s],[s,c]] and reflections [[c,s],[s,-c]]
        rot = c * (M[0, 0] + M[1, 1]) + s * (M[1, 0] - M[0, 1])
        ref = c * (M[0, 0] - M[1, 1]) + s * (M[0, 1] + M[1, 0])
        if rot.max() >= ref.max():
            i = int(np.argmax(rot))
            Q = np.array([[c[i], -s[i]], [s[i], c[i]]])
        else:
            i = int(np.argmax(ref))
            Q = np.array([[c[i], s[i]], [s[i], -c[i]]])
        worst = max(worst, np.linalg.norm(project_orthogonal(M) - Q))
    passed = worst <= 1e-3
    report(10, passed, f"max Frobenius distance to grid maximizer {worst:.2e} on 100 matrices")
    assert passed
