"""Acceptance checks, one test per criterion.

Each test prints a single ``[C<n>] PASS|FAIL`` line with the measured values
and the pinned threshold, then asserts.  The training-based checks (4-7) take
a few minutes in total; they carry the ``slow`` marker, so ``-m "not slow"`` skips them.
"""

import time

import numpy as np
import pytest

from clucdd.cli import main
from clucdd.clustering import AffinityPropagation, GaussianMixture, KMeans
from clucdd.corpus import read_dialogues
from clucdd.inference import evaluate_model
from clucdd.metrics import ari, loc3, nmi, one_to_one, shen_f
from clucdd.objective import ContrastiveConfig, contrastive_loss
from clucdd.synth import SynthConfig, generate_splits
from clucdd.trainer import TrainConfig, train
from helpers import gradient_instance, near_kink
from oracles import (
    ari_oracle,
    finite_difference,
    loc3_oracle,
    nmi_oracle,
    one_to_one_oracle,
    relative_error,
    shen_f_oracle,
)

# pinned thresholds
METRIC_TOL = 1e-9
METRIC_SECONDS = 10.0
GRAD_TOL = 1e-4
GRAD_STEP = 1e-5
GRAD_INSTANCES = 20
GRAD_SECONDS = 30.0
PERTURBATION = 1e-2
E2E = {"nmi": 0.85, "ari": 0.70, "shen_f": 0.85}
E2E_SECONDS = 300.0
K_ACCURACY = 0.80
MARGINS = (0.5, 0.75, 1.0, 1.25)
MARGIN_SPREAD = 0.10
ABLATION_BAND = 0.02
ABLATION_GAP = 0.03
FUZZ_INSTANCES = 100

# synthetic setting shared by criteria 4-7: 300/50/50 dialogues, n in [20, 50],
# k in [2, 4], 8 words per session vocabulary, 10% noise tokens, d = 32
SYNTH = dict(n_min=20, n_max=50, k_min=2, k_max=4, vocab_per_session=8, noise_rate=0.1, n_topics=4)
BURSTY = dict(SYNTH, burstiness=0.8, ambiguous_rate=0.25)
TRAIN = dict(dim=32, k_max=4, learning_rate=5e-3, batch_size=4, epochs=30, seed=0)


def verdict(capsys, criterion, ok, detail):
    with capsys.disabled():
        print(f"\n[{criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def random_pair(rng):
    n = int(rng.integers(2, 21))
    return rng.integers(int(rng.integers(1, 6)), size=n), rng.integers(int(rng.integers(1, 6)), size=n)


def test_c1_metric_oracles(capsys):
    rng = np.random.default_rng(0)
    pairs = [random_pair(rng) for _ in range(500)]
    start = time.perf_counter()
    worst = 0.0
    for gold, pred in pairs:
        for fast, oracle in ((nmi, nmi_oracle), (ari, ari_oracle), (loc3, loc3_oracle),
                             (one_to_one, one_to_one_oracle), (shen_f, shen_f_oracle)):
            worst = max(worst, abs(fast(gold, pred) - oracle(gold, pred)))
    elapsed = time.perf_counter() - start
    verdict(capsys, "C1", worst <= METRIC_TOL and elapsed < METRIC_SECONDS,
            f"500 pairs, max |metric - oracle| = {worst:.2e} (<= {METRIC_TOL}), {elapsed:.2f}s (< {METRIC_SECONDS}s)")


def test_c2_gradient_check(capsys):
    cfg = ContrastiveConfig(margin=1.0, gamma=0.5)
    start = time.perf_counter()
    errors, skipped, seed = [], [], 0
    while len(errors) < GRAD_INSTANCES and seed < 2 * GRAD_INSTANCES:
        model, batch = gradient_instance(seed, n=4, d=8)
        if near_kink(model, batch, cfg.margin):
            skipped.append(seed)
        else:
            _, _, grads = model.loss_and_grads(batch, cfg)
            numeric = finite_difference(
                lambda: model.loss_and_grads(batch, cfg, need_grads=False)[0], model.params, GRAD_STEP)
            assert set(grads) == set(model.params)
            errors.append(max(relative_error(grads[k], numeric[k]) for k in grads))
        seed += 1
    elapsed = time.perf_counter() - start
    worst = max(errors)
    ok = len(errors) >= GRAD_INSTANCES and worst < GRAD_TOL and elapsed < GRAD_SECONDS
    verdict(capsys, "C2", ok,
            f"{len(errors)} instances (skipped near-kink seeds {skipped}), max relative error {worst:.2e} "
            f"(< {GRAD_TOL}), {elapsed:.1f}s (< {GRAD_SECONDS}s)")


def test_c3_loss_surface(capsys):
    rng = np.random.default_rng(0)
    margin = 1.0
    cfg = ContrastiveConfig(margin=margin)
    gold = [0, 0, 1, 1, 0, 1]
    a, b = np.zeros(4), np.zeros(4)
    a[0], b[1] = 1.0, 1.0  # distance sqrt(2) >= margin
    r = np.stack([a if g == 0 else b for g in gold])
    base = contrastive_loss(r, gold, cfg)[0]
    smallest = np.inf
    for _ in range(200):
        delta = rng.standard_normal(r.shape)
        delta *= PERTURBATION / np.linalg.norm(delta)
        smallest = min(smallest, contrastive_loss(r + delta, gold, cfg)[0])
    for i in range(len(gold)):
        for j in range(r.shape[1]):
            moved = r.copy()
            moved[i, j] += PERTURBATION
            smallest = min(smallest, contrastive_loss(moved, gold, cfg)[0])
    verdict(capsys, "C3", base == 0.0 and smallest > 0.0,
            f"loss at constructed optimum = {base!r} (== 0), min loss over perturbations of norm {PERTURBATION} = {smallest:.3e} (> 0)")


@pytest.fixture(scope="module")
def synthetic(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    argv = ["synth", "--out", str(out), "--train", "300", "--dev", "50", "--test", "50", "--seed", "1"]
    for key, value in SYNTH.items():
        argv += [f"--{key.replace('_', '-')}", str(value)]
    assert main(argv) == 0
    return tuple(read_dialogues(out / f"{s}.jsonl") for s in ("train", "dev", "test"))


@pytest.fixture(scope="module")
def margin_runs(synthetic):
    train_set, dev, test = synthetic
    runs = {}
    for m in MARGINS:
        start = time.perf_counter()
        result = train(train_set, TrainConfig(margin=m, **TRAIN), dev)
        runs[m] = (result.best, time.perf_counter() - start)
    return runs


@pytest.mark.slow
def test_c4_end_to_end(capsys, synthetic, margin_runs):
    model, elapsed = margin_runs[1.0]
    summary = evaluate_model(model, synthetic[2], method="kmeans", k_source="head").summary()
    ok = all(summary[k] >= v for k, v in E2E.items()) and elapsed < E2E_SECONDS
    detail = ", ".join(f"{k} {summary[k]:.3f} (>= {v})" for k, v in E2E.items())
    verdict(capsys, "C4", ok, f"kmeans + head k on 50 test dialogues: {detail}; training {elapsed:.0f}s (< {E2E_SECONDS:.0f}s)")


@pytest.mark.slow
def test_c5_head_accuracy(capsys, synthetic, margin_runs):
    model, _ = margin_runs[1.0]
    test = synthetic[2]
    predicted = np.argmax(model.session_distribution(test), axis=1) + 1
    accuracy = float(np.mean(predicted == np.array([d.k for d in test])))
    verdict(capsys, "C5", accuracy >= K_ACCURACY, f"session-count exact match {accuracy:.3f} (>= {K_ACCURACY})")


@pytest.mark.slow
def test_c6_margin_robustness(capsys, synthetic, margin_runs):
    scores = {m: evaluate_model(margin_runs[m][0], synthetic[2], k_source="head").shen_f for m in MARGINS}
    spread = max(scores.values()) - min(scores.values())
    listing = ", ".join(f"m={m}: {s:.3f}" for m, s in scores.items())
    verdict(capsys, "C6", spread <= MARGIN_SPREAD, f"Shen-F {listing}; spread {spread:.3f} (<= {MARGIN_SPREAD})")


@pytest.mark.slow
def test_c7_ablation_ordering(capsys):
    train_set, dev, test = generate_splits(SynthConfig(dialogues=0, seed=1, **BURSTY), 300, 50, 50)
    scores = {}
    for variant in ("full", "no_bilstm", "no_sff"):
        result = train(train_set, TrainConfig(variant=variant, **TRAIN), dev)
        scores[variant] = evaluate_model(result.best, test, k_source="gold").shen_f
    full, no_bl, no_sff = scores["full"], scores["no_bilstm"], scores["no_sff"]
    ok = (full >= no_bl - ABLATION_BAND and no_bl >= no_sff - ABLATION_BAND
          and full - no_sff >= ABLATION_GAP)
    verdict(capsys, "C7", ok,
            f"bursty corpus, gold k: full {full:.3f} >= no_bilstm {no_bl:.3f} >= no_sff {no_sff:.3f} "
            f"(band {ABLATION_BAND}), full - no_sff = {full - no_sff:.3f} (>= {ABLATION_GAP})")


def test_c8_clustering_invariants(capsys):
    rng = np.random.default_rng(0)
    failures = 0
    for i in range(FUZZ_INSTANCES):
        n = int(rng.integers(5, 40))
        X = rng.standard_normal((n, int(rng.integers(1, 6)))) * rng.uniform(0.1, 10)
        k = int(rng.integers(1, min(n, 6) + 1))
        km = KMeans(n_clusters=k, n_init=3, random_state=i).fit(X)
        gm = GaussianMixture(n_components=k, random_state=i).fit(X)
        inertia = np.asarray(km.inertia_history_)
        loglik = np.asarray(gm.log_likelihood_history_)
        if np.any(np.diff(inertia) > 1e-9 * np.maximum(1, np.abs(inertia[:-1]))):
            failures += 1
        if np.any(np.diff(loglik) < -1e-9 * np.maximum(1, np.abs(loglik[:-1]))):
            failures += 1
    blobs = np.vstack([rng.normal(0, 0.3, (15, 2)), rng.normal(8, 0.3, (15, 2))])
    ap = AffinityPropagation().fit(blobs)
    n_clusters = len(set(ap.labels_.tolist()))
    verdict(capsys, "C8", failures == 0 and n_clusters == 2,
            f"{FUZZ_INSTANCES} fuzzed k-means/GMM fits, {failures} monotonicity violations (== 0); "
            f"AP on two blobs -> {n_clusters} clusters (== 2)")


def test_c9_determinism(capsys, tmp_path):
    config = tmp_path / "config.json"
    config.write_text('{"epochs": 2, "dim": 8, "seed": 3}')
    runs = []
    for run in ("a", "b"):
        d = tmp_path / run
        data, ckpt = d / "data", d / "model.ckpt"
        commands = [
            ["synth", "--out", str(data), "--train", "8", "--dev", "3", "--test", "3",
             "--n-min", "6", "--n-max", "10", "--seed", "5"],
            ["ingest", "--input", str(data / "train.jsonl"), "--format", "session", "--out", str(d / "ing"),
             "--split", "0.5,0.25,0.25", "--seed", "5"],
            ["train", "--data", str(data), "--config", str(config), "--out", str(ckpt)],
            ["disentangle", "--ckpt", str(ckpt), "--data", str(data / "test.jsonl"), "--out", str(d / "pred.jsonl")],
            ["evaluate", "--gold", str(data / "test.jsonl"), "--pred", str(d / "pred.jsonl"),
             "--out", str(d / "report.json"), "--csv", str(d / "report.csv")],
            ["compare-clustering", "--ckpt", str(ckpt), "--data", str(data / "test.jsonl"), "--out", str(d / "cmp.csv")],
            ["sweep-margin", "--data", str(data), "--config", str(config), "--margins", "0.5,1.0", "--out", str(d / "m.csv")],
            ["sweep-sessions", "--data", str(data), "--config", str(config), "--out", str(d / "k.csv")],
        ]
        codes = [main(argv) for argv in commands]
        assert codes == [0] * len(commands), codes
        runs.append({p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    differing = sorted(k for k in runs[0] if runs[0][k] != runs[1].get(k))
    ok = runs[0].keys() == runs[1].keys() and not differing
    verdict(capsys, "C9", ok, f"8 subcommands run twice, {len(runs[0])} output files, byte-differing: {differing or 'none'}")
