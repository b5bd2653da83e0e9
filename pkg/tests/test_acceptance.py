"""Acceptance criteria, one test each, with a PASS/FAIL summary line per criterion.

The training criteria (6, 7, 9) run the full desk-scale command line three
times plus a lambda=0 ablation; expect several minutes on one core. Reference
numbers from the oracle run with seed 7 live in ``acceptance_reference.json``.
"""

import json
import math
import random
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record_acceptance
from musicssl import cli, coder, diagnostics, loss, trainer
from musicssl import diffcore as dc
from musicssl.coder import SegmentConfig

REFERENCE = json.loads((Path(__file__).parent / "acceptance_reference.json").read_text())
THRESHOLDS = REFERENCE["thresholds"]


def check(number, title, passed, detail):
    record_acceptance(number, title, bool(passed), detail)
    assert passed, detail


def test_criterion_1_gradient_fidelity():
    started = time.perf_counter()
    fn, leaves = cli.gradcheck_problem(seed=0, batch=8, segments=2, segment_dim=2, input_dim=4,
                                       hidden=8)
    report = dc.grad_check(fn, leaves, step=1e-6, tolerance=1e-5)
    elapsed = time.perf_counter() - started
    check(1, "gradient fidelity", report.max_rel_error < 1e-5 and not report.nonfinite
          and elapsed < 10.0,
          f"max_rel_error={report.max_rel_error:.2e} (<1e-5), {elapsed:.2f}s (<10s)")


def onehot_ideal():
    return dc.Array(diagnostics.ideal_codes(SegmentConfig(2, 2)))


def entropy_of(code, cfg):
    joint = loss.joint_distribution(code, code)
    return float(loss.entropy_loss(joint, loss.selection_mask(cfg), cfg).data)


def test_criterion_2_analytic_loss_values():
    cfg = SegmentConfig(2, 2)
    ideal = onehot_ideal()
    collapsed = np.zeros((4, 2, 2))
    collapsed[:, :, 0] = 1.0
    uniform = np.full((4, 2, 2), 0.5)
    errs = {
        "ideal": abs(entropy_of(ideal, cfg) + 1.5 * math.log(2)),
        "collapsed": abs(entropy_of(dc.Array(collapsed), cfg)),
        "ti_identical": abs(float(loss.ti_loss(ideal, ideal).data)),
        "ti_uniform": abs(float(loss.ti_loss(uniform, uniform).data) - math.log(2)),
    }
    check(2, "analytic loss values", max(errs.values()) < 1e-9,
          ", ".join(f"{k} err={v:.1e}" for k, v in errs.items()) + " (<1e-9)")


def test_criterion_3_entropy_tie_break():
    cfg = SegmentConfig(2, 2)
    ideal = onehot_ideal()
    uniform = dc.Array(np.full((4, 2, 2), 0.5))
    ent_gap = abs(entropy_of(ideal, cfg) - entropy_of(uniform, cfg))
    tot_ideal = float(loss.total_loss(ideal, ideal, cfg, 1.0)[0].data)
    tot_uniform = float(loss.total_loss(uniform, uniform, cfg, 1.0)[0].data)
    diff = tot_uniform - tot_ideal
    check(3, "entropy tie-break", ent_gap < 1e-9 and abs(diff - math.log(2)) < 1e-9,
          f"entropy gap={ent_gap:.1e}, total(uniform)-total(one-hot)={diff:.12f} vs ln 2")


def test_criterion_4_theory_diagnostics_at_ideal():
    worst_mi = worst_within = worst_cross = 0.0
    for s, ds in [(2, 2), (2, 3), (3, 4), (4, 2)]:
        code = diagnostics.ideal_codes(SegmentConfig(s, ds))
        mi = diagnostics.segment_mutual_information(code)
        worst_mi = max(worst_mi, np.abs(mi[~np.eye(s, dtype=bool)]).max())
        cov = diagnostics.code_covariance(code)
        for a in range(s):
            for b in range(s):
                block = cov[a * ds:(a + 1) * ds, b * ds:(b + 1) * ds]
                if a == b:
                    off = block[~np.eye(ds, dtype=bool)]
                    worst_within = max(worst_within, np.abs(off + 1.0 / ds**2).max())
                else:
                    worst_cross = max(worst_cross, np.abs(block).max())
    check(4, "theory diagnostics at the ideal",
          worst_mi < 1e-9 and worst_within < 1e-9 and worst_cross < 1e-12,
          f"max off-diag MI={worst_mi:.1e} (<1e-9), within-segment cov err={worst_within:.1e} "
          f"(<1e-9), cross-segment cov={worst_cross:.1e} (<1e-12)")


def test_criterion_5_mask_and_block_identities():
    rnd = random.Random(5)
    bad_counts = []
    for _ in range(20):
        s, ds = rnd.randint(1, 12), rnd.randint(2, 12)
        count = int(loss.selection_mask(SegmentConfig(s, ds)).sum())
        if count != s * ds + s * (s - 1) * ds * ds:
            bad_counts.append((s, ds, count))
    worst = 0.0
    rng = np.random.default_rng(5)
    for _ in range(100):
        s, ds, n = rng.integers(1, 5), rng.integers(2, 6), rng.integers(1, 40)
        cfg = SegmentConfig(int(s), int(ds))
        p1 = coder.encode(rng.standard_normal((n, cfg.embed_dim)) * 3, cfg)
        p2 = coder.encode(rng.standard_normal((n, cfg.embed_dim)) * 3, cfg)
        joint = loss.joint_distribution(p1, p2).data
        blocks = joint.reshape(s, ds, s, ds).sum(axis=(1, 3))
        worst = max(worst, np.abs(blocks - 1.0).max())
    check(5, "mask and block identities", not bad_counts and worst < 1e-9,
          f"mask count mismatches={bad_counts or 0} over 20 pairs, "
          f"max |block sum - 1|={worst:.1e} over 100 batches (<1e-9)")


def test_criterion_8_schedule_conformance():
    cfg = trainer.TrainConfig(batch_size=512, epochs=100, warmup_epochs=10, base_lr=0.6)
    spe = 8
    peak = 0.6 * 512 / 256
    start = trainer.lr_at(0, cfg, spe)
    at_peak = trainer.lr_at(10 * spe, cfg, spe)
    end = trainer.lr_at(100 * spe, cfg, spe)
    sched = trainer.Schedule.from_config(cfg, spe)
    warmup_limit = sched.peak_lr * sched.warmup_steps / sched.warmup_steps
    jump = abs(at_peak - warmup_limit)
    ok = start == 0.0 and abs(at_peak - peak) < 1e-12 and abs(end - 0.002) < 1e-12 and jump < 1e-12
    check(8, "schedule conformance", ok,
          f"lr(0)={start}, lr(warmup end)={at_peak} vs {peak}, lr(final)={end} vs 0.002, "
          f"boundary jump={jump:.1e}")


# -- seeded desk-scale training runs ----------------------------------------------------

def musicssl(*argv):
    cmd = [sys.executable, "-m", "musicssl", *map(str, argv)]
    done = subprocess.run(cmd, capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    return done.stdout


TRAIN_FLAGS = ["--set", "seed=7", "--set", "lambda=1"]


def train(workdir, tag, *extra):
    ckpt, metrics = workdir / f"{tag}.ckpt.json", workdir / f"{tag}.metrics.jsonl"
    started = time.perf_counter()
    musicssl("train", "--data", workdir / "data.txt", "--out-ckpt", ckpt, "--metrics", metrics,
             *TRAIN_FLAGS, *extra)
    return ckpt, metrics, time.perf_counter() - started


def probe(workdir, ckpt):
    report = workdir / (ckpt.name + ".probe.jsonl")
    musicssl("probe", "--ckpt", ckpt, "--data", workdir / "data.txt", "--report", report)
    return json.loads(report.read_text())["test_acc"]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    workdir = tmp_path_factory.mktemp("acceptance")
    musicssl("gen-data", "--classes", 8, "--dim-signal", 16, "--dim-nuisance", 48,
             "--per-class", 512, "--seed", 7, "--out", workdir / "data.txt")
    out = {"dir": workdir}
    out["main"] = train(workdir, "main")
    out["repeat"] = train(workdir, "repeat")
    out["ablation"] = train(workdir, "ablation", "--set", "lambda=0")
    out["init"] = train(workdir, "init", "--set", "epochs=0", "--set", "warmup_epochs=0")
    return out


def read_metrics(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


@pytest.mark.slow
def test_criterion_6_training_efficacy(runs):
    workdir = runs["dir"]
    ckpt, metrics, seconds = runs["main"]
    trained, init = probe(workdir, ckpt), probe(workdir, runs["init"][0])
    gain = trained - init
    tail = read_metrics(metrics)[-10:]
    worst_cf = max(r["collapse_fraction"] for r in tail)
    worst_dev = max(r["marginal_deviation"] for r in tail)
    ok = (len(tail) == 10 and seconds < 15 * 60 and gain >= THRESHOLDS["probe_gain"]
          and worst_cf < THRESHOLDS["collapse_fraction"]
          and worst_dev < THRESHOLDS["marginal_deviation"])
    check(6, "training efficacy", ok,
          f"probe {trained:.4f} vs random-init {init:.4f} (gain {gain * 100:+.1f} pp, need "
          f">= {THRESHOLDS['probe_gain'] * 100:.0f}); last-10 max collapse_fraction "
          f"{worst_cf:.3f} (<{THRESHOLDS['collapse_fraction']}), max marginal deviation "
          f"{worst_dev:.3f} (<{THRESHOLDS['marginal_deviation']}); {seconds:.0f}s (<900s)")


@pytest.mark.slow
def test_criterion_7_ablation_direction(runs):
    workdir = runs["dir"]
    full, ablated = probe(workdir, runs["main"][0]), probe(workdir, runs["ablation"][0])
    cf = read_metrics(runs["ablation"][1])[-1]["collapse_fraction"]
    ok = cf < THRESHOLDS["ablation_collapse_fraction"] and ablated < full
    check(7, "ablation direction", ok,
          f"lambda=0 collapse_fraction {cf:.3f} (<{THRESHOLDS['ablation_collapse_fraction']}), "
          f"probe lambda=0 {ablated:.4f} < lambda=1 {full:.4f}")


@pytest.mark.slow
def test_criterion_9_determinism(runs):
    (c1, m1, _), (c2, m2, _) = runs["main"], runs["repeat"]
    same_metrics = m1.read_bytes() == m2.read_bytes()
    same_ckpt = c1.read_bytes() == c2.read_bytes()
    check(9, "determinism", same_metrics and same_ckpt,
          f"metrics identical={same_metrics}, checkpoints identical={same_ckpt}")
