"""Acceptance suite. Each test prints one PASS/FAIL line; run with ``pytest -s``."""

import copy
import filecmp
import math
import time

import numpy as np
import pytest

from mtaffect import autodiff as ad
from mtaffect import checks, data as D, losses, selfcure
from mtaffect.cli import main as cli_main
from mtaffect.metrics import composite_scores
from mtaffect.model import ModelConfig, ModelParams, init_model
from mtaffect.teacher import NoiseConfig, TeacherState, ema_update
from mtaffect.trainer import TrainConfig, Trainer, prepare_data, run_ablation, train


def report(n, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
    assert ok, detail


def test_1_full_model_gradients():
    t0 = time.perf_counter()
    rep = checks.full_model_check(seed=0, batch=8)
    secs = time.perf_counter() - t0
    worst = max(b.max_rel_error for b in rep.blocks)
    report(1, rep.passed and worst < 1e-4 and secs < 60,
           f"{len(rep.blocks)} blocks, worst rel err {worst:.2e}, {secs:.1f}s")


def _brute_ccc(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return 2 * cov / (vx + vy + (mx - my) ** 2)


def test_2_ccc_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        x = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 2), 32)
        y = 0.5 * x + rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 2), 32)
        worst = max(worst, abs(losses.ccc(x, y) - _brute_ccc(list(x), list(y))))
    v = np.array([-3.0, -1.0, 1.0, 3.0])
    exact = (losses.ccc(v, v) == 1.0 and losses.ccc(v, -v) == -1.0
             and losses.ccc([1.0, -1.0, 1.0, -1.0], [1.0, 1.0, -1.0, -1.0]) == 0.0)
    report(2, worst <= 1e-9 and exact, f"max |diff| {worst:.1e} over 100 pairs, analytic cases exact={exact}")


def test_3_published_composites():
    got = [composite_scores(f1_expr=0.26, acc_expr=0.46).m_expr,
           composite_scores(ccc_v=0.200, ccc_a=0.190).m_va,
           composite_scores(f1_au=0.367, acc_au=0.193).m_au]
    want = [0.326, 0.195, 0.280]
    ok = all(abs(g - w) <= 1e-3 for g, w in zip(got, want))
    report(3, ok, "composites " + ", ".join(f"{g:.4f}~{w}" for g, w in zip(got, want)))


def test_4_ema_closed_form():
    cfg = ModelConfig(input_dim=5, hidden_dims=[6], seed=0)
    student = init_model(cfg)
    zero = ModelParams(cfg, {k: np.zeros_like(v) for k, v in student.blocks.items()})
    worst = 0.0
    for t in (1, 10, 100):
        state = TeacherState(copy.deepcopy(zero), eta=0.99)
        for _ in range(t):
            state = ema_update(state, student)
        expected = student.flat() * (1 - 0.99 ** t)
        worst = max(worst, float(np.max(np.abs(state.params.flat() - expected))))
    report(4, worst <= 1e-12, f"max deviation {worst:.1e} for t in (1, 10, 100)")


def test_5_rank_regularizer_properties():
    rng = np.random.default_rng(5)
    delta = selfcure.DEFAULT_DELTA
    bad = []
    n_active = n_zero = 0
    for i in range(1000):
        b = int(rng.integers(2, 65))
        w = rng.uniform(0, 1) + rng.uniform(0, 0.5) * rng.uniform(-1, 1, b)
        w = np.clip(w, 0, 1).reshape(b, 1)
        split = selfcure.split_high_low(w)
        tape = ad.Tape()
        node = tape.param(w, "w")
        loss = selfcure.rr_loss(node, split, delta)
        value = float(loss.value[0, 0])
        gap = split.alpha_high - split.alpha_low
        if value > delta + 1e-15 or value < 0:
            bad.append((i, "range"))
        if gap >= delta:
            n_zero += 1
            if value != 0.0:
                bad.append((i, "nonzero above margin"))
        elif value > 0:
            n_active += 1
            g = tape.backward(loss)["w"].ravel()
            if not (np.all(g[split.high_indices] < 0) and np.all(g[split.low_indices] > 0)):
                bad.append((i, "gradient sign"))
        tied = selfcure.split_high_low(np.full((b, 1), w[0, 0]))
        if abs(selfcure.rr_loss_value(tied, delta) - delta) > 1e-15:
            bad.append((i, "tie"))
    report(5, not bad and n_active > 100 and n_zero > 100,
           f"1000 vectors ({n_active} active, {n_zero} beyond margin), violations={bad[:3]}")


def test_6_ablation_trend():
    t0 = time.perf_counter()
    base = TrainConfig()
    clean = run_ablation(base, seeds=(1, 2, 3), modes=("baseline", "mt"))
    noisy_cfg = copy.deepcopy(base)
    noisy_cfg.expr_label_noise = 0.1
    noisy = run_ablation(noisy_cfg, seeds=(1, 2, 3), modes=("mt", "mt-sc"))
    secs = time.perf_counter() - t0

    def by(rows, seed, mode):
        return next(r for r in rows if r["seed"] == seed and r["mode"] == mode)

    va_wins = sum(by(clean, s, "mt")["m_va"] > by(clean, s, "baseline")["m_va"] for s in (1, 2, 3))
    au_wins = sum(by(clean, s, "mt")["m_au"] > by(clean, s, "baseline")["m_au"] for s in (1, 2, 3))
    sc_wins = sum(by(noisy, s, "mt-sc")["m_expr"] >= by(noisy, s, "mt")["m_expr"] for s in (1, 2, 3))
    for rows in (clean, noisy):
        for r in rows:
            print(f"    seed={r['seed']} noise={r['expr_label_noise']} {r['mode']:<8} "
                  f"M_Expr={r['m_expr']:.4f} M_VA={r['m_va']:.4f} M_AU={r['m_au']:.4f}")
    report(6, va_wins >= 2 and au_wins >= 2 and sc_wins >= 2 and secs < 900,
           f"mt>baseline M_VA {va_wins}/3, M_AU {au_wins}/3; mt-sc>=mt M_Expr {sc_wins}/3 "
           f"(10% noise); {secs:.0f}s")


def test_7_supervised_reduction():
    cfg = TrainConfig(noise=NoiseConfig(magnitude=0.0)).with_seed(4)
    cfg.data.missing.fully_labeled_fraction = 1.0
    cfg.epochs = 5
    samples = D.build_dataset(cfg.data)
    tr, va = prepare_data(cfg, samples)
    cfg.mode = "mt"
    mt = train(copy.deepcopy(cfg), tr, va)
    cfg.mode = "baseline"
    bl = train(copy.deepcopy(cfg), tr, va)
    gaps = {k: abs(getattr(mt.final, k) - getattr(bl.final, k)) for k in ("m_expr", "m_va", "m_au")}
    report(7, mt.supervised_flags_only and all(g <= 0.02 for g in gaps.values()),
           f"all supervised={mt.supervised_flags_only}, score gaps "
           + ", ".join(f"{k}={v:.4f}" for k, v in gaps.items()))


def test_8_determinism_and_io(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    cfg_path.write_text("epochs: 3\nseed: 11\ndata:\n  n_groups: 40\n  group_size: 10\n")
    for run in ("a", "b"):
        assert cli_main(["train", "--config", str(cfg_path), "--out", str(tmp_path / run)]) == 0
    same_csv = filecmp.cmp(tmp_path / "a" / "metrics.csv", tmp_path / "b" / "metrics.csv", shallow=False)

    samples = D.build_dataset(D.DataGenConfig(n_groups=30, group_size=10, seed=8))
    path = tmp_path / "d.jsonl"
    D.write_jsonl(samples, path)
    round_trip = D.read_jsonl(path) == samples

    lines = path.read_text().splitlines()
    lines[6] = lines[6].replace('"features"', '"feats"')
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    try:
        D.read_jsonl(bad)
        rejected = False
    except D.DataFormatError as exc:
        rejected = "line 7" in str(exc)
    report(8, same_csv and round_trip and rejected,
           f"identical CSVs={same_csv}, JSONL round trip={round_trip}, malformed line 7 rejected={rejected}")


def test_9_overfit_sanity():
    samples = D.generate_dataset(D.DataGenConfig(n_groups=4, group_size=8, seed=9))
    x, lab = D.to_arrays(samples)
    assert x.shape[0] == 32 and lab.has_expr.all() and lab.has_au.all() and lab.has_va.all()
    tr = Trainer(TrainConfig(seed=9).with_seed(9))
    first = tr.train_step(x, lab).total
    for _ in range(199):
        last = tr.train_step(x, lab).total
    ratio = last / first
    report(9, math.isfinite(ratio) and ratio < 0.5, f"total loss {first:.4f} -> {last:.4f} (ratio {ratio:.3f})")


if __name__ == "__main__":
    raise SystemExit(pytest.main(["-s", __file__]))
