"""Acceptance suite: one PASS/FAIL line per criterion (see the terminal summary)."""

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from legassist.cli import main
from legassist.control import ControllerConfig
from legassist.errors import FormatError
from legassist.evaluation import display_percent, run_protocol
from legassist.gait import estimate_gait, track_legs
from legassist.geometry import FrameId, Point3, RigidTransform, transform_point
from legassist.loop import initial_state, run_follow, simulate_walk
from legassist.nn import UNet, UNetConfig, ops, unet_forward
from legassist.nn.serialize import model_from_bytes, model_to_bytes
from legassist.nn.loss import weighted_bce, weighted_bce_with_logits
from legassist.pipeline import baseline_segment, model_segmenter, perceive
from legassist.raster import (GridSpec, LaserScan, deproject_cell, metric_to_pixel, rasterize,
                             rasterize_points, read_grid, read_scans)
from legassist.sim import DEFAULT_LASER_POSE, gen_protocol_trials, gen_training_set

from gradcheck import numeric_grad, rel_error

PROTOCOL_SEEDS = (0, 1, 2)


def test_1_metric_reproduction(criterion):
    t0 = time.perf_counter()
    got = [display_percent(14, 18), display_percent(17, 18), display_percent(7, 18), display_percent(1, 18)]
    dt = time.perf_counter() - t0
    criterion(got == ["77.7", "94.4", "38.8", "5.5"] and dt < 1.0, f"{got} in {dt:.3f} s")


def test_2_rasterizer_hand_traces(criterion):
    t0 = time.perf_counter()

    def cells(angle, d):
        grid = rasterize(LaserScan(0.0, angle, 0.0, 20.0, np.array([d])))
        return {tuple(int(v) for v in p) for p in np.argwhere(grid.pixels == 255)}

    traces = [cells(0.0, 0.5) == {(178, 128)}, cells(math.pi / 2, 0.3) == {(128, 158)},
              cells(0.0, 5.0) == set()]
    rng = np.random.default_rng(2024)
    pts = rng.uniform(-1.27, 1.27, size=(10_000, 2))
    px, py = metric_to_pixel(pts[:, 0], pts[:, 1])
    marked = {tuple(int(v) for v in c) for c in np.argwhere(rasterize_points(pts) == 255)}
    same_cells = marked == set(zip(px.tolist(), py.tolist()))
    worst = 0.0
    for (x, y), i, j in zip(pts, px, py):
        p = deproject_cell(i, j)
        worst = max(worst, math.hypot(p.x - x, p.y - y))
    dt = time.perf_counter() - t0
    criterion(all(traces) and same_cells and worst <= 0.01 and dt < 5.0,
              f"traces {traces}, worst round-trip {worst * 1000:.2f} mm, {dt:.2f} s")


def _shape(rng, even=False):
    n = int(rng.integers(1, 3))
    h, w = ((2 * int(v) for v in rng.integers(1, 4, size=2)) if even
            else (int(v) for v in rng.integers(3, 7, size=2)))
    return n, h, w, int(rng.integers(1, 4))


def _gradcheck_errors(seed: int) -> dict[str, float]:
    rng = np.random.default_rng(1000 + seed)
    err = {}

    def check(name, analytic, f, x):
        err[name] = max(err.get(name, 0.0), rel_error(analytic, numeric_grad(f, x)))

    x = rng.normal(size=_shape(rng))
    k = int(rng.choice([1, 3, 5]))
    w = rng.normal(size=(k, k, x.shape[3], int(rng.integers(1, 4))))
    b = rng.normal(size=w.shape[3])
    y, cache = ops.conv2d_forward(x, w, b)
    r = rng.normal(size=y.shape)
    dx, dw, db = ops.conv2d_backward(r, cache)
    conv = lambda: float(np.sum(ops.conv2d_forward(x, w, b)[0] * r))  # noqa: E731
    check("conv2d", dx, conv, x)
    check("conv2d", dw, conv, w)
    check("conv2d", db, conv, b)

    for name, fwd, bwd, even in [("relu", ops.relu_forward, ops.relu_backward, False),
                                 ("sigmoid", ops.sigmoid_forward, ops.sigmoid_backward, False),
                                 ("maxpool2", ops.maxpool2_forward, ops.maxpool2_backward, True),
                                 ("upsample2", ops.upsample2_forward, ops.upsample2_backward, False)]:
        x = rng.normal(size=_shape(rng, even))
        x[np.abs(x) < 1e-3] = 0.5  # off the ReLU kink
        y, cache = fwd(x)
        r = rng.normal(size=y.shape)
        check(name, bwd(r, cache), lambda: float(np.sum(fwd(x)[0] * r)), x)

    a = rng.normal(size=_shape(rng))
    c = rng.normal(size=a.shape[:3] + (2,))
    y, split = ops.concat_forward(a, c)
    r = rng.normal(size=y.shape)
    da, dc = ops.concat_backward(r, split)
    check("concat", da, lambda: float(np.sum(ops.concat_forward(a, c)[0] * r)), a)
    check("concat", dc, lambda: float(np.sum(ops.concat_forward(a, c)[0] * r)), c)

    p = rng.uniform(0.05, 0.95, size=_shape(rng))
    t = (rng.random(p.shape) < 0.3).astype(float)
    check("weighted_bce", weighted_bce(p, t, 37.2)[1], lambda: weighted_bce(p, t, 37.2)[0], p)
    z = rng.normal(scale=2, size=p.shape)
    check("weighted_bce_logits", weighted_bce_with_logits(z, t, 37.2)[1],
          lambda: weighted_bce_with_logits(z, t, 37.2)[0], z)
    return err


def test_3_gradient_correctness(criterion):
    t0 = time.perf_counter()
    worst: dict[str, float] = {}
    for seed in range(20):
        for name, e in _gradcheck_errors(seed).items():
            worst[name] = max(worst.get(name, 0.0), e)
    rng = np.random.default_rng(7)
    model = UNet(UNetConfig(input_size=8, channels=(2, 3)), seed=7, dtype=np.float64)
    for k in model.params:
        if k.endswith(".b"):
            model.params[k] = rng.normal(0.1, 0.1, size=model.params[k].shape)
    x, r = rng.normal(size=(2, 8, 8, 1)), rng.normal(size=(2, 8, 8, 1))
    model.forward(x, keep_tape=True)
    grads = model.backward(r)
    f = lambda: float(np.sum(model.forward(x) * r))  # noqa: E731
    worst["unet"] = max(rel_error(grads[k], numeric_grad(f, model.params[k])) for k in model.params)
    dt = time.perf_counter() - t0
    ok = all(e < 1e-5 for e in worst.values()) and dt < 60
    criterion(ok, f"max rel error {max(worst.values()):.1e} over 20 seeds x {len(worst)} ops, {dt:.1f} s")


@pytest.mark.slow
def test_4_protocol_table(criterion, trained_model):
    segment = model_segmenter(trained_model.model)
    rows, ok = [], trained_model.seconds < 15 * 60
    for seed in PROTOCOL_SEEDS:
        trials = gen_protocol_trials(seed)
        m = run_protocol(segment, trials, name="unet", seed=seed)
        b = run_protocol(baseline_segment, trials, name="baseline", seed=seed)
        m2, b2 = m.scenario_summary(2), b.scenario_summary(2)
        # Pareto dominance in the cluttered scenario: no worse on either count, better on one
        dominates = (m2.n_s >= b2.n_s and m2.n_f <= b2.n_f) and (m2.n_s > b2.n_s or m2.n_f < b2.n_f)
        ok &= m.summary.n_s >= 16 and m.summary.n_f <= 2 and dominates
        rows.append(f"seed {seed}: det {m.summary.n_s}/18 fp {m.summary.n_f}/18 "
                    f"(scenario 2: {m2.n_s}/{m2.n_f} vs baseline {b2.n_s}/{b2.n_f})")
    how = "cached" if trained_model.cached else "trained"
    criterion(ok, "; ".join(rows) + f"; training {trained_model.seconds / 60:.1f} min ({how})")


def _walk_gait(speed, stride, segment, duration=14.0, seed=0):
    scans, odom, _ = simulate_walk(speed, stride, duration, seed)
    observations = []
    for scan, pose in zip(scans, odom):
        obs = perceive(scan, segment, DEFAULT_LASER_POSE).robot
        if obs.valid:
            m = RigidTransform.planar(*pose, FrameId.ROBOT_BASE, FrameId.ROBOT_BASE)
            obs = replace(obs, left=transform_point(Point3(*obs.left), m),
                          right=transform_point(Point3(*obs.right), m))
        observations.append(obs)
    return estimate_gait(track_legs(observations))


@pytest.mark.slow
def test_5_gait_oracle(criterion, trained_model):
    t0 = time.perf_counter()
    segment = model_segmenter(trained_model.model)
    rows, ok = [], True
    for speed, stride in [(0.3, 0.6), (0.5, 1.0), (0.8, 1.2)]:
        rep = _walk_gait(speed, stride, segment)
        e_len = abs(rep.stride_length - stride) / stride
        e_vel = abs(rep.stride_velocity - speed) / speed
        ok &= e_len <= 0.10 and e_vel <= 0.10
        rows.append(f"({speed}, {stride}): length {rep.stride_length:.3f} ({e_len:.1%}), "
                    f"velocity {rep.stride_velocity:.3f} ({e_vel:.1%})")
    dt = time.perf_counter() - t0
    criterion(ok and dt < 120, "; ".join(rows) + f"; {dt:.1f} s")


def test_6_closed_loop_follow(criterion):
    t0 = time.perf_counter()
    cfg = ControllerConfig()
    log = run_follow(initial_state(0.5, 1.0, cfg.standoff, seed=0), baseline_segment, 30.0, cfg=cfg)
    dt = time.perf_counter() - t0
    t, d = np.array(log.times), np.array(log.distances)
    late = d[t >= 5.0]
    saturated = all(c.satisfies(cfg) and (c.speed == 0 or c.speed >= cfg.deadband) for c in log.commands)
    ok = bool(np.all(np.abs(late - cfg.standoff) <= 0.15)) and saturated and dt < 30
    criterion(ok, f"distance after 5 s in [{late.min():.3f}, {late.max():.3f}] m "
                  f"(standoff {cfg.standoff}), saturation {saturated}, {dt:.1f} s")


def test_7_cli_determinism(criterion, tmp_path):
    from legassist.nn import save_model
    from legassist.raster import write_pgm

    model = tmp_path / "model.bin"
    save_model(model, UNet(seed=3))
    write_pgm(tmp_path / "grid.pgm", gen_training_set(1, 5)[0][0].pixels)
    (tmp_path / "cfg.json").write_text(json.dumps(
        {"input_size": 64, "channels": [4, 8], "epochs": 1, "batch_size": 2, "crop_size": 32}))

    def commands(d, sim):
        return [
            ["simulate", "--seed", "4", "--out-dir", str(d / "proto")],
            ["simulate", "--kind", "training", "--n", "3", "--seed", "4", "--out-dir", str(d / "train")],
            ["simulate", "--kind", "walk", "--seed", "4", "--duration", "8", "--out-dir", str(d / "walk")],
            ["rasterize", "--in", str(sim / "proto" / "scans.jsonl"), "--out-dir", str(d / "grids")],
            ["train", "--synthetic", "4", "--config", str(tmp_path / "cfg.json"), "--seed", "4",
             "--out", str(d / "tiny.bin")],
            ["segment", "--model", str(model), "--in", str(tmp_path / "grid.pgm"), "--out", str(d / "mask.pgm")],
            ["gait", "--scans", str(sim / "walk" / "scans.jsonl"), "--transforms",
             str(sim / "walk" / "frames.json"), "--out", str(d / "gait.json")],
            ["follow", "--seed", "4", "--duration", "5", "--out", str(d / "follow.jsonl")],
            ["eval", "--seed", "4", "--model", str(model), "--out", str(d / "eval.json")],
        ]

    outputs, codes = [], []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        codes += [main(argv) for argv in commands(d, tmp_path / "a")]
        outputs.append({p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    same = outputs[0] == outputs[1]
    criterion(same and all(c == 0 for c in codes),
              f"{len(outputs[0])} files from 9 subcommands, identical {same}, exit codes {set(codes)}")


def test_8_format_robustness(criterion, tmp_path):
    cases = {}
    good_pgm = b"P5\n64 64\n255\n" + bytes(64 * 64)
    for name, data in {"pgm_truncated": good_pgm[:-3], "pgm_magic": b"P2" + good_pgm[2:],
                       "pgm_value": good_pgm[:-1] + b"\x07"}.items():
        path = tmp_path / f"{name}.pgm"
        path.write_bytes(data)
        try:
            read_grid(path, GridSpec(64))
            cases[name] = None
        except FormatError as exc:
            cases[name] = exc.location
    blob = model_to_bytes(UNet(UNetConfig(input_size=32, channels=(4, 8))))
    for name, data in {"model_truncated": blob[:-5], "model_magic": b"X" + blob[1:],
                       "model_trailing": blob + b"\0"}.items():
        try:
            model_from_bytes(data, 32)
            cases[name] = None
        except FormatError as exc:
            cases[name] = exc.location
    scans = tmp_path / "scans.jsonl"
    line = json.dumps(LaserScan(0.0, 0.0, 0.1, 5.0, np.ones(3)).to_json())
    scans.write_text(f"{line}\n{line}\n{line[:20]}\n")
    try:
        read_scans(scans)
        cases["jsonl_line"] = None
    except FormatError as exc:
        cases["jsonl_line"] = exc.location
    ok = all(v is not None for v in cases.values()) and cases["jsonl_line"] == 3
    criterion(ok, ", ".join(f"{k}@{v}" for k, v in cases.items()))


@pytest.mark.slow
def test_training_post_conditions(criterion, trained_model):
    hist = np.array(trained_model.loss_history)
    windows = hist[: len(hist) // 10 * 10].reshape(-1, 10).mean(axis=1)
    val = trained_model.val_history
    ratio = val[0] / val[-1]
    # held-out grid with a person in view: mask IoU against the truth
    ious = []
    for grid, mask in gen_training_set(20, 20_000):
        if not mask.any():
            continue
        pred = unet_forward(grid, trained_model.model).binary()
        truth = mask > 0
        ious.append((pred & truth).sum() / (pred | truth).sum())
    iou = float(np.mean(ious))
    monotone = bool(np.all(np.diff(windows) <= 0))
    criterion(ratio >= 5 and iou >= 0.5 and monotone,
              f"validation loss {val[0]:.4f} -> {val[-1]:.4f} ({ratio:.0f}x), "
              f"10-step windows monotone {monotone}, mean IoU {iou:.2f} over {len(ious)} grids")

