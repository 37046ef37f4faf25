"""End-to-end acceptance criteria, each run at its stated tolerance."""
import struct
import time

import numpy as np
from oracles import natural_spline_dense, textured_image

from framedisp.analysis import displacement_at, dominant_frequency, fft_spectrum
from framedisp.dataset import DatasetConfig, draw_labels, generate_dataset, load_arrays, split
from framedisp.flow import apply_mask, dense_flow, read_flo, write_flo
from framedisp.model import ControlSectionLayout, FrameConfig, cub_spl_itp
from framedisp.nn import Regressor, RegressorSpec, TrainConfig, loss_and_grads, predict, train
from framedisp.pipeline import SequenceSpec, run_sequence
from framedisp.pose import estimate_lsq
from framedisp.render import Camera
from framedisp.scene import Scene


def test_spline_matches_tridiagonal_oracle(report):
    layout = ControlSectionLayout.preset()
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        H = rng.uniform(-0.025, 0.025, layout.n)
        y = rng.random(100)
        worst = max(worst, np.abs(cub_spl_itp(y, layout, H)
                                  - natural_spline_dense(layout.knots, H, y)).max())
    elapsed = time.perf_counter() - start
    assert report(1, worst <= 1e-10 and elapsed < 1.0,
                  f"max |diff| {worst:.2e} (<= 1e-10), {elapsed:.3f} s (< 1 s)")


def test_closed_loop_pose_recovery(report):
    scene = Scene.from_config(FrameConfig(), Camera())
    basis, ref, mask = scene.basis, scene.reference_image, scene.mask
    rng = np.random.default_rng(99)
    start = time.perf_counter()
    errors = []
    for _ in range(50):
        H = rng.uniform(-0.025, 0.025, scene.layout.n)
        K = apply_mask(dense_flow(ref, scene.render(H)), mask)
        errors.append(np.abs(estimate_lsq(K, basis) - H).max())
    elapsed = time.perf_counter() - start
    rate = np.mean(np.array(errors) <= 2e-3)
    assert report(2, rate >= 0.9 and elapsed < 300,
                  f"{rate:.0%} of 50 trials within 2e-3 (>= 90%), worst {max(errors):.2e}, "
                  f"{elapsed:.0f} s (< 300 s)")


def test_flow_solver_sanity(report):
    img = textured_image(96, 128, seed=0)
    start = time.perf_counter()
    still = np.abs(dense_flow(img, img)).max()
    K = dense_flow(img, np.roll(img, 1, axis=1))
    elapsed = time.perf_counter() - start
    inner = K[16:-16, 16:-16]
    median = np.median(np.hypot(inner[..., 0] - 1.0, inner[..., 1]))
    assert report(3, still <= 1e-6 and median <= 0.3 and elapsed < 30,
                  f"identical frames {still:.1e} (<= 1e-6), 1 px shift median error "
                  f"{median:.3f} px (<= 0.3), {elapsed:.1f} s")


def _monotone_after(losses, epoch):
    tail = losses[epoch - 1:]
    return all(b <= a for a, b in zip(tail, tail[1:]))


def test_training_contract(report, tmp_path):
    start = time.perf_counter()
    cfg = DatasetConfig(count=2000, seed=7, resolution=0.25, pad_multiple=16)
    rows = generate_dataset(cfg, tmp_path)
    train_rows, test_rows = split(rows, cfg.test_fraction, cfg.seed)
    K_train, H_train = load_arrays(train_rows, tmp_path)
    K_test, H_test = load_arrays(test_rows, tmp_path)
    scene = cfg.scene()
    spec = RegressorSpec(scene.shape, flow_scale=float(np.abs(K_train).max()),
                         label_scale=cfg.bound)
    result = train((K_train, H_train), TrainConfig(), spec, (K_test, H_test))
    losses = [tr for _, tr, _ in result.history]
    mse_net = float(np.mean((predict(result.model, K_test) - H_test) ** 2))
    lsq = np.array([estimate_lsq(k, scene.basis) for k in K_test])
    mse_lsq = float(np.mean((lsq - H_test) ** 2))
    elapsed = time.perf_counter() - start
    monotone = _monotone_after(losses, 5)
    ok = monotone and mse_net <= 5 * mse_lsq and elapsed < 1800
    assert report(4, ok, f"loss non-increasing after epoch 5: {monotone}, test MSE {mse_net:.3e} "
                  f"vs 5 x lsq {5 * mse_lsq:.3e}, {elapsed:.0f} s (< 1800 s)")


def test_gradient_check(report):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for pooling in ("flatten", "gap"):
        model = Regressor(RegressorSpec((16, 12), channels=(4, 6), pooling=pooling), seed=1)
        x = model.encode(rng.normal(size=(3, 16, 12, 2)))
        target = rng.normal(size=(3, 5))
        _, grads = loss_and_grads(model, x, target, 1e-4)
        for (layer, name), g in zip(model.parameters(), grads):
            arr = getattr(layer, name)
            for _ in range(10):
                idx = tuple(rng.integers(s) for s in arr.shape)
                old = arr[idx]
                arr[idx] = old + 1e-6
                up = loss_and_grads(model, x, target, 1e-4)[0]
                arr[idx] = old - 1e-6
                down = loss_and_grads(model, x, target, 1e-4)[0]
                arr[idx] = old
                fd = (up - down) / 2e-6
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-8))
    elapsed = time.perf_counter() - start
    assert report(5, worst <= 1e-4 and elapsed < 60,
                  f"max relative error {worst:.2e} (<= 1e-4), {elapsed:.1f} s")


def test_spectral_check(report, half_scene):
    fps, seconds, freq = 50.0, 10.0, 2.0
    t = np.arange(int(fps * seconds)) / fps
    H = np.zeros((len(t), half_scene.layout.n))
    H[:, 0] = 0.02 * np.sin(2 * np.pi * freq * t)
    start = time.perf_counter()
    frames = [half_scene.render(h) for h in H]
    est = run_sequence(SequenceSpec(frames, fps=fps), half_scene)
    series = displacement_at(est, half_scene.layout, None, half_scene.layout.knots[0], fps)
    spec = fft_spectrum(series)
    peak = dominant_frequency(spec)
    elapsed = time.perf_counter() - start
    ok = abs(peak - freq) <= spec.bin_width and elapsed < 600
    assert report(6, ok, f"dominant {peak:.4f} Hz vs 2.0 +/- {spec.bin_width:.4f} Hz, "
                  f"{elapsed:.0f} s (< 600 s)")


def test_dataset_statistics(report, tmp_path):
    cfg = DatasetConfig(count=5000, seed=3)
    labels = draw_labels(cfg, 5)
    se = labels.std(axis=0, ddof=1) / np.sqrt(len(labels))
    z = np.abs(labels.mean(axis=0)) / se
    inside = np.abs(labels).max() <= cfg.bound
    same_labels = draw_labels(cfg, 5).tobytes() == labels.tobytes()
    small = DatasetConfig(count=3, seed=3, resolution=0.25, pad_multiple=16)
    generate_dataset(small, tmp_path / "a")
    generate_dataset(small, tmp_path / "b")
    names = ["manifest.csv"] + [f"flows/{i:06d}.flo" for i in range(3)]
    same_files = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
                     for n in names)
    ok = bool(np.all(z <= 3)) and inside and same_labels and same_files
    assert report(7, ok, f"max |mean|/SE {z.max():.2f} (<= 3), support within bound: {inside}, "
                  f"byte-identical regeneration: {same_labels and same_files}")


def test_flo_format_fidelity(report, tmp_path):
    rng = np.random.default_rng(8)
    f = rng.normal(scale=5.0, size=(7, 9, 2)).astype(np.float32)
    f[0, 0] = [np.float32(1e-38), np.float32(-3.4e38)]
    write_flo(tmp_path / "k.flo", f)
    raw = (tmp_path / "k.flo").read_bytes()
    exact = read_flo(tmp_path / "k.flo").tobytes() == f.tobytes()
    w, h = struct.unpack("<ii", raw[4:12])
    manual = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w, 2)
    layout = raw[:4] == b"PIEH" and (w, h) == (9, 7) and len(raw) == 12 + 8 * w * h
    ok = exact and layout and manual.tobytes() == f.tobytes()
    assert report(8, ok, f"bit-exact round trip: {exact}, manual PIEH layout parse: "
                  f"{layout and manual.tobytes() == f.tobytes()}")

