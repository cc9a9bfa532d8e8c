"""Smoke test for the posereg_py extension module.

Build and install first:
    pip install -e crates/posereg-py --no-build-isolation
Then:
    python python/smoke_test.py
"""

import math
import tempfile

import posereg_py as pr


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol, f"{a} != {b} (tol {tol})"


def main():
    # quaternion geometry
    ident = [1.0, 0.0, 0.0, 0.0]
    half_turn = [0.0, 0.0, 0.0, 1.0]
    approx(pr.quat_angular_error_deg(ident, ident), 0.0, 1e-4)
    approx(pr.quat_angular_error_deg(ident, half_turn), 180.0, 1e-6)
    # sign invariance
    approx(
        pr.quat_angular_error_deg(ident, half_turn),
        pr.quat_angular_error_deg(ident, [-q for q in half_turn]),
        1e-9,
    )
    w, x, y, z = pr.quat_canonicalize([-2.0, 0.0, 2.0, 0.0])
    approx(w, math.sqrt(0.5))
    approx(y, -math.sqrt(0.5))
    approx(pr.position_error_m([0.0, 0.0, 0.0], [3.0, 4.0, 0.0]), 5.0)

    # scene generation and rendering are deterministic in the seed
    scene = pr.Scene.generate(seed=3, extent=[6.0, 6.0, 2.0], resolution=(32, 32), focal_px=30.0)
    assert scene.resolution == (32, 32)
    assert scene.landmark_count > 0
    train_poses = scene.sample_trajectory(1.0, 24, 5)
    test_poses = scene.sample_trajectory(1.0, 6, 9)
    assert len(train_poses) == 24
    w, h, pixels = scene.render(train_poses[0])
    assert (w, h) == (32, 32) and len(pixels) == 3 * 32 * 32
    assert all(0.0 <= v <= 1.0 for v in pixels)
    again = scene.render(train_poses[0])[2]
    assert pixels == again

    mean_pose = pr.average_poses(train_poses)
    assert len(mean_pose.position) == 3

    base = pr.baseline(scene, train_poses, test_poses)
    assert base["median_position_error_m"] > 0.0

    # a short training run moves the loss and produces finite errors
    model = pr.Model.desk(crop_side=32, feature_dim=32, beta=50.0,
                          extent=scene.extent, build_seed=7)
    assert model.parameter_count > 0
    log = model.train(scene, train_poses, test_poses,
                      epochs=3, batch_size=8, lr=1e-3, eval_every=1, seed=1)
    assert len(log) == 3
    assert log[-1][1] < log[0][1], "training loss did not decrease"

    report = model.evaluate(scene, test_poses)
    assert report["frames"] == 6.0
    assert math.isfinite(report["median_position_error_m"])
    dense = model.evaluate(scene, test_poses, mode="dense")
    assert math.isfinite(dense["median_position_error_m"])

    pred = model.predict(scene, test_poses[0])
    assert len(pred.orientation) == 4
    approx(sum(q * q for q in pred.orientation), 1.0, 1e-9)

    # save/load roundtrip preserves predictions exactly
    with tempfile.TemporaryDirectory() as tmp:
        model.save(tmp)
        restored = pr.Model.load(tmp)
        p1 = model.predict(scene, test_poses[0])
        p2 = restored.predict(scene, test_poses[0])
        assert p1.to_vector() == p2.to_vector()

    print("smoke test passed")


if __name__ == "__main__":
    main()
