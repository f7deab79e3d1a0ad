import numpy as np
import pytest

from leanlivo import so3
from leanlivo.camera import CameraModel, Image
from leanlivo.degeneracy import constraint_spectrum
from leanlivo.lidar import undistort
from leanlivo.sim import (LidarPattern, ParametricPath, SensorNoiseSpec, SpeedRamp, Texture,
                          TrajectorySpec, WorldModel, generate_imu, raycast_lidar, render_camera,
                          scenario, simulate)
from leanlivo.sim.world import horizontal, wall
from leanlivo.state import GRAVITY, StateVector

from conftest import simulated


def test_raycast_examples():
    floor = WorldModel([horizontal(-10, 10, -10, 10, 0.0)])
    r, idx = floor.raycast(np.array([0, 0, 1.0]), np.array([[0, 0, -1.0]]))
    assert idx[0] == 0 and r[0] == pytest.approx(1.0, abs=1e-12)
    r, idx = floor.raycast(np.array([0, 0, 1.0]), np.array([[1.0, 0, 0]]))
    assert idx[0] == -1 and np.isinf(r[0])


def test_constant_texture_renders_constant_image():
    world = WorldModel([wall((5, 50), (5, -50), -50, 50, Texture("constant", value=0.37))])
    arr = render_camera(world, (np.eye(3), np.zeros(3)), CameraModel(), quantize=False).intensities
    assert np.all(arr == 0.37)


def test_checker_edges_match_projection():
    cam = CameraModel(t_ci=np.zeros(3))
    # wall x = 5 facing the camera; in-plane u runs along -y, v along +z
    world = WorldModel([wall((5, 20), (5, -20), -20, 20, Texture("checker", wavelength=1.0))])
    img = render_camera(world, (np.eye(3), np.zeros(3)), cam, quantize=False).intensities
    # an edge at world y = y0 projects to column u = cx - fx * y0 / 5 (optical x = -body y)
    row = img[40]
    cols = np.flatnonzero(np.diff(row) != 0) + 0.5
    y_edges = -np.arange(-20, 21, 1.0)[::-1]
    expect = cam.cx - cam.fx * y_edges / 5.0
    expect = expect[(expect > 0) & (expect < cam.width - 1)]
    assert len(cols) == len(expect)
    assert np.abs(np.sort(cols) - np.sort(expect)).max() < 0.5


def test_roll_about_optical_axis_rotates_image():
    cam = CameraModel(t_ci=np.zeros(3))
    world = WorldModel([wall((5, 40), (5, -40), -40, 40, Texture("smooth", wavelength=2.0, seed=5))])
    img1 = Image(render_camera(world, (np.eye(3), np.zeros(3)), cam, quantize=False).intensities)
    a = np.deg2rad(20.0)
    # roll about body x, which is the optical axis of the default camera
    R2 = so3.exp(np.array([a, 0, 0]))
    img2 = render_camera(world, (R2, np.zeros(3)), cam, quantize=False).intensities
    rng = np.random.default_rng(0)
    uv = np.column_stack([rng.uniform(70, 186, 200), rng.uniform(50, 142, 200)]).round()
    # X_c1 = R_ci R2 R_ci^T X_c2; map each pixel of image 2 into image 1
    M = cam.R_ci @ R2 @ cam.R_ci.T
    rays2 = cam.pixel_rays(uv)
    rays1 = rays2 @ M.T
    uv1 = cam.project(rays1)
    v2 = img2[uv[:, 1].astype(int), uv[:, 0].astype(int)]
    assert np.abs(img1.sample(uv1) - v2).max() < 2e-3
    # the principal point is fixed by the roll
    pp = cam.project(cam.pixel_rays(np.array([[cam.cx, cam.cy]])) @ M.T)[0]
    assert np.allclose(pp, [cam.cx, cam.cy], atol=1e-9)


def test_imu_stationary():
    scn = scenario("floor")
    imu = generate_imu(scn.trajectory, SensorNoiseSpec.noiseless())
    R, _ = scn.trajectory.pose(imu.t)
    assert np.abs(imu.gyro).max() < 1e-12
    assert np.abs(imu.accel - np.einsum("nji,j->ni", R, -GRAVITY)).max() < 1e-12


def test_imu_circular_motion():
    r, v = 5.0, 2.0
    spec = TrajectorySpec("circle", duration=6.0, path=ParametricPath("ellipse", a=r, b=r),
                          ramp=SpeedRamp(v / r, 1.0))
    imu = generate_imu(spec, SensorNoiseSpec.noiseless())
    late = imu.t > 1.5
    R, _ = spec.pose(imu.t[late])
    a_world = np.einsum("nij,nj->ni", R, imu.accel[late]) + GRAVITY
    omega = v / r
    assert np.allclose(np.linalg.norm(a_world, axis=1), r * omega ** 2, rtol=1e-9)
    assert np.allclose(imu.gyro[late], [0, 0, omega], atol=1e-9)


def test_streams_are_seed_deterministic():
    scn = scenario("floor")
    a = simulate(scn, SensorNoiseSpec(seed=9), duration=0.5)
    b = simulate(scn, SensorNoiseSpec(seed=9), duration=0.5)
    c = simulate(scn, SensorNoiseSpec(seed=10), duration=0.5)
    assert np.array_equal(a.imu.accel, b.imu.accel) and np.array_equal(a.imu.gyro, b.imu.gyro)
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a.scans, b.scans))
    assert all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a.frames, b.frames))
    assert not np.array_equal(a.imu.accel, c.imu.accel)


def test_room_loop_fixture():
    scn = scenario("room-loop")
    assert len(scn.world.planes) == 6
    p0 = scn.trajectory.pose(np.array([0.0]))[1][0]
    pend = scn.trajectory.pose(np.array([scn.trajectory.duration]))[1][0]
    assert np.linalg.norm(p0[:2] - pend[:2]) < 5.0


def test_revisit_loop_reenters_start():
    tr = scenario("revisit-loop").trajectory
    t = np.arange(0.0, tr.duration, 0.05)
    _, p = tr.pose(t)
    dist = tr.distance_travelled(t)
    first = p[dist <= 20.0, :2]
    later = p[dist > 250.0, :2]
    gap = np.min(np.linalg.norm(later[:, None] - first[None], axis=2), axis=1)
    assert np.any(gap < 0.5)


def _hit_normals(world, R, p, pattern):
    dirs = pattern.directions_at(0) @ R.T
    _, idx = world.raycast(p, dirs, 50.0)
    return np.array([world.planes[k].normal for k in idx[idx >= 0]])


def test_corridor_scan_is_degenerate():
    scn = scenario("corridor")
    R, p = scn.trajectory.pose(np.array([15.0]))
    assert 15.0 < p[0, 0] < 30.0   # mid-corridor, far end out of range
    assert constraint_spectrum(_hit_normals(scn.world, R[0], p[0], scn.lidar)).sigma_min < 0.07
    R, p = scenario("room-loop").trajectory.pose(np.array([15.0]))
    room = scenario("room-loop")
    assert constraint_spectrum(_hit_normals(room.world, R[0], p[0], room.lidar)).sigma_min > 0.07


def test_ground_truth_scan_consistency():
    scn = scenario("room-loop")
    tr = scn.trajectory
    t0, t1 = tr.scan_windows()[40]
    scan = raycast_lidar(scn.world, tr.pose, scn.lidar, SensorNoiseSpec.noiseless(), t0, t1)
    R, p = tr.pose(scan.times)
    world = np.einsum("nij,nj->ni", R, scan.points) + p
    d = np.min(np.abs(np.stack([pl.distance(world) for pl in scn.world.planes])), axis=0)
    assert d.max() < 1e-9
    # IMU-based undistortion from the true start state lands within a millimetre
    k = tr.kinematics(np.array([t0]))
    imu = generate_imu(tr, SensorNoiseSpec.noiseless())
    x0 = StateVector(rotation=k.rotation[0], position=k.position[0], velocity=k.velocity[0])
    out = undistort(scan, (imu.t, imu.gyro, imu.accel), x0)
    Re, pe = tr.pose(np.array([t1]))
    world_u = out @ Re[0].T + pe[0]
    d = np.min(np.abs(np.stack([pl.distance(world_u) for pl in scn.world.planes])), axis=0)
    assert d.max() < 1e-3


def test_simulated_cache_shapes():
    s = simulated("floor", noise="none")
    assert len(s.scans) == 20 and len(s.frames) == 20 and len(s.imu) == 401
