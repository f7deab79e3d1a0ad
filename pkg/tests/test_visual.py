import numpy as np
import pytest

from leanlivo.camera import CameraModel, Image, PatchOutOfBoundsError, extract_patch_pyramid
from leanlivo.sim import raycast_lidar, render_camera, scenario
from leanlivo.state import StateVector, boxplus, default_covariance
from leanlivo.visual import (attach_visual_points, photometric_residuals, visible_points,
                             visual_iterated_update)
from leanlivo.voxel_map import VoxelMap

CAM = CameraModel()


def test_patch_of_constant_image():
    pyr = extract_patch_pyramid(Image(np.full((192, 256), 0.5)), (100.0, 80.0))
    assert pyr.shape == (3, 8, 8) and np.allclose(pyr, 0.5, atol=1e-12)


def test_patch_reproduces_linear_ramp():
    u = np.arange(256.0)
    img = Image(np.tile(u / 256.0, (192, 1)))
    pix = np.array([101.3, 77.6])
    pyr = extract_patch_pyramid(img, pix)
    r = np.arange(8) - 3.5
    # level-0 samples at pix + offsets; level l averages 2^l pixels, still linear in u
    for l in range(3):
        s = 2.0 ** l
        ul = (pix[0] + 0.5) / s - 0.5 + r
        expect = ((ul + 0.5) * s - 0.5) / 256.0
        assert np.abs(pyr[l] - expect[None, :]).max() < 1e-9


def test_patch_near_border_raises():
    with pytest.raises(PatchOutOfBoundsError):
        extract_patch_pyramid(Image(np.full((192, 256), 0.5)), (1.0, 80.0))


@pytest.fixture(scope="module")
def room():
    """Noiseless room-loop map from 30 scans plus points attached in three frames."""
    scn = scenario("room-loop")

    def pose(t):
        R, p = scn.trajectory.pose(np.array([t]))
        return R[0], p[0]
    vm = VoxelMap()
    for k in range(30):
        R, p = pose(10.0 - 0.1 * k)
        vm.update(raycast_lidar(scn.world, (R, p), scn.lidar, None, index=k).points @ R.T + p)
    vps, frames = [], []
    for t in (9.0, 9.5, 10.0):
        R, p = pose(t)
        img = render_camera(scn.world, (R, p), scn.camera, quantize=False)
        x = StateVector(rotation=R, position=p)
        new = attach_visual_points(vm, img, scn.camera, x, budget=40, spacing=12)
        frames.append((x, img, new))
        vps += new
    R, p = pose(10.1)
    truth = StateVector(rotation=R, position=p)
    img = render_camera(scn.world, (R, p), scn.camera, quantize=False)
    return dict(scn=scn, vmap=vm, vps=vps, frames=frames, truth=truth, image=img, pose=pose)


def test_self_consistency_at_capture_pose(room):
    x, img, new = room["frames"][-1]
    assert new
    for level in range(3):
        obs = photometric_residuals(x, new, img, room["scn"].camera, level)
        assert len(obs) == len(new)
        assert max(np.abs(o.residual).max() for o in obs) < 1e-6
        assert all(o.residual.shape == (64,) and o.jacobian.shape == (64, 6) for o in obs)


def _perturbed_updates(room, n=5):
    cam = room["scn"].camera
    truth, img = room["truth"], room["image"]
    vis = visible_points(truth, room["vps"], img, cam)
    P = default_covariance(rot=1e-4, pos=1e-3)
    rs = np.random.default_rng(0)
    out = []
    for _ in range(n):
        d = np.zeros(18)
        v = rs.normal(size=3)
        d[3:6] = 0.02 * v / np.linalg.norm(v)
        # sigma matches the simulator's default image noise
        out.append((P, visual_iterated_update(boxplus(truth, d), P, vis, img, cam, sigma=0.01)))
    return vis, out


def test_visual_update_recovers_2cm_offset(room):
    vis, runs = _perturbed_updates(room)
    assert len(vis) >= 30
    for P, res in runs:
        assert res.n_points >= 30
        assert np.linalg.norm(res.state.position - room["truth"].position) < 2e-3
        assert np.trace(res.covariance) <= np.trace(P)
        # coarse-to-fine: final level-0 cost below the first level-2 cost
        assert res.cost_final <= res.cost_initial


def test_zero_observations_is_identity(room):
    P = default_covariance()
    res = visual_iterated_update(room["truth"], P, [], room["image"], CAM)
    assert res.state is room["truth"] and np.array_equal(res.covariance, P) and res.n_points == 0


def test_constant_image_attaches_nothing(room):
    x = room["frames"][-1][0]
    flat = Image(np.full((192, 256), 0.5))
    assert attach_visual_points(room["vmap"], flat, room["scn"].camera, x, budget=40) == []


def _floor_scene():
    """Smooth-textured floor under a camera looking straight down from 3 m."""
    from leanlivo.sim import Texture, WorldModel
    from leanlivo.sim.world import horizontal
    world = WorldModel([horizontal(-30, 30, -30, 30, 0.0, Texture("smooth", 0.5, seed=3))])
    cam = CameraModel(R_ci=np.array([[1.0, 0, 0], [0, -1.0, 0], [0, 0, -1.0]]), t_ci=np.zeros(3))
    x = StateVector(rotation=np.eye(3), position=np.array([0.3, -0.2, 3.0]))
    g = np.arange(-5.0, 5.0, 0.05) + 0.025
    a, b = np.meshgrid(g, g)
    vm = VoxelMap()
    vm.update(np.column_stack([a.ravel(), b.ravel(), np.zeros(a.size)]))
    img = render_camera(world, (x.rotation, x.position), cam, quantize=False)
    return vm, img, cam, x


def test_budget_is_filled_exactly():
    vm, img, cam, x = _floor_scene()
    assert len(attach_visual_points(vm, img, cam, x, budget=1000, spacing=12)) > 40
    vm, img, cam, x = _floor_scene()
    got = attach_visual_points(vm, img, cam, x, budget=40, spacing=12)
    assert len(got) == 40 and vm.memory_stats().visual_point_count == 40


def test_candidates_closer_than_spacing_attach_once():
    vm, img, cam, x = _floor_scene()
    R_wc, t_wc = cam.camera_pose(x.rotation, x.position)
    pair = []
    for du in (0.0, 5.0):
        ray = R_wc @ cam.pixel_rays(np.array([120.0 + du, 90.0]))[0]
        pair.append(t_wc + ray * (-t_wc[2] / ray[2]))
    got = attach_visual_points(vm, img, cam, x, budget=40, candidates=np.array(pair))
    assert len(got) == 1


def test_update_is_deterministic(room):
    _, a = _perturbed_updates(room, n=2)
    _, b = _perturbed_updates(room, n=2)
    for (_, ra), (_, rb) in zip(a, b):
        assert np.array_equal(ra.state.position, rb.state.position)
        assert np.array_equal(ra.covariance, rb.covariance)


def test_attachment_is_deterministic():
    runs = []
    for _ in range(2):
        vm, img, cam, x = _floor_scene()
        runs.append(attach_visual_points(vm, img, cam, x, budget=40))
    assert [tuple(v.position) for v in runs[0]] == [tuple(v.position) for v in runs[1]]
    assert all(np.array_equal(a.patch_pyramid, b.patch_pyramid) for a, b in zip(*runs))
