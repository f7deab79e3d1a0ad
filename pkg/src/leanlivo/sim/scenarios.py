"""Named, versioned simulator fixtures."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from ..camera import CameraModel
from ..dataset import CameraFrame, SensorStreams
from ..metrics import PoseTrajectory
from ..selector import INDOOR, OUTDOOR, SelectorThresholds
from .sensors import (LidarPattern, SensorNoiseSpec, generate_imu, raycast_lidar, render_array)
from .trajectory import ParametricPath, SegmentPath, SpeedRamp, TrajectorySpec
from .world import Texture, WorldModel, box, horizontal, wall

SCENARIO_VERSION = 1


@dataclass
class Scenario:
    name: str
    world: WorldModel
    trajectory: TrajectorySpec
    lidar: LidarPattern
    camera: CameraModel = field(default_factory=CameraModel)
    thresholds: SelectorThresholds = INDOOR
    description: str = ""
    config: Dict[str, object] = field(default_factory=dict)
    version: int = SCENARIO_VERSION

    def __iter__(self):
        # allows ``world, traj = scenario(name)``
        yield self.world
        yield self.trajectory


def _tex_factory(base_seed, wavelength):
    counter = [0]

    def make(i=0):
        counter[0] += 1
        return Texture("smooth", wavelength=wavelength, seed=base_seed * 1000 + counter[0])
    return make


def _room_loop():
    tex = _tex_factory(11, 0.8)
    X, Y, H = 23.0, 17.0, 6.0
    planes = [wall((-X, -Y), (X, -Y), 0, H, tex()), wall((X, -Y), (X, Y), 0, H, tex()),
              wall((X, Y), (-X, Y), 0, H, tex()), wall((-X, Y), (-X, -Y), 0, H, tex()),
              horizontal(-X, X, -Y, Y, 0.0, tex(), up=True),
              horizontal(-X, X, -Y, Y, H, tex(), up=False)]
    world = WorldModel(planes)
    # start off-axis so that both wall pairs are ~9 m away from the first scan
    path = ParametricPath("ellipse", a=19.0, b=12.5, phase=np.pi / 4)
    rate = 2 * np.pi / 50.0
    traj = TrajectorySpec("room-loop", duration=51.5, path=path, ramp=SpeedRamp(rate, 3.0),
                          height=1.2, bob=0.05, bob_freq=0.4, pitch_amp=np.deg2rad(2.0),
                          roll_amp=np.deg2rad(1.5), wobble_freq=0.25)
    return Scenario("room-loop", world, traj, LidarPattern.spinning(),
                    description="closed 46 x 34 x 6 m room (4 walls, floor, ceiling), "
                                "100 m elliptic loop")


def _corridor():
    tex = _tex_factory(23, 0.6)
    x0, x1, w, H = -2.0, 150.0, 1.5, 3.0
    planes = [wall((x0, w), (x0, -w), 0, H, tex())]
    planes += [wall((x0, -w), (x1, -w), 0, H, tex()), wall((x1, w), (x0, w), 0, H, tex()),
               wall((x1, -w), (x1, w), 0, H, tex()),
               horizontal(x0, x1, -w, w, 0.0, tex(), up=True),
               horizontal(x0, x1, -w, w, H, tex(), up=False)]
    world = WorldModel(planes)
    path = SegmentPath([("straight", 140.0)], start=(0.0, 0.0), heading=0.0)
    traj = TrajectorySpec("corridor-walk", duration=30.0, path=path, ramp=SpeedRamp(1.5, 2.0),
                          height=1.2, bob=0.03, bob_freq=0.5, pitch_amp=np.deg2rad(1.0),
                          roll_amp=np.deg2rad(1.0))
    return Scenario("corridor", world, traj, LidarPattern.spinning(),
                    description="3 m wide, 3 m high straight corridor with a dead-end wall "
                                "behind the start; geometry is degenerate along the corridor")


def _wall_facing():
    tex = _tex_factory(31, 0.5)
    planes = [wall((4.0, 30.0), (4.0, -30.0), 0, 8.0, tex()),
              horizontal(-10.0, 4.0, -30.0, 30.0, 0.0, tex(), up=True)]
    world = WorldModel(planes)
    path = SegmentPath([("straight", 20.0)], start=(0.0, -8.0), heading=np.pi / 2)
    traj = TrajectorySpec("line", duration=20.0, path=path, ramp=SpeedRamp(0.6, 2.0),
                          height=1.0, yaw_offset=-np.pi / 2)
    return Scenario("wall-facing", world, traj, LidarPattern.narrow(70.0),
                    description="narrow-FoV LiDAR facing a single wall while sliding along it")


def _ring(name, L, r, w, H, speed, revisit, tex_seed, wavelength, description, thresholds,
          camera_yaw=70.0):
    quarter = [("turn", np.pi / 2, r), ("straight", L)]
    segs = [("straight", L / 2)] + quarter * 3 + [("turn", np.pi / 2, r), ("straight", L / 2 + revisit)]
    path = SegmentPath(segs, start=(0.0, 0.0), heading=0.0)
    turn_len = path._table[1][2]
    d = path.evaluate(np.array([L / 2 + turn_len]))[0][0, 0] - L / 2   # turn displacement
    h = L / 2 + d
    cy = h
    tex = _tex_factory(tex_seed, wavelength)
    planes = []
    for s in (h - w, h + w):
        corners = [(-s, cy - s), (s, cy - s), (s, cy + s), (-s, cy + s)]
        for i in range(4):
            planes.append(wall(corners[i], corners[(i + 1) % 4], 0, H, tex()))
    planes.append(horizontal(-(h + w), h + w, cy - (h + w), cy + (h + w), 0.0, tex()))
    world = WorldModel(planes)
    length = path.length
    ramp = SpeedRamp(speed, 3.0)
    duration = float(np.floor((ramp.time_at(length) - 0.2) * 10) / 10)
    traj = TrajectorySpec("revisit-loop", duration=duration, path=path, ramp=ramp, height=1.5,
                          bob=0.05, bob_freq=0.3, pitch_amp=np.deg2rad(1.0),
                          roll_amp=np.deg2rad(1.0), wobble_freq=0.2)
    # the camera faces the inner block: a forward camera would only see the
    # street walls at grazing angles
    return Scenario(name, world, traj, LidarPattern.spinning(),
                    camera=CameraModel.side_looking(camera_yaw), thresholds=thresholds,
                    description=description)


def _revisit_loop():
    return _ring("revisit-loop", L=100.0, r=10.0, w=7.0, H=12.0, speed=5.0, revisit=50.0,
                 tex_seed=41, wavelength=1.5, thresholds=OUTDOOR,
                 description="street ring around a city block (~460 m) that re-enters and "
                             "re-drives its first 50 m; long straights are LiDAR-degenerate")


def _outdoor_loop():
    return _ring("outdoor-loop", L=50.0, r=8.0, w=6.0, H=10.0, speed=3.0, revisit=0.0,
                 tex_seed=53, wavelength=1.2, thresholds=OUTDOOR,
                 description="textured street loop around one block")


def _long_walk():
    tex = _tex_factory(61, 1.0)
    x0, x1, w, H = -150.0, 500.0, 5.0, 8.0
    planes = [wall((x0, -w), (x1, -w), 0, H, tex()), wall((x1, w), (x0, w), 0, H, tex()),
              horizontal(x0, x1, -w, w, 0.0, tex())]
    for x in np.arange(x0 + 5.0, x1, 15.0):
        for y in (-3.0, 3.0):
            planes += box(float(x), y, 0.4, 0.4, 0.0, H, lambda i: tex())
    world = WorldModel(planes)
    path = SegmentPath([("straight", 320.0)], start=(0.0, 0.0), heading=0.0)
    ramp = SpeedRamp(4.0, 3.0)
    traj = TrajectorySpec("line", duration=float(np.floor(ramp.time_at(305.0) * 10) / 10), path=path,
                          ramp=ramp, height=1.2, bob=0.03, pitch_amp=np.deg2rad(1.0),
                          roll_amp=np.deg2rad(1.0))
    return Scenario("long-walk", world, traj, LidarPattern.spinning(), thresholds=OUTDOOR,
                    description="300 m straight street lined with pillars (map sliding fixture)")


def _floor():
    tex = _tex_factory(71, 0.5)
    world = WorldModel([horizontal(-30, 30, -30, 30, 0.0, tex())])
    path = SegmentPath([("straight", 1.0)])
    traj = TrajectorySpec("line", duration=2.0, path=path, ramp=SpeedRamp(0.0, 0.0), height=1.0)
    return Scenario("floor", world, traj, LidarPattern.spinning(), description="static floor plane")


_BUILDERS = {
    "room-loop": _room_loop,
    "corridor": _corridor,
    "wall-facing": _wall_facing,
    "outdoor-loop": _outdoor_loop,
    "revisit-loop": _revisit_loop,
    "long-walk": _long_walk,
    "floor": _floor,
}

SCENARIOS = tuple(_BUILDERS)


class UnknownScenarioError(KeyError):
    category = "unknown-scenario"


def scenario(name: str) -> Scenario:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise UnknownScenarioError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}") from None
    return builder()


def simulate(scn: Scenario, noise: Optional[SensorNoiseSpec] = None, camera=True,
             duration: Optional[float] = None) -> SensorStreams:
    """Generate every sensor stream of ``scn`` (deterministic in ``noise.seed``)."""
    noise = noise if noise is not None else SensorNoiseSpec()
    traj = scn.trajectory
    if duration is not None:
        traj = TrajectorySpec(**{**traj.__dict__, "duration": float(duration)})
    imu = generate_imu(traj, noise)
    scans = [raycast_lidar(scn.world, traj.pose, scn.lidar, noise, t0, t1, index=k)
             for k, (t0, t1) in enumerate(traj.scan_windows())]
    frames = []
    if camera:
        for k, t in enumerate(traj.camera_times()):
            R, p = traj.pose(np.array([t]))
            frames.append(CameraFrame(float(t), render_array(scn.world, (R[0], p[0]), scn.camera,
                                                             noise, index=k)))
    gt_t = traj.imu_times()
    R, p = traj.pose(gt_t)
    gt = PoseTrajectory.from_rotations(gt_t, R, p)
    meta = {"scenario": scn.name, "version": str(scn.version), "seed": str(noise.seed)}
    return SensorStreams(imu, scans, frames, gt, scn.camera, meta)
