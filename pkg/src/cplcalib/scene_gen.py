"""Synthetic CVGL-style stereo datasets.

The 49 camera configurations are a synthetic stand-in with the published
count (25 for town 1, 24 for town 2); their values are not the original
simulator settings.  Each dataset holds stereo observations ``(u, v, d)`` with
the world points they reconstruct to under the ground-truth camera.

File format: line 1 is a JSON header, the remaining lines are CSV
``u,v,d,X,Y,Z`` at full float precision.  Angles in files are degrees.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import projection_loss as pl
from .camera_model import (
    CameraParams,
    ImageObservation,
    WorldPoint,
    rotate_translate,
    stereo_to_camera,
    world_to_image_arrays,
)
from .errors import ConsistencyError, InvalidParams, SchemaError

SCHEMA_VERSION = "cvgl-dataset/1"

FOV_VALUES = (60.0, 75.0, 90.0, 105.0, 120.0)
PITCH_VALUES = (-15.0, -7.5, 0.0, 7.5, 15.0)
X_OFFSETS = (0.0, 0.5, 1.0, 1.5, 2.0)
# camera mount for town 1 and the origin of the town 2 offsets, meters
BASE_TRANSLATION = (1.5, 0.5, 2.4)
# town 2 drops the configuration identical to the town 1 reference camera
_TOWN2_DUPLICATE = (90.0, 0.0)

DEFAULT_WIDTH = 1280
DEFAULT_HEIGHT = 960
DEFAULT_BASELINE = 0.5
DEPTH_RANGE = (2.0, 50.0)
CONSISTENCY_TOL = 1e-9


@dataclass(frozen=True)
class SceneConfig:
    town_id: int
    fov: float
    x: float
    y: float
    z: float
    pitch: float
    yaw: float = 0.0
    roll: float = 0.0

    def __post_init__(self) -> None:
        if self.town_id not in (1, 2):
            raise InvalidParams(f"town_id must be 1 or 2, got {self.town_id}")
        if not 0 < self.fov < 180:
            raise InvalidParams(f"fov must be in (0, 180) degrees, got {self.fov}")


def build_config_grid() -> list[SceneConfig]:
    """The 49 configurations: 25 for town 1 followed by 24 for town 2."""
    x0, y0, z0 = BASE_TRANSLATION
    grid = [SceneConfig(1, fov, x0, y0, z0, pitch) for fov in FOV_VALUES for pitch in PITCH_VALUES]
    for fov in FOV_VALUES:
        for off in X_OFFSETS:
            if (fov, off) == _TOWN2_DUPLICATE:
                continue
            grid.append(SceneConfig(2, fov, x0 + off, y0, z0, 0.0))
    return grid


def fov_to_focal(fov: float, image_width: float) -> float:
    if not 0 < fov < 180:
        raise InvalidParams(f"fov must be in (0, 180) degrees, got {fov}")
    if not image_width > 0:
        raise InvalidParams(f"image width must be positive, got {image_width}")
    return (image_width / 2.0) / math.tan(math.radians(fov) / 2.0)


def camera_params_for(config: SceneConfig, width: int, height: int, baseline: float) -> CameraParams:
    f = fov_to_focal(config.fov, width)
    return CameraParams.from_values(
        f, f, width / 2.0, height / 2.0, baseline,
        math.radians(config.pitch), config.x, config.y, config.z,
    )


@dataclass(eq=False)
class Dataset:
    config: SceneConfig
    params: CameraParams
    width: int
    height: int
    observations: np.ndarray  # (n, 3): u, v, d in pixels
    world: np.ndarray  # (n, 3): X, Y, Z in meters
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.observations)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.config == other.config
            and self.params == other.params
            and (self.width, self.height, self.seed) == (other.width, other.height, other.seed)
            and np.array_equal(self.observations, other.observations)
            and np.array_equal(self.world, other.world)
        )

    def correspondences(self):
        for (u, v, d), (X, Y, Z) in zip(self.observations, self.world):
            yield ImageObservation(float(u), float(v), float(d)), WorldPoint(float(X), float(Y), float(Z))

    def truth(self) -> pl.ParamVector13:
        """Ground-truth parameter vector: disparity scale 1, X/Y/Z set to the point centroid."""
        centroid = self.world.mean(axis=0)
        return pl.ParamVector13.from_parts(self.params, 1.0, WorldPoint(*map(float, centroid)))

    def max_reconstruction_error(self) -> float:
        recon = pl.reconstruct_many(self.truth(), self.observations)
        return float(np.max(np.abs(recon - self.world)))

    def check_consistency(self, tol: float = CONSISTENCY_TOL) -> None:
        obs = self.observations
        if np.any(obs[:, 2] <= 0):
            raise ConsistencyError("observation with non-positive disparity")
        if np.any((obs[:, 0] < 0) | (obs[:, 0] > self.width) | (obs[:, 1] < 0) | (obs[:, 1] > self.height)):
            raise ConsistencyError("observation outside the image bounds")
        err = self.max_reconstruction_error()
        if not err < tol:
            raise ConsistencyError(f"stored world points disagree with reprojection by {err:.3e} m")


def _sample_frustum(rng, params: CameraParams, width, height, n, depth_range):
    k = params.intrinsics
    near, far = depth_range
    u = rng.uniform(0.0, width, n)
    v = rng.uniform(0.0, height, n)
    # density proportional to depth^2 gives a uniform distribution over frustum volume
    r = rng.uniform(0.0, 1.0, n)
    depth = np.cbrt(near**3 + r * (far**3 - near**3))
    # camera point on the ray through (u, v) at that depth
    x_cam = depth
    y_cam = -(x_cam / k.f_x) * (u - k.u_0)
    z_cam = (x_cam / k.f_y) * (k.v_0 - v)
    ext = params.extrinsics
    return rotate_translate(np.cos(ext.theta_p), np.sin(ext.theta_p), ext.t_x, ext.t_y, ext.t_z,
                            x_cam, y_cam, z_cam)


def generate(
    config: SceneConfig,
    n_points: int,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    baseline: float = DEFAULT_BASELINE,
    seed: int = 0,
    depth_range: tuple[float, float] = DEPTH_RANGE,
) -> Dataset:
    """Sample world points in the visible frustum and invert the stereo chain to get (u, v, d)."""
    if n_points < 1:
        raise InvalidParams(f"n_points must be >= 1, got {n_points}")
    if width <= 0 or height <= 0:
        raise InvalidParams(f"image size must be positive, got {width}x{height}")
    params = camera_params_for(config, width, height, baseline)
    rng = np.random.default_rng(seed)
    obs_rows, world_rows = [], []
    have = 0
    while have < n_points:
        X, Y, Z = _sample_frustum(rng, params, width, height, n_points, depth_range)
        u, v, d = world_to_image_arrays(params, X, Y, Z)
        # rounding in the inversion can push points just outside the frame
        keep = (u >= 0) & (u <= width) & (v >= 0) & (v <= height) & (d > 0)
        obs_rows.append(np.column_stack([u, v, d])[keep])
        world_rows.append(np.column_stack([X, Y, Z])[keep])
        have += int(keep.sum())
    obs = np.concatenate(obs_rows)[:n_points]
    world = np.concatenate(world_rows)[:n_points]
    return Dataset(config, params, width, height, obs, world, seed=seed)


def generate_probe(config: SceneConfig, depth: float, width=DEFAULT_WIDTH, height=DEFAULT_HEIGHT,
                   baseline=DEFAULT_BASELINE) -> Dataset:
    """One point on the principal ray at the given depth."""
    params = camera_params_for(config, width, height, baseline)
    k, ext = params.intrinsics, params.extrinsics
    X, Y, Z = rotate_translate(np.cos(ext.theta_p), np.sin(ext.theta_p), ext.t_x, ext.t_y, ext.t_z,
                               *stereo_to_camera(k.f_x, k.f_y, k.u_0, k.v_0, params.rig.b,
                                                 k.f_x * params.rig.b / depth, k.u_0, k.v_0))
    u, v, d = world_to_image_arrays(params, X, Y, Z)
    return Dataset(config, params, width, height, np.array([[u, v, d]]), np.array([[X, Y, Z]]))


# --- serialization --------------------------------------------------------


def _header(ds: Dataset) -> dict:
    k, e = ds.params.intrinsics, ds.params.extrinsics
    return {
        "schema_version": SCHEMA_VERSION,
        "config": asdict(ds.config),
        "image": {"width": ds.width, "height": ds.height},
        "ground_truth": {
            "f_x": k.f_x, "f_y": k.f_y, "u_0": k.u_0, "v_0": k.v_0,
            "b": ds.params.rig.b,
            "theta_p_deg": ds.config.pitch,
            "t_x": e.t_x, "t_y": e.t_y, "t_z": e.t_z,
            "d_scale": 1.0,
        },
        "units": {"pixels": "u, v, d, f_x, f_y, u_0, v_0", "meters": "b, t, X, Y, Z", "angles": "degrees"},
        "seed": ds.seed,
        "n_points": len(ds),
    }


def dumps(ds: Dataset) -> str:
    buf = io.StringIO()
    buf.write(json.dumps(_header(ds), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["u", "v", "d", "X", "Y", "Z"])
    for obs, pt in zip(ds.observations, ds.world):
        writer.writerow([repr(float(x)) for x in (*obs, *pt)])
    return buf.getvalue()


def save(ds: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(ds))
    return path


def loads(text: str, check: bool = True) -> Dataset:
    first, _, body = text.partition("\n")
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"dataset header is not valid JSON: {exc}") from None
    if not isinstance(header, dict) or header.get("schema_version") != SCHEMA_VERSION:
        found = header.get("schema_version") if isinstance(header, dict) else None
        raise SchemaError(f"unsupported schema_version {found!r}, expected {SCHEMA_VERSION!r}")
    try:
        config = SceneConfig(**header["config"])
        gt = header["ground_truth"]
        width, height = header["image"]["width"], header["image"]["height"]
        params = CameraParams.from_values(
            gt["f_x"], gt["f_y"], gt["u_0"], gt["v_0"], gt["b"],
            math.radians(gt["theta_p_deg"]), gt["t_x"], gt["t_y"], gt["t_z"],
        )
        rows = list(csv.reader(io.StringIO(body)))
        if rows[0] != ["u", "v", "d", "X", "Y", "Z"]:
            raise SchemaError(f"unexpected CSV columns {rows[0]}")
        data = np.array([[float(x) for x in row] for row in rows[1:] if row], dtype=float).reshape(-1, 6)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"malformed dataset: {exc!r}") from None
    if len(data) != header.get("n_points", len(data)):
        raise SchemaError(f"header says {header['n_points']} points, body has {len(data)}")
    ds = Dataset(config, params, width, height, data[:, :3].copy(), data[:, 3:].copy(), seed=header.get("seed"))
    if check:
        ds.check_consistency()
    return ds


def load(path, check: bool = True) -> Dataset:
    return loads(Path(path).read_text(), check=check)
