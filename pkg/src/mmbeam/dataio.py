"""Dataset index format, splits, GPS normalization and synthetic V2I scenes."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .signalmodel import BeamCodebook, make_dft_codebook, optimal_beams, steering_channel

logger = logging.getLogger(__name__)

INDEX_COLUMNS = ("sample_id", "image_relpath", "lidar_relpath", "latitude", "longitude", "beam_index")
METERS_PER_DEG_LAT = 111_320.0


@dataclass(frozen=True)
class IndexRecord:
    sample_id: str
    image_relpath: str
    lidar_relpath: str
    latitude: float
    longitude: float
    beam_index: int


@dataclass
class DatasetIndex:
    records: list[IndexRecord]
    root: Path = Path(".")
    split_seed: int = 0
    split_fracs: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if any(f <= 0 for f in self.split_fracs) or abs(sum(self.split_fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be positive and sum to 1, got {self.split_fracs}")
        self.root = Path(self.root)

    def __len__(self):
        return len(self.records)

    def subset(self, positions) -> "DatasetIndex":
        return replace(self, records=[self.records[i] for i in positions])

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.beam_index for r in self.records], dtype=np.int64)

    @property
    def gps(self) -> np.ndarray:
        return np.array([(r.latitude, r.longitude) for r in self.records], dtype=np.float64).reshape(-1, 2)

    def image_path(self, i: int) -> Path:
        return self.root / self.records[i].image_relpath

    def lidar_path(self, i: int) -> Path:
        return self.root / self.records[i].lidar_relpath


@dataclass
class MultimodalSample:
    sample_id: str
    image: np.ndarray       # (H, W, 3) in [0, 1]
    points: np.ndarray      # (P, 4): x, y, z, intensity
    gps_raw: tuple[float, float]
    beam_label: int


class IndexFormatError(ValueError):
    pass


def load_index(path, M: int | None = None, check_files: bool = True) -> DatasetIndex:
    """Parse an index CSV; relative paths resolve against the CSV's directory."""
    path = Path(path)
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in INDEX_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise IndexFormatError(f"{path}: missing columns {missing}")
        for row_no, row in enumerate(reader, start=2):
            try:
                lat = float(row["latitude"])
                lon = float(row["longitude"])
            except ValueError:
                raise IndexFormatError(f"{path}: row {row_no}: non-numeric coordinates") from None
            if not (math.isfinite(lat) and math.isfinite(lon)):
                raise IndexFormatError(f"{path}: row {row_no}: non-finite coordinates")
            try:
                beam = int(row["beam_index"])
            except ValueError:
                raise IndexFormatError(f"{path}: row {row_no}: beam_index is not an integer") from None
            if beam < 0 or (M is not None and beam >= M):
                raise IndexFormatError(f"{path}: row {row_no}: beam_index {beam} outside [0, {M})")
            rec = IndexRecord(row["sample_id"], row["image_relpath"], row["lidar_relpath"], lat, lon, beam)
            if check_files:
                for rel in (rec.image_relpath, rec.lidar_relpath):
                    if not (path.parent / rel).exists():
                        raise IndexFormatError(f"{path}: row {row_no}: file not found: {rel}")
            records.append(rec)
    return DatasetIndex(records=records, root=path.parent)


def write_index(index: DatasetIndex, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INDEX_COLUMNS)
        for r in index.records:
            w.writerow([r.sample_id, r.image_relpath, r.lidar_relpath,
                        repr(r.latitude), repr(r.longitude), r.beam_index])
    return path


def load_points(path) -> np.ndarray:
    pts = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if pts.shape[1] != 4 or pts.shape[0] < 1:
        raise ValueError(f"{path}: expected a non-empty 4-column point cloud")
    if not np.all(np.isfinite(pts[:, :3])):
        raise ValueError(f"{path}: non-finite point coordinates")
    return pts


def save_points(path, points: np.ndarray) -> None:
    np.savetxt(path, np.asarray(points, dtype=np.float64), delimiter=",", fmt="%.17g")


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def load_sample(index: DatasetIndex, i: int) -> MultimodalSample:
    r = index.records[i]
    return MultimodalSample(r.sample_id, load_image(index.image_path(i)), load_points(index.lidar_path(i)),
                            (r.latitude, r.longitude), r.beam_index)


# ---------------------------------------------------------------------- splits

def split(index: DatasetIndex, fracs: tuple[float, float, float] | None = None,
          seed: int | None = None) -> tuple[DatasetIndex, DatasetIndex, DatasetIndex]:
    """Deterministic train/val/test partition, stratified by beam label.

    Labels with at least three samples are laid out label by label (shuffled
    within each label); rarer samples form a shuffled tail.  Each position is
    then handed to the split with the largest running deficit against its
    target fraction, so every contiguous label block is split within one
    sample of proportional and the totals are the rounded targets.
    """
    fracs = tuple(fracs or index.split_fracs)
    seed = index.split_seed if seed is None else seed
    if any(f <= 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be positive and sum to 1, got {fracs}")
    n = len(index)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    rng = np.random.default_rng(seed)
    labels = index.labels
    uniq, counts = np.unique(labels, return_counts=True)
    order: list[int] = []
    sparse: list[int] = []
    for lab, cnt in zip(uniq, counts):
        members = np.flatnonzero(labels == lab)
        members = members[rng.permutation(members.size)]
        (order if cnt >= 3 else sparse).extend(members.tolist())
    if sparse:
        sparse_arr = np.array(sparse)
        order.extend(sparse_arr[rng.permutation(sparse_arr.size)].tolist())

    f = np.asarray(fracs)
    assigned = np.zeros(3)
    buckets: list[list[int]] = [[], [], []]
    for pos, idx in enumerate(order):
        deficit = (pos + 1) * f - assigned
        s = int(np.argmax(deficit))
        assigned[s] += 1
        buckets[s].append(idx)
    return tuple(replace(index.subset(sorted(b)), split_seed=seed, split_fracs=fracs) for b in buckets)


# ------------------------------------------------------------------------- GPS

@dataclass(frozen=True)
class GpsNormalizer:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("degenerate GPS normalizer: each axis needs min < max")

    def normalize(self, gps) -> np.ndarray:
        g = np.asarray(gps, dtype=np.float64)
        lo = np.array([self.lat_min, self.lon_min])
        hi = np.array([self.lat_max, self.lon_max])
        return (g - lo) / (hi - lo)

    def denormalize(self, g_hat) -> np.ndarray:
        g = np.asarray(g_hat, dtype=np.float64)
        lo = np.array([self.lat_min, self.lon_min])
        hi = np.array([self.lat_max, self.lon_max])
        return g * (hi - lo) + lo

    def to_dict(self) -> dict:
        return {"lat_min": self.lat_min, "lat_max": self.lat_max,
                "lon_min": self.lon_min, "lon_max": self.lon_max}


def fit_gps_normalizer(train: DatasetIndex) -> GpsNormalizer:
    g = train.gps
    if g.shape[0] < 2:
        raise ValueError("need at least two training coordinates")
    lo, hi = g.min(axis=0), g.max(axis=0)
    if np.any(hi <= lo):
        axis = "latitude" if hi[0] <= lo[0] else "longitude"
        raise ValueError(f"degenerate {axis} axis: all training values equal")
    return GpsNormalizer(float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1]))


def normalize_gps(norm: GpsNormalizer, gps_raw) -> np.ndarray:
    """Min-max map with the training extremes; no clamping outside the hull."""
    return norm.normalize(gps_raw)


# ------------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticSceneConfig:
    n_samples: int = 2000
    M: int = 32
    N_ant: int = 32
    road_span_m: tuple[float, float] = (-16.0, 16.0)
    road_offset_m: float = 8.0
    bs_position: tuple[float, float] = (33.420000, -111.930000)
    image_size: tuple[int, int] = (32, 64)
    camera_half_fov_deg: float = 70.0
    points_per_vehicle: int = 96
    clutter_points: int = 64
    gps_noise_std_deg: float = 3e-5
    distractor_prob: float = 0.5
    distractor_lanes_m: tuple[float, ...] = (8.0, 11.5)
    night_mode: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.road_span_m[0] < self.road_span_m[1]:
            raise ValueError("road_span_m must satisfy min < max")
        if self.road_offset_m <= 0:
            raise ValueError("road_offset_m must be positive")
        if not 0.0 <= self.distractor_prob <= 1.0:
            raise ValueError("distractor_prob must lie in [0, 1]")


VEHICLE_SIZE = (4.5, 1.8, 1.5)  # length (x), width (y), height (z), meters


def local_to_gps(x_east: float, y_north: float, bs_position) -> tuple[float, float]:
    lat0, lon0 = bs_position
    lat = lat0 + y_north / METERS_PER_DEG_LAT
    lon = lon0 + x_east / (METERS_PER_DEG_LAT * math.cos(math.radians(lat0)))
    return lat, lon


def vehicle_angle(x_east: float, y_north: float) -> float:
    """Angle off the array broadside (array faces north, +angle toward east)."""
    return math.atan2(x_east, y_north)


def label_for_position(x_east: float, y_north: float, cb: BeamCodebook) -> int:
    h = steering_channel(vehicle_angle(x_east, y_north), cb.N_ant).h
    return int(optimal_beams(h[None, :], cb)[0])


def render_image(vehicles, cfg: SyntheticSceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Equi-angular camera at the BS: columns map linearly to azimuth.

    ``vehicles`` holds ``(x_east, y_north, brightness)`` tuples, painted far to near.
    """
    H, W = cfg.image_size
    half = math.radians(cfg.camera_half_fov_deg)
    rows = (np.arange(H) + 0.5)[:, None]
    cols = (np.arange(W) + 0.5)[None, :]
    horizon = 0.45 * H
    img = np.empty((H, W, 3))
    sky = np.array([0.55, 0.7, 0.9])
    road = np.array([0.35, 0.35, 0.38])
    t = np.clip((rows - horizon) / (H - horizon), 0, 1)[..., None]
    img[:] = np.where(rows[..., None] < horizon, sky, road * (0.8 + 0.4 * t))

    for x_east, y_north, bright in sorted(vehicles, key=lambda v: -math.hypot(v[0], v[1])):
        dist = math.hypot(x_east, y_north)
        az = vehicle_angle(x_east, y_north)
        col_c = (az / half + 1.0) * W / 2.0
        half_w = math.atan2(VEHICLE_SIZE[0] / 2, dist) / half * W / 2.0
        height_px = H * 0.9 * VEHICLE_SIZE[2] / dist
        bottom = horizon + H * 0.55 * min(1.0, 6.0 / dist)
        top = bottom - height_px
        # Fractional pixel coverage keeps the sub-pixel position in the rendering.
        cov_x = np.clip(np.minimum(cols + 0.5, col_c + half_w) - np.maximum(cols - 0.5, col_c - half_w), 0, 1)
        cov_y = np.clip(np.minimum(rows + 0.5, bottom) - np.maximum(rows - 0.5, top), 0, 1)
        cover = (cov_x * cov_y)[..., None]
        img = img * (1 - cover) + np.array([0.95, 0.85, 0.2]) * bright * cover
    img += rng.normal(0.0, 0.02, img.shape)
    if cfg.night_mode:
        img = img * 0.25 + rng.normal(0.0, 0.05, img.shape)
    return np.clip(img, 0.0, 1.0)


def _box_points(x_east, y_north, n, rng):
    L, Wd, Hh = VEHICLE_SIZE
    # Uniform points on the box surface, picking faces by area.
    faces = np.array([Wd * Hh, Wd * Hh, L * Hh, L * Hh, L * Wd])
    face = rng.choice(5, size=n, p=faces / faces.sum())
    u = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array([L, Wd, Hh])
    u[face == 0, 0] = -L / 2
    u[face == 1, 0] = L / 2
    u[face == 2, 1] = -Wd / 2
    u[face == 3, 1] = Wd / 2
    u[face == 4, 2] = Hh / 2
    body = u + np.array([x_east, y_north, Hh / 2 + 0.3])
    body += rng.normal(0.0, 0.02, body.shape)
    return np.hstack([body, rng.uniform(0.6, 1.0, size=(n, 1))])


def sample_point_cloud(vehicles, cfg: SyntheticSceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Surface points on each vehicle box plus low-intensity ground clutter."""
    parts = [_box_points(x, y, cfg.points_per_vehicle, rng) for x, y, _ in vehicles]
    m = cfg.clutter_points
    lo, hi = cfg.road_span_m
    clutter = np.column_stack([
        rng.uniform(lo - 4, hi + 4, m),
        rng.uniform(0.5, 2 * cfg.road_offset_m - 0.5, m),
        rng.normal(0.0, 0.05, m),
        rng.uniform(0.0, 0.3, m),
    ])
    return np.vstack(parts + [clutter])


def generate_synthetic(cfg: SyntheticSceneConfig, out_dir) -> DatasetIndex:
    """Write a labeled synthetic V2I dataset (PNG images, point-cloud CSVs, index.csv).

    The UE vehicle drives in the lane ``road_offset_m`` north of the BS.  With
    probability ``distractor_prob`` a second, identical-looking vehicle shares
    the scene (lane drawn from ``distractor_lanes_m``), so camera and LiDAR
    alone cannot always tell which vehicle carries the UE.
    """
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "lidar").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    rng = np.random.default_rng(cfg.rng_seed)
    cb = make_dft_codebook(cfg.M, cfg.N_ant)
    lo, hi = cfg.road_span_m
    xs = rng.uniform(lo, hi, cfg.n_samples)
    y = cfg.road_offset_m
    H = np.stack([steering_channel(vehicle_angle(x, y), cfg.N_ant).h for x in xs])
    labels = optimal_beams(H, cb)

    records = []
    width = max(5, len(str(cfg.n_samples)))
    for i, (x, lab) in enumerate(zip(xs, labels)):
        sid = f"s{i:0{width}d}"
        vehicles = [(x, y, rng.uniform(0.85, 1.0))]
        if rng.random() < cfg.distractor_prob:
            lane = cfg.distractor_lanes_m[rng.integers(len(cfg.distractor_lanes_m))]
            vehicles.append((rng.uniform(lo, hi), lane, rng.uniform(0.85, 1.0)))
        img = render_image(vehicles, cfg, rng)
        pts = sample_point_cloud(vehicles, cfg, rng)
        lat, lon = local_to_gps(x, y, cfg.bs_position)
        lat += rng.normal(0.0, cfg.gps_noise_std_deg)
        lon += rng.normal(0.0, cfg.gps_noise_std_deg)
        img_rel = f"images/{sid}.png"
        pts_rel = f"lidar/{sid}.csv"
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="RGB").save(out / img_rel)
        save_points(out / pts_rel, pts)
        records.append(IndexRecord(sid, img_rel, pts_rel, float(lat), float(lon), int(lab)))
    index = DatasetIndex(records=records, root=out)
    write_index(index, out / "index.csv")
    np.savetxt(out / "vehicle_x.csv", xs, fmt="%.17g")
    logger.info("wrote %d synthetic samples to %s", cfg.n_samples, out)
    return index
