"""Deterministic synthetic site builder and dataset generator.

A site is a seeded set of scatterer positions in a rectangle. Channels are
ray-based: an optional direct LoS path plus paths routed via the nearest
scatterers, each with a distance-dependent amplitude, a per-path power
decay, and an independent uniform random phase. Targets are the
angular-domain phase/amplitude rows derived from the unitary DFT of the
channel, with amplitudes divided by a global RMS scale computed over the
training split.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .signalcore import ArrayGeometry, dft, steering_vector

_MAGIC = b"FBBSDATA"
_VERSION = 1


@dataclass(frozen=True)
class SiteConfig:
    seed: int
    n_antennas: int = 32
    n_paths: int = 5
    n_scatterers: int = 24
    area: tuple[float, float, float, float] = (10.0, 110.0, -50.0, 50.0)  # x_min,x_max,y_min,y_max
    bs_position: tuple[float, float] = (0.0, 0.0)
    los_probability: float = 0.5
    pathloss_exponent: float = 2.0
    spacing_ratio: float = 0.5
    path_decay: float = 0.6  # power decay per path order

    def __post_init__(self):
        x_min, x_max, y_min, y_max = self.area
        if not (x_max > x_min and y_max > y_min):
            raise ConfigError(f"degenerate area {self.area}")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")
        if self.n_scatterers < self.n_paths - 1:
            raise ConfigError("need at least n_paths - 1 scatterers")
        if not 0.0 <= self.los_probability <= 1.0:
            raise ConfigError("los_probability must lie in [0, 1]")
        if self.pathloss_exponent <= 0:
            raise ConfigError("pathloss_exponent must be > 0")

    @property
    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry(self.n_antennas, self.spacing_ratio)


@dataclass(frozen=True)
class Site:
    config: SiteConfig
    scatterer_positions: np.ndarray  # (n_scatterers, 2) float64


@dataclass(frozen=True)
class ChannelSample:
    ue_position: np.ndarray  # (2,)
    h: np.ndarray  # (n_antennas,) complex128
    is_los: bool


@dataclass(frozen=True)
class TargetSample:
    phase_row: np.ndarray  # (n_antennas,) in (-pi, pi]
    amp_row: np.ndarray  # (n_antennas,) >= 0, scaled


@dataclass
class Dataset:
    """Channels plus split bookkeeping; train records come first."""

    n_antennas: int
    n_paths: int
    amp_scale: float
    train_count: int
    ue_positions: np.ndarray  # (n, 2)
    is_los: np.ndarray  # (n,) bool
    h: np.ndarray  # (n, n_antennas) complex128
    site: Site | None = None

    @property
    def n_users(self) -> int:
        return self.h.shape[0]

    @property
    def train_indices(self) -> np.ndarray:
        return np.arange(self.train_count)

    @property
    def test_indices(self) -> np.ndarray:
        return np.arange(self.train_count, self.n_users)

    def target_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(phase, amp) rows for every record, amp divided by amp_scale."""
        spec = np.fft.fft(self.h, norm="ortho", axis=1)
        return np.angle(spec), np.abs(spec) / self.amp_scale

    def equals(self, other: "Dataset") -> bool:
        return (
            self.n_antennas == other.n_antennas
            and self.n_paths == other.n_paths
            and self.amp_scale == other.amp_scale
            and self.train_count == other.train_count
            and np.array_equal(self.ue_positions, other.ue_positions)
            and np.array_equal(self.is_los, other.is_los)
            and np.array_equal(self.h, other.h)
        )


def _rng(seed: int) -> np.random.Generator:
    # counter-based generator so sites are reproducible across platforms
    return np.random.Generator(np.random.Philox(seed))


def generate_site(config: SiteConfig) -> Site:
    """Scatterer positions drawn uniformly in the area from the config seed."""
    rng = _rng(config.seed)
    x_min, x_max, y_min, y_max = config.area
    pts = np.column_stack(
        [
            rng.uniform(x_min, x_max, size=config.n_scatterers),
            rng.uniform(y_min, y_max, size=config.n_scatterers),
        ]
    )
    return Site(config=config, scatterer_positions=pts)


def _azimuth(src: np.ndarray, dst: np.ndarray) -> float:
    d = dst - src
    return float(np.arctan2(d[1], d[0]))


def sample_channel(site: Site, ue_position: np.ndarray, rng: np.random.Generator) -> ChannelSample:
    """Ray-based channel at one UE position.

    LoS draws add the direct BS->UE path; the remaining paths bounce off
    the scatterers nearest to the UE, attenuated by the two-hop distance
    product and the per-order power decay. Every path gets an independent
    uniform phase.
    """
    cfg = site.config
    ue = np.asarray(ue_position, dtype=np.float64)
    x_min, x_max, y_min, y_max = cfg.area
    if not (x_min <= ue[0] <= x_max and y_min <= ue[1] <= y_max):
        raise ConfigError(f"UE position {ue} outside area {cfg.area}")
    bs = np.asarray(cfg.bs_position)
    geom = cfg.geometry
    gamma = cfg.pathloss_exponent

    is_los = bool(rng.uniform() < cfg.los_probability)
    angles: list[float] = []
    amps: list[float] = []
    n_scatter_paths = cfg.n_paths - 1 if is_los else cfg.n_paths
    if is_los:
        d = float(np.linalg.norm(ue - bs))
        angles.append(_azimuth(bs, ue))
        amps.append(d ** (-gamma / 2.0))
    if n_scatter_paths > 0 and cfg.n_scatterers > 0:
        dists = np.linalg.norm(site.scatterer_positions - ue, axis=1)
        order = np.argsort(dists, kind="stable")[: min(n_scatter_paths, cfg.n_scatterers)]
        for rank, s_idx in enumerate(order, start=1):
            s = site.scatterer_positions[s_idx]
            d1 = float(np.linalg.norm(s - bs))
            d2 = float(np.linalg.norm(ue - s))
            angles.append(_azimuth(bs, s))
            amps.append(cfg.path_decay ** (rank / 2.0) * (d1 * d2) ** (-gamma / 2.0))

    h = np.zeros(cfg.n_antennas, dtype=np.complex128)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(angles))
    for phi, amp, theta in zip(angles, amps, phases):
        h += amp * np.exp(1j * theta) * steering_vector(phi, geom)
    return ChannelSample(ue_position=ue, h=h, is_los=is_los)


def target_sample(h: np.ndarray, amp_scale: float) -> TargetSample:
    """Angular-domain phase row and scaled amplitude row of a channel."""
    if amp_scale <= 0:
        raise ConfigError("amp_scale must be > 0")
    spec = dft(h)
    return TargetSample(phase_row=np.angle(spec), amp_row=np.abs(spec) / amp_scale)


def build_dataset(site: Site, n_users: int, train_fraction: float, seed: int) -> Dataset:
    """UE positions uniform in the area; amp_scale is the RMS of all
    angular-domain amplitudes over the training split."""
    if n_users < 2:
        raise ConfigError("n_users must be >= 2")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("train_fraction must lie in (0, 1)")
    cfg = site.config
    rng = _rng(seed)
    x_min, x_max, y_min, y_max = cfg.area
    positions = np.column_stack(
        [rng.uniform(x_min, x_max, size=n_users), rng.uniform(y_min, y_max, size=n_users)]
    )
    h = np.zeros((n_users, cfg.n_antennas), dtype=np.complex128)
    is_los = np.zeros(n_users, dtype=bool)
    for i in range(n_users):
        cs = sample_channel(site, positions[i], rng)
        h[i] = cs.h
        is_los[i] = cs.is_los
    train_count = int(round(n_users * train_fraction))
    spec = np.fft.fft(h[:train_count], norm="ortho", axis=1)
    amp_scale = float(np.sqrt(np.mean(np.abs(spec) ** 2)))
    return Dataset(
        n_antennas=cfg.n_antennas,
        n_paths=cfg.n_paths,
        amp_scale=amp_scale,
        train_count=train_count,
        ue_positions=positions,
        is_los=is_los,
        h=h,
        site=site,
    )


def save_dataset(ds: Dataset, path: str) -> None:
    """Little-endian binary dataset file, train records first."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", ds.n_antennas))
        f.write(struct.pack("<I", ds.n_paths))
        f.write(struct.pack("<Q", ds.n_users))
        f.write(struct.pack("<d", ds.amp_scale))
        f.write(struct.pack("<Q", ds.train_count))
        for i in range(ds.n_users):
            f.write(struct.pack("<ddB", ds.ue_positions[i, 0], ds.ue_positions[i, 1],
                                1 if ds.is_los[i] else 0))
            inter = np.empty(2 * ds.n_antennas, dtype="<f8")
            inter[0::2] = ds.h[i].real
            inter[1::2] = ds.h[i].imag
            f.write(inter.tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 8 or data[:8] != _MAGIC:
        raise FormatError("bad dataset magic")
    off = 8
    try:
        version, n_t, n_paths = struct.unpack_from("<III", data, off)
        off += 12
        (n_users,) = struct.unpack_from("<Q", data, off)
        off += 8
        (amp_scale,) = struct.unpack_from("<d", data, off)
        off += 8
        (train_count,) = struct.unpack_from("<Q", data, off)
        off += 8
    except struct.error as e:
        raise FormatError(f"truncated dataset header: {e}") from e
    if version != _VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    rec_size = 8 + 8 + 1 + 16 * n_t
    if len(data) - off != rec_size * n_users:
        raise FormatError("dataset record section has wrong length")
    positions = np.zeros((n_users, 2))
    is_los = np.zeros(n_users, dtype=bool)
    h = np.zeros((n_users, n_t), dtype=np.complex128)
    for i in range(n_users):
        x, y, los = struct.unpack_from("<ddB", data, off)
        off += 17
        inter = np.frombuffer(data, dtype="<f8", count=2 * n_t, offset=off)
        off += 16 * n_t
        positions[i] = (x, y)
        is_los[i] = bool(los)
        h[i] = inter[0::2] + 1j * inter[1::2]
    return Dataset(
        n_antennas=n_t,
        n_paths=n_paths,
        amp_scale=amp_scale,
        train_count=train_count,
        ue_positions=positions,
        is_los=is_los,
        h=h,
    )
