"""Paired-eye dataset container, synthetic generator, and split planning.

The synthetic generator realizes the regression model y = g(x) + eps with
everything known: a latent 8-vector z per patient drives both the image
content and the noiseless labels, and eps is drawn from a configured
covariance so residual structure is available as ground truth.

Image construction. Pixel coordinates use the exact-ratio grid
u_j = (2j - (R-1))/R, which makes horizontal mirroring an exact sign flip
of u. The left-eye (OS) image is a clipped mix of smooth fields that are
all even in u (radial blob, vertical gradient, u^2 ramp, cosine band,
u^2*v saddle, |u| crease), weighted by per-channel constants times
z_0..z_5 - so the OS image is exactly mirror-symmetric, bit for bit. The
right-eye (OD) image is the horizontal mirror of the OS image plus an
asymmetry perturbation scaled by delta: odd-in-u texture fields whose
amplitude is modulated by z_4, plus a small uniform brightness shift.
With delta = 0 the OD image equals mirror(OS) exactly.

Labels (fixed documented polynomials; order OS-SE, OS-AL, OD-SE, OD-AL):

  se_base = 1.0*z0 + 0.6*z1 + 0.25*(z2^2 - 1)
  al_base = 0.8*z0 - 0.5*z1 + 0.4*z3 + 0.2*(z2^2 - 1)
  off_se  = 0.5 + 0.80*z4          off_al = 0.3 + 0.55*z4
  clean   = (se_base - d/2*off_se, al_base - d/2*off_al,
             se_base + d/2*off_se, al_base + d/2*off_al),  d = delta

so the two eyes' label functions coincide at delta = 0 and separate by
delta*(offset polynomials of z4) otherwise; z4 is visible in both images.
Noise eps = L* n with L* the Cholesky factor of the configured covariance.
Per-patient randomness comes from an index-keyed seed stream, so patients
can be generated in any order or in parallel with identical output. The
random draw order per patient (8 latents, then 4 noise values) is part of
the format and must not change.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError

__all__ = [
    "PatientRecord",
    "DatasetContainer",
    "GeneratorConfig",
    "SplitSpec",
    "FoldAssignment",
    "FoldPlan",
    "correlation_template",
    "clean_labels",
    "mirror_horizontal",
    "generate",
    "plan_splits",
]

_LATENTS = 8

# per-channel mixing of latents z0..z5 into the six even-in-u fields;
# z4 is mixed strongly because the per-eye label offsets ride on it
_MIX_BASE = (
    (0.9, 0.5, 0.4, 0.3, 0.65, 0.25),
    (0.4, 0.9, 0.3, 0.5, 0.55, 0.35),
    (0.5, 0.3, 0.9, 0.4, 0.70, 0.2),
)
_MIX_SCALE = 0.22

_SE_COEF = (1.0, 0.6, 0.25)       # z0, z1, (z2^2 - 1)
_AL_COEF = (0.8, -0.5, 0.4, 0.2)  # z0, z1, z3, (z2^2 - 1)
# The z4 slopes dominate the offsets on purpose: per-column standardization
# hands every model the constant part, so only the z4-linked part can
# separate models that know the eye from models that have to guess it.
_OFF_SE = (0.5, 0.80)             # constant, z4
_OFF_AL = (0.3, 0.55)

# Deliberately faint: laterality must be carried by the pairing, not be an
# easy single-image shortcut, or per-channel parameters would have no edge.
_ASYM_AMP = (0.012, 0.006)        # constant, z4 modulation of odd texture
_ASYM_BRIGHT = 0.003


def mirror_horizontal(image: np.ndarray) -> np.ndarray:
    """Flip the width axis (the last axis) of an image or image stack."""
    return image[..., ::-1]


def correlation_template(rho_cross: float = 0.8, rho_se_al: float = 0.35,
                         rho_mixed: float = 0.25) -> tuple:
    """4x4 correlation pattern: same-label cross-eye rho_cross, within-eye
    SE-AL rho_se_al, different-label cross-eye rho_mixed."""
    c, s, m = float(rho_cross), float(rho_se_al), float(rho_mixed)
    return (
        (1.0, s, c, m),
        (s, 1.0, m, c),
        (c, m, 1.0, s),
        (m, c, s, 1.0),
    )


@dataclass(frozen=True)
class PatientRecord:
    """One patient: both eye images (C, H, W) float32 plus 4 float64 labels."""

    os_image: np.ndarray
    od_image: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.os_image.shape != self.od_image.shape:
            raise ShapeError(
                f"eye images disagree: {self.os_image.shape} vs {self.od_image.shape}")
        if self.labels.shape != (4,):
            raise ShapeError(f"labels must be a 4-vector, got {self.labels.shape}")
        if not np.all(np.isfinite(self.labels)):
            raise ConfigError("labels contain non-finite values")


class DatasetContainer:
    """Homogeneous, nonempty list of patient records plus provenance."""

    def __init__(self, records: list[PatientRecord], provenance: dict):
        if not records:
            raise ConfigError("dataset must contain at least one record")
        shape = records[0].os_image.shape
        for i, r in enumerate(records):
            if r.os_image.shape != shape:
                raise ShapeError(
                    f"record {i} image shape {r.os_image.shape} != {shape}")
        self.records = list(records)
        self.provenance = provenance

    def __len__(self) -> int:
        return len(self.records)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.records[0].os_image.shape

    def os_images(self) -> np.ndarray:
        return np.stack([r.os_image for r in self.records])

    def od_images(self) -> np.ndarray:
        return np.stack([r.od_image for r in self.records])

    def labels(self) -> np.ndarray:
        return np.stack([r.labels for r in self.records])

    def subset(self, indices) -> "DatasetContainer":
        indices = list(indices)
        if not indices:
            raise ConfigError("subset selection is empty")
        return DatasetContainer([self.records[i] for i in indices], self.provenance)


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic data knobs; the residual covariance is sigma* x gamma*."""

    n_patients: int
    resolution: int = 64
    channels: int = 3
    sigma_star: tuple = (1.0, 1.0, 1.0, 1.0)
    gamma_star: tuple = field(default_factory=correlation_template)
    delta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 10:
            raise ConfigError(f"n_patients {self.n_patients} below the minimum of 10")
        if self.resolution < 8:
            raise ConfigError("resolution must be >= 8")
        if self.channels < 1:
            raise ConfigError("channels must be >= 1")
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        sigma = np.asarray(self.sigma_star, dtype=np.float64)
        gamma = np.asarray(self.gamma_star, dtype=np.float64)
        if sigma.shape != (4,) or np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
            raise ConfigError("sigma_star must be 4 positive finite values")
        if gamma.shape != (4, 4) or np.max(np.abs(gamma - gamma.T)) > 1e-12 \
                or np.max(np.abs(np.diag(gamma) - 1.0)) > 1e-12:
            raise ConfigError("gamma_star must be a symmetric unit-diagonal 4x4 matrix")
        object.__setattr__(self, "sigma_star", tuple(float(v) for v in sigma))
        object.__setattr__(self, "gamma_star",
                           tuple(tuple(float(v) for v in row) for row in gamma))
        try:
            np.linalg.cholesky(self.covariance_star())
        except np.linalg.LinAlgError as exc:
            raise ConfigError("residual covariance sigma* x gamma* is not SPD") from exc

    def covariance_star(self) -> np.ndarray:
        sigma = np.asarray(self.sigma_star)
        return np.outer(sigma, sigma) * np.asarray(self.gamma_star)

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "resolution": self.resolution,
            "channels": self.channels,
            "sigma_star": list(self.sigma_star),
            "gamma_star": [list(r) for r in self.gamma_star],
            "delta": self.delta,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["sigma_star"] = tuple(d.get("sigma_star", (1.0,) * 4))
        if "gamma_star" in d:
            d["gamma_star"] = tuple(tuple(r) for r in d["gamma_star"])
        return cls(**d)


def clean_labels(z: np.ndarray, delta: float) -> np.ndarray:
    """Noiseless labels for one latent vector, per the documented polynomials."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (_LATENTS,):
        raise ShapeError(f"latent vector must have length {_LATENTS}, got {z.shape}")
    se = _SE_COEF[0] * z[0] + _SE_COEF[1] * z[1] + _SE_COEF[2] * (z[2] ** 2 - 1.0)
    al = (_AL_COEF[0] * z[0] + _AL_COEF[1] * z[1] + _AL_COEF[2] * z[3]
          + _AL_COEF[3] * (z[2] ** 2 - 1.0))
    off_se = _OFF_SE[0] + _OFF_SE[1] * z[4]
    off_al = _OFF_AL[0] + _OFF_AL[1] * z[4]
    half = 0.5 * delta
    return np.array([
        se - half * off_se,
        al - half * off_al,
        se + half * off_se,
        al + half * off_al,
    ])


class _FieldBank:
    """Precomputed spatial fields for one resolution."""

    def __init__(self, resolution: int):
        r = resolution
        j = np.arange(r, dtype=np.float64)
        u = (2.0 * j - (r - 1)) / r          # exact sign flip under mirroring
        v = ((2.0 * j - (r - 1)) / r)[:, None]
        u = u[None, :]
        r2 = u * u + v * v
        radial = np.exp(-r2 / 0.25)
        self.even = np.stack([
            np.broadcast_to(radial, (r, r)),
            np.broadcast_to(v, (r, r)),
            np.broadcast_to(u * u, (r, r)),
            np.cos(np.pi * v) * np.exp(-2.0 * u * u),
            (u * u) * v,
            np.broadcast_to(np.abs(u), (r, r)),
        ])
        self.odd = (0.6 * u * radial + 0.3 * u * v
                    + 0.1 * np.sin(np.pi * u) * np.ones((r, r)))


def _mixing(channels: int) -> np.ndarray:
    return np.array([_MIX_BASE[c % len(_MIX_BASE)] for c in range(channels)])


def _patient_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def generate(config: GeneratorConfig) -> DatasetContainer:
    """Render the synthetic paired-eye dataset described in the module docs."""
    bank = _FieldBank(config.resolution)
    mix = _mixing(config.channels) * _MIX_SCALE
    chol = np.linalg.cholesky(config.covariance_star())
    records = []
    for i in range(config.n_patients):
        rng = _patient_rng(config.seed, i)
        z = rng.standard_normal(_LATENTS)
        noise = chol @ rng.standard_normal(4)
        # even fields weighted by z0..z5 per channel; accumulated with
        # elementwise ops only, so mirror symmetry is exact bit for bit
        weights = mix * z[:6]
        os_img = np.full((config.channels, config.resolution, config.resolution), 0.5)
        for s in range(weights.shape[1]):
            os_img += weights[:, s, None, None] * bank.even[s]
        os_img = np.clip(os_img, 0.0, 1.0)
        amp = _ASYM_AMP[0] + _ASYM_AMP[1] * z[4]
        asym = config.delta * (amp * bank.odd + _ASYM_BRIGHT)
        od_img = np.clip(mirror_horizontal(os_img) + asym, 0.0, 1.0)
        labels = clean_labels(z, config.delta) + noise
        records.append(PatientRecord(
            os_image=os_img.astype(np.float32),
            od_image=od_img.astype(np.float32),
            labels=labels,
        ))
    provenance = {
        "kind": "synthetic",
        "generator": config.to_dict(),
    }
    return DatasetContainer(records, provenance)


# ---------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    """Role fractions for a single split, or a fold count for rotation."""

    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        for name, v in (("train", self.train), ("val", self.val), ("test", self.test)):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} fraction {v} outside [0, 1]")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ConfigError(
                f"fractions sum to {self.train + self.val + self.test}, expected 1")
        if self.folds < 1:
            raise ConfigError("folds must be >= 1")


@dataclass(frozen=True)
class FoldAssignment:
    train: tuple
    val: tuple
    test: tuple


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    seed: int

    def __len__(self) -> int:
        return len(self.folds)


def _fraction_sizes(n: int, fractions) -> list[int]:
    raw = [f * n for f in fractions]
    sizes = [int(np.floor(x)) for x in raw]
    short = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:short]:
        sizes[i] += 1
    return sizes


def plan_splits(n: int, spec: SplitSpec) -> FoldPlan:
    """Deterministic patient-level role assignment.

    folds == 1: one split using the fractions (largest-remainder rounding).
    folds == M >= 2: the shuffled indices are cut into M near-equal chunks;
    fold f tests on chunk f, validates on chunk (f+1) mod M, trains on the
    rest, so five folds give the 6:2:2 rotation.
    """
    if n < spec.folds:
        raise ConfigError(f"cannot build {spec.folds} folds from {n} patients")
    if spec.folds == 1 and n < 3:
        raise ConfigError("need at least 3 patients for a 3-way split")
    if spec.folds == 2:
        raise ConfigError(
            "2 folds leave no training chunk in the test/val rotation")
    perm = [int(i) for i in np.random.default_rng(spec.seed).permutation(n)]
    if spec.folds == 1:
        n_train, n_val, n_test = _fraction_sizes(n, (spec.train, spec.val, spec.test))
        folds = (FoldAssignment(
            train=tuple(perm[:n_train]),
            val=tuple(perm[n_train:n_train + n_val]),
            test=tuple(perm[n_train + n_val:]),
        ),)
        return FoldPlan(folds=folds, seed=spec.seed)
    m = spec.folds
    chunks = []
    start = 0
    for f in range(m):
        size = n // m + (1 if f < n % m else 0)
        chunks.append(perm[start:start + size])
        start += size
    folds = []
    for f in range(m):
        test = chunks[f]
        val = chunks[(f + 1) % m]
        train = [i for c in range(m) if c not in (f, (f + 1) % m) for i in chunks[c]]
        folds.append(FoldAssignment(train=tuple(train), val=tuple(val), test=tuple(test)))
    return FoldPlan(folds=tuple(folds), seed=spec.seed)
