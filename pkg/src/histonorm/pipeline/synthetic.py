"""Procedural two-stain tissue patches.

Each class is a concentration texture (hematoxylin and eosin amounts per
pixel) pushed through the Beer-Lambert model with a chosen stain basis.
The renderer here is deliberately written from the physics, not from the
decomposition code in :mod:`histonorm.stain_norm`, so it can serve as an
independent oracle for stain estimation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..color_math import DEFAULT_OPTICS, OpticsConfig
from ..stain_norm import StainBasis, TemplateParams, fit_template
from .data import PATCH_SIZE, Dataset

# Common H&E reference directions (columns of the usual Macenko reference matrix).
REFERENCE_BASIS = StainBasis(
    np.array([0.5626, 0.7201, 0.4062]) / np.linalg.norm([0.5626, 0.7201, 0.4062]),
    np.array([0.2159, 0.8012, 0.5581]) / np.linalg.norm([0.2159, 0.8012, 0.5581]),
)

# A differently stained "lab": bluer hematoxylin, more orange eosin.
SHIFTED_BASIS = StainBasis(
    np.array([0.75, 0.60, 0.28]) / np.linalg.norm([0.75, 0.60, 0.28]),
    np.array([0.05, 0.62, 0.78]) / np.linalg.norm([0.05, 0.62, 0.78]),
)


def render_stains(
    conc: np.ndarray,
    basis: StainBasis,
    optics: OpticsConfig = DEFAULT_OPTICS,
    noise_sd: float = 0.0,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Render an ``(H, W, 2)`` concentration field to 8-bit RGB.

    Transmitted intensity per channel is ``i0 * 10 ** -(c_H h + c_E e)``,
    optionally with additive Gaussian noise, rounded half away from zero.
    """
    conc = np.asarray(conc, dtype=np.float64)
    m = np.stack([basis.h_vector, basis.e_vector])  # (2, 3)
    od = np.einsum("...s,sc->...c", conc, m)
    intensity = optics.i0 * 10.0 ** (-od)
    if noise_sd > 0:
        if rng is None:
            raise ValueError("noise requires an rng")
        intensity = intensity + rng.normal(0.0, noise_sd, size=intensity.shape)
    return np.clip(np.floor(intensity + 0.5), 0, 255).astype(np.uint8)


def rotate_toward(v: np.ndarray, angle_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Tilt unit vector ``v`` by ``angle_deg`` in a random direction."""
    u = rng.normal(size=3)
    u -= np.dot(u, v) * v
    u /= np.linalg.norm(u)
    a = np.radians(angle_deg)
    w = np.clip(np.cos(a) * v + np.sin(a) * u, 0.0, None)
    return w / np.linalg.norm(w)


def jitter_basis(basis: StainBasis, max_angle_deg: float, rng: np.random.Generator) -> StainBasis:
    if max_angle_deg <= 0:
        return basis
    h = rotate_toward(basis.h_vector, rng.uniform(0, max_angle_deg), rng)
    e = rotate_toward(basis.e_vector, rng.uniform(0, max_angle_deg), rng)
    return StainBasis.from_vectors(h, e)


# --- textures ---------------------------------------------------------------
# Each returns a (150, 150, 2) float field of (hematoxylin, eosin) amounts.

_YY, _XX = np.mgrid[0:PATCH_SIZE, 0:PATCH_SIZE].astype(np.float64)


def _smooth_noise(rng, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.normal(size=(PATCH_SIZE, PATCH_SIZE)), sigma, mode="wrap")
    return f / (f.std() + 1e-12)


def _blobs(rng, count: int, r_lo: float, r_hi: float, elong: float = 1.0) -> np.ndarray:
    """Sum of soft-edged elliptical blobs, values in [0, 1]."""
    out = np.zeros((PATCH_SIZE, PATCH_SIZE))
    for _ in range(count):
        cy, cx = rng.uniform(0, PATCH_SIZE, size=2)
        r = rng.uniform(r_lo, r_hi)
        ratio = rng.uniform(1.0, elong)
        theta = rng.uniform(0, np.pi)
        pad = int(np.ceil(r * ratio)) + 2
        y0, y1 = max(0, int(cy) - pad), min(PATCH_SIZE, int(cy) + pad + 1)
        x0, x1 = max(0, int(cx) - pad), min(PATCH_SIZE, int(cx) + pad + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        dy = _YY[y0:y1, x0:x1] - cy
        dx = _XX[y0:y1, x0:x1] - cx
        a = dx * np.cos(theta) + dy * np.sin(theta)
        b = -dx * np.sin(theta) + dy * np.cos(theta)
        d = np.sqrt((a / (r * ratio)) ** 2 + (b / r) ** 2)
        out[y0:y1, x0:x1] = np.maximum(out[y0:y1, x0:x1], np.clip((1.2 - d) / 0.4, 0.0, 1.0))
    return out


def texture_background(rng) -> np.ndarray:
    return np.zeros((PATCH_SIZE, PATCH_SIZE, 2))


def texture_nuclei(rng) -> np.ndarray:
    """Large hematoxylin nuclei on a light eosin cytoplasm."""
    blobs = _blobs(rng, rng.integers(22, 34), 6.0, 10.0, elong=1.4)
    h = blobs * rng.uniform(0.9, 1.3) + 0.05
    e = (0.35 + 0.08 * _smooth_noise(rng, 6)) * (1.0 - 0.7 * blobs)
    return np.stack([h, np.clip(e, 0, None)], axis=-1)


def texture_stroma(rng) -> np.ndarray:
    """Eosin fibres (oriented waves) with sparse spindle nuclei."""
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(10.0, 16.0)
    phase = rng.uniform(0, 2 * np.pi)
    warp = 4.0 * _smooth_noise(rng, 10)
    u = _XX * np.cos(theta) + _YY * np.sin(theta) + warp
    waves = 0.5 + 0.5 * np.sin(2 * np.pi * u / period + phase)
    e = 0.25 + 0.75 * waves**2 * rng.uniform(0.9, 1.2)
    h = 0.05 + 0.9 * _blobs(rng, rng.integers(4, 9), 2.0, 3.0, elong=3.5)
    return np.stack([h, e], axis=-1)


def texture_lymphocytes(rng) -> np.ndarray:
    """Densely packed small round hematoxylin nuclei."""
    blobs = _blobs(rng, rng.integers(130, 180), 2.6, 3.6)
    h = 0.05 + blobs * rng.uniform(1.0, 1.3)
    e = 0.12 + 0.04 * _smooth_noise(rng, 8)
    return np.stack([h, np.clip(e, 0, None)], axis=-1)


def texture_debris(rng) -> np.ndarray:
    """Same geometry as :func:`texture_nuclei` but eosin-dominated."""
    blobs = _blobs(rng, rng.integers(22, 34), 6.0, 10.0, elong=1.4)
    e = blobs * rng.uniform(0.9, 1.3) + 0.05
    h = (0.30 + 0.08 * _smooth_noise(rng, 6)) * (1.0 - 0.7 * blobs)
    return np.stack([np.clip(h, 0, None), e], axis=-1)


def texture_fat(rng) -> np.ndarray:
    """Large empty cells bounded by thin eosin membranes."""
    n = rng.integers(5, 10)
    seeds = rng.uniform(-20, PATCH_SIZE + 20, size=(n, 2))
    d = np.sqrt((_YY[..., None] - seeds[:, 0]) ** 2 + (_XX[..., None] - seeds[:, 1]) ** 2)
    d.sort(axis=-1)
    gap = d[..., 1] - d[..., 0]
    membrane = np.clip(1.0 - gap / 2.5, 0.0, 1.0)
    e = 0.6 * membrane
    h = 0.1 * membrane
    return np.stack([h, e], axis=-1)


TEXTURES = {
    "background": texture_background,
    "nuclei": texture_nuclei,
    "stroma": texture_stroma,
    "lymphocytes": texture_lymphocytes,
    "debris": texture_debris,
    "fat": texture_fat,
}

DEFAULT_TEXTURE_ORDER = ("background", "nuclei", "stroma", "lymphocytes", "debris", "fat")


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings.

    ``slides`` splits every class across that many simulated slides. Each
    slide gets its own stain basis (tilted up to ``basis_jitter_deg`` from
    ``stain_basis``) and a staining intensity factor drawn log-uniformly from
    ``[1 / intensity_jitter, intensity_jitter]``.
    """

    classes: int = 3
    patches_per_class: int = 64
    stain_basis: StainBasis = field(default=REFERENCE_BASIS)
    textures: tuple[str, ...] | None = None
    noise_sd: float = 2.0
    seed: int = 0
    slides: int = 1
    basis_jitter_deg: float = 0.0
    intensity_jitter: float = 1.0
    concentration_scale: float = 1.0
    optics: OpticsConfig = DEFAULT_OPTICS

    def texture_names(self) -> tuple[str, ...]:
        names = self.textures if self.textures is not None else DEFAULT_TEXTURE_ORDER[: self.classes]
        if len(names) != self.classes:
            raise ValueError(f"{self.classes} classes but {len(names)} textures")
        unknown = [n for n in names if n not in TEXTURES]
        if unknown:
            raise ValueError(f"unknown textures {unknown}; available: {sorted(TEXTURES)}")
        return tuple(names)


def generate_synthetic_dataset(cfg: SyntheticConfig) -> Dataset:
    """Render ``cfg.patches_per_class`` patches of every texture class."""
    if cfg.classes < 2:
        raise ValueError("need at least 2 classes")
    names = cfg.texture_names()
    rng = np.random.default_rng(cfg.seed)
    slide_bases = []
    slide_scales = []
    for _ in range(cfg.slides):
        slide_bases.append(jitter_basis(cfg.stain_basis, cfg.basis_jitter_deg, rng))
        lj = np.log(max(cfg.intensity_jitter, 1.0))
        slide_scales.append(cfg.concentration_scale * float(np.exp(rng.uniform(-lj, lj))))

    n = cfg.classes * cfg.patches_per_class
    images = np.empty((n, PATCH_SIZE, PATCH_SIZE, 3), dtype=np.uint8)
    labels = np.repeat(np.arange(cfg.classes), cfg.patches_per_class)
    slides = np.tile(np.arange(cfg.patches_per_class) % cfg.slides, cfg.classes)
    for i in range(n):
        conc = TEXTURES[names[labels[i]]](rng) * slide_scales[slides[i]]
        images[i] = render_stains(conc, slide_bases[slides[i]], cfg.optics, cfg.noise_sd, rng)
    return Dataset(images, labels, list(names), slides)


def synthetic_tile(
    layout: np.ndarray,
    textures: tuple[str, ...],
    basis: StainBasis = REFERENCE_BASIS,
    seed: int = 0,
    noise_sd: float = 0.0,
    optics: OpticsConfig = DEFAULT_OPTICS,
) -> np.ndarray:
    """Assemble a large image from 150x150 texture blocks.

    ``layout[i, j]`` is the texture index of block ``(i, j)``.
    """
    rng = np.random.default_rng(seed)
    layout = np.asarray(layout)
    rows, cols = layout.shape
    conc = np.zeros((rows * PATCH_SIZE, cols * PATCH_SIZE, 2))
    for i in range(rows):
        for j in range(cols):
            conc[i * PATCH_SIZE : (i + 1) * PATCH_SIZE, j * PATCH_SIZE : (j + 1) * PATCH_SIZE] = TEXTURES[
                textures[layout[i, j]]
            ](rng)
    return render_stains(conc, basis, optics, noise_sd, rng)


# Test-lab palette for the stain-shift benchmark. Its hematoxylin points
# roughly where the reference eosin does, so raw colors are misleading.
BENCHMARK_TEST_BASIS = StainBasis.from_vectors(np.array([0.30, 0.80, 0.52]), np.array([0.10, 0.55, 0.83]))


@dataclass(frozen=True)
class StainShiftBenchmark:
    """Training and test sets from different labs plus a normalization template."""

    train: Dataset
    test: Dataset
    template: TemplateParams


def _blend_basis(a: StainBasis, b: StainBasis, t: float) -> StainBasis:
    """Move ``t`` of the way from ``a`` to ``b`` (negative ``t`` moves away from ``b``)."""
    return StainBasis.from_vectors(
        (1 - t) * a.h_vector + t * b.h_vector, (1 - t) * a.e_vector + t * b.e_vector
    )


def stain_shift_benchmark(
    seed: int = 0,
    shift: bool = True,
    patches_per_class: int = 128,
    test_per_class: int = 50,
    textures: tuple[str, ...] = DEFAULT_TEXTURE_ORDER,
) -> StainShiftBenchmark:
    """Six-class two-lab benchmark for the train/test normalization grid.

    Training slides come from the reference lab with mild per-slide basis
    and intensity variation. With ``shift`` the test slides come from a lab
    with :data:`BENCHMARK_TEST_BASIS` and 2.2x heavier staining; without it
    they come from the reference lab too. The template is a third look: a
    basis tilted away from the test lab and 20% paler than the reference,
    so that normalized images are new to a model trained on raw ones.
    """
    train = generate_synthetic_dataset(
        SyntheticConfig(
            classes=len(textures),
            patches_per_class=patches_per_class,
            textures=textures,
            seed=seed,
            slides=4,
            basis_jitter_deg=4.0,
            intensity_jitter=1.4,
        )
    )
    test = generate_synthetic_dataset(
        SyntheticConfig(
            classes=len(textures),
            patches_per_class=test_per_class,
            textures=textures,
            seed=seed + 1000,
            slides=2,
            stain_basis=BENCHMARK_TEST_BASIS if shift else REFERENCE_BASIS,
            basis_jitter_deg=3.0,
            intensity_jitter=1.15,
            concentration_scale=2.2 if shift else 1.0,
        )
    )
    template_basis = _blend_basis(REFERENCE_BASIS, BENCHMARK_TEST_BASIS, -0.3)
    tile = synthetic_tile(np.array([[1, 2], [3, 4]]) % len(textures), textures, template_basis, seed + 7, 2.0)
    fitted = fit_template(tile)
    return StainShiftBenchmark(train, test, TemplateParams(template_basis, fitted.max_concentrations * 0.8))
