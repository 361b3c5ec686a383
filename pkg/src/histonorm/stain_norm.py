"""Macenko stain separation and normalization.

The template parameters (stain basis plus robust maximum concentrations)
are fitted on a reference image; :func:`normalize` re-expresses any other
image in the template's stain colors.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .color_math import DEFAULT_OPTICS, OpticsConfig, check_rgb, od_to_rgb, rgb_to_od
from .errors import BadTemplateFile, DegenerateStains, InsufficientTissue

MIN_STAIN_ANGLE_DEG = 1.0


@dataclass(frozen=True)
class EstimationConfig:
    od_threshold_beta: float = 0.15
    angle_percentile_alpha: float = 1.0
    concentration_percentile: float = 99.0
    min_tissue_pixels: int = 100

    def __post_init__(self):
        if not self.od_threshold_beta > 0:
            raise ValueError("od_threshold_beta must be > 0")
        if not 0 < self.angle_percentile_alpha < 50:
            raise ValueError("angle_percentile_alpha must be in (0, 50)")
        if not 50 < self.concentration_percentile <= 100:
            raise ValueError("concentration_percentile must be in (50, 100]")
        if self.min_tissue_pixels < 1:
            raise ValueError("min_tissue_pixels must be >= 1")


DEFAULT_ESTIMATION = EstimationConfig()


@dataclass(frozen=True)
class StainBasis:
    """Unit OD directions of hematoxylin and eosin.

    The hematoxylin vector is the one with the larger red component.
    """

    h_vector: np.ndarray
    e_vector: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h_vector, dtype=np.float64).reshape(3)
        e = np.asarray(self.e_vector, dtype=np.float64).reshape(3)
        h.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "h_vector", h)
        object.__setattr__(self, "e_vector", e)

    @classmethod
    def from_vectors(cls, v1, v2) -> "StainBasis":
        """Clip, normalize and order two raw stain directions."""
        vecs = []
        for v in (v1, v2):
            v = np.clip(np.asarray(v, dtype=np.float64), 0.0, None)
            norm = np.linalg.norm(v)
            if not norm > 0:
                raise DegenerateStains("stain vector has no positive component")
            vecs.append(v / norm)
        v1, v2 = vecs
        if angle_between(v1, v2) <= MIN_STAIN_ANGLE_DEG:
            raise DegenerateStains("stain vectors are (nearly) collinear")
        if v1[0] == v2[0]:
            raise DegenerateStains("cannot tell hematoxylin from eosin: equal red OD")
        return cls(v1, v2) if v1[0] > v2[0] else cls(v2, v1)

    @property
    def matrix(self) -> np.ndarray:
        """3x2 matrix with columns (h, e)."""
        return np.stack([self.h_vector, self.e_vector], axis=1)

    def __eq__(self, other):
        if not isinstance(other, StainBasis):
            return NotImplemented
        return np.array_equal(self.h_vector, other.h_vector) and np.array_equal(
            self.e_vector, other.e_vector
        )

    __hash__ = None


@dataclass(frozen=True)
class TemplateParams:
    basis: StainBasis
    max_concentrations: np.ndarray
    optics: OpticsConfig = DEFAULT_OPTICS
    estimation: EstimationConfig = field(default=DEFAULT_ESTIMATION)

    def __post_init__(self):
        cmax = np.asarray(self.max_concentrations, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(cmax)) and np.all(cmax > 0)):
            raise ValueError(f"max_concentrations must be finite and > 0, got {cmax}")
        cmax.setflags(write=False)
        object.__setattr__(self, "max_concentrations", cmax)

    def __eq__(self, other):
        if not isinstance(other, TemplateParams):
            return NotImplemented
        return (
            self.basis == other.basis
            and np.array_equal(self.max_concentrations, other.max_concentrations)
            and self.optics == other.optics
            and self.estimation == other.estimation
        )

    __hash__ = None


def angle_between(u, v) -> float:
    """Angle in degrees between two 3-vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
    return math.degrees(math.acos(min(1.0, max(-1.0, float(cos)))))


def percentile_nearest_rank(values: np.ndarray, pct: float, axis: int = 0) -> np.ndarray:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest sample."""
    values = np.asarray(values)
    n = values.shape[axis]
    if n == 0:
        raise ValueError("percentile of empty sample")
    k = min(max(math.ceil(pct * n / 100.0) - 1, 0), n - 1)
    return np.take(np.partition(values, k, axis=axis), k, axis=axis)


def _tissue_od(image, cfg: EstimationConfig, optics: OpticsConfig):
    od = rgb_to_od(image, optics).reshape(-1, 3)
    mask = np.all(od > cfg.od_threshold_beta, axis=1)
    return od, mask


def _basis_from_tissue(tissue: np.ndarray, cfg: EstimationConfig) -> StainBasis:
    if tissue.shape[0] < cfg.min_tissue_pixels:
        raise InsufficientTissue(
            f"{tissue.shape[0]} tissue pixels above OD {cfg.od_threshold_beta}, "
            f"need {cfg.min_tissue_pixels}"
        )
    evals, evecs = np.linalg.eigh(np.cov(tissue, rowvar=False))
    # eigh sorts ascending
    if not evals[2] > 0 or evals[1] <= 1e-10 * evals[2]:
        raise DegenerateStains("tissue OD pixels span fewer than two directions")
    plane = evecs[:, [2, 1]].copy()
    plane[:, np.sum(plane, axis=0) < 0] *= -1.0

    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo = percentile_nearest_rank(phi, cfg.angle_percentile_alpha)
    hi = percentile_nearest_rank(phi, 100.0 - cfg.angle_percentile_alpha)
    v1 = plane @ np.array([np.cos(lo), np.sin(lo)])
    v2 = plane @ np.array([np.cos(hi), np.sin(hi)])
    return StainBasis.from_vectors(v1, v2)


def estimate_stain_basis(
    image: np.ndarray,
    cfg: EstimationConfig = DEFAULT_ESTIMATION,
    optics: OpticsConfig = DEFAULT_OPTICS,
) -> StainBasis:
    """Estimate the H and E directions of an RGB image (Macenko).

    Pixels are kept when every OD channel exceeds ``cfg.od_threshold_beta``.
    They are projected onto the plane of the two leading eigenvectors of
    their covariance, and the ``alpha`` / ``100 - alpha`` percentile angles in
    that plane give the two stain directions.

    Raises:
        InsufficientTissue: fewer than ``cfg.min_tissue_pixels`` pixels kept.
        DegenerateStains: kept pixels do not span two directions.
    """
    od, mask = _tissue_od(image, cfg, optics)
    return _basis_from_tissue(od[mask], cfg)


def _unmix_matrix(basis: StainBasis) -> np.ndarray:
    return np.linalg.pinv(basis.matrix)


def decompose_od(od: np.ndarray, basis: StainBasis) -> np.ndarray:
    """Least-squares H/E concentrations of OD vectors, negatives clipped to 0.

    Works on any array whose last axis is 3. Written elementwise so that the
    result for a pixel does not depend on how many pixels are processed
    together.
    """
    p = _unmix_matrix(basis)
    od = np.asarray(od, dtype=np.float64)
    r, g, b = od[..., 0], od[..., 1], od[..., 2]
    out = np.empty(od.shape[:-1] + (2,), dtype=np.float64)
    for s in range(2):
        c = r * p[s, 0]
        c += g * p[s, 1]
        c += b * p[s, 2]
        out[..., s] = np.maximum(c, 0.0)
    return out


def compose_od(conc: np.ndarray, basis: StainBasis) -> np.ndarray:
    """OD = c_H * h + c_E * e for every pixel (last axis of ``conc`` is 2)."""
    conc = np.asarray(conc, dtype=np.float64)
    ch, ce = conc[..., 0], conc[..., 1]
    out = np.empty(conc.shape[:-1] + (3,), dtype=np.float64)
    for k in range(3):
        v = ch * basis.h_vector[k]
        v += ce * basis.e_vector[k]
        out[..., k] = v
    return out


def estimate_concentrations(
    image: np.ndarray, basis: StainBasis, optics: OpticsConfig = DEFAULT_OPTICS
) -> np.ndarray:
    """Per-pixel (H, E) concentrations, shape ``(height, width, 2)``."""
    return decompose_od(rgb_to_od(image, optics), basis)


def _robust_max(conc: np.ndarray, mask: np.ndarray, pct: float) -> np.ndarray:
    return percentile_nearest_rank(conc.reshape(-1, 2)[mask], pct, axis=0)


def fit_template(
    image: np.ndarray,
    cfg: EstimationConfig = DEFAULT_ESTIMATION,
    optics: OpticsConfig = DEFAULT_OPTICS,
) -> TemplateParams:
    """Extract stain basis and robust max concentrations from a template."""
    check_rgb(image)
    od, mask = _tissue_od(image, cfg, optics)
    basis = _basis_from_tissue(od[mask], cfg)
    conc = decompose_od(od, basis)
    cmax = _robust_max(conc, mask, cfg.concentration_percentile)
    if not np.all(cmax > 0):
        raise DegenerateStains(f"robust max concentration is zero: {cmax}")
    return TemplateParams(basis, cmax, optics, cfg)


def normalize(
    image: np.ndarray,
    template: TemplateParams,
    cfg: EstimationConfig | None = None,
) -> np.ndarray:
    """Map ``image`` onto the stain appearance of ``template``.

    The image's own template is estimated with ``cfg`` (defaults to the
    configuration the template was fitted with), its concentrations are
    rescaled per stain to the template maxima, and the result is rebuilt
    with the template basis.
    """
    if cfg is None:
        cfg = template.estimation
    source = fit_template(image, cfg, template.optics)
    return transfer_pixels(image, source, template)


def transfer_pixels(
    image: np.ndarray, source: TemplateParams, target: TemplateParams
) -> np.ndarray:
    """Pixel-wise stain transfer between two fixed templates.

    Decompose against ``source.basis``, scale by
    ``target.max_concentrations / source.max_concentrations``, rebuild with
    ``target.basis``. With both templates fixed this is a pure function of
    the pixel value, which is what makes it bakeable into a LUT.
    """
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.shape[-1] != 3:
        raise ValueError(f"expected uint8 array with 3 channels, got {image.dtype} {image.shape}")
    od = rgb_to_od(image.reshape(-1, 1, 3), source.optics)
    conc = decompose_od(od, source.basis)
    scale = target.max_concentrations / source.max_concentrations
    conc[..., 0] *= scale[0]
    conc[..., 1] *= scale[1]
    out = od_to_rgb(compose_od(conc, target.basis), target.optics)
    return out.reshape(image.shape)


# --- template files -------------------------------------------------------

TEMPLATE_FORMAT_VERSION = 1


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_template(template: TemplateParams, path: str | os.PathLike) -> None:
    """Write a template as UTF-8 ``key=value`` lines."""
    lines = [
        f"version={TEMPLATE_FORMAT_VERSION}",
        f"h={_fmt(template.basis.h_vector)}",
        f"e={_fmt(template.basis.e_vector)}",
        f"cmax={_fmt(template.max_concentrations)}",
        f"i0={float(template.optics.i0)!r}",
        f"beta={float(template.estimation.od_threshold_beta)!r}",
        f"alpha={float(template.estimation.angle_percentile_alpha)!r}",
        f"cpct={float(template.estimation.concentration_percentile)!r}",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_template(path: str | os.PathLike) -> TemplateParams:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise BadTemplateFile(f"{path}: {exc}") from exc
    fields = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise BadTemplateFile(f"{path}:{lineno}: expected key=value")
        fields[key.strip()] = value.strip()
    required = ("version", "h", "e", "cmax", "i0", "beta", "alpha", "cpct")
    missing = [k for k in required if k not in fields]
    if missing:
        raise BadTemplateFile(f"{path}: missing keys {missing}")
    if fields["version"] != str(TEMPLATE_FORMAT_VERSION):
        raise BadTemplateFile(f"{path}: unsupported version {fields['version']}")
    try:
        h = [float(x) for x in fields["h"].split()]
        e = [float(x) for x in fields["e"].split()]
        cmax = [float(x) for x in fields["cmax"].split()]
        if len(h) != 3 or len(e) != 3 or len(cmax) != 2:
            raise ValueError("wrong number of components")
        optics = OpticsConfig(i0=float(fields["i0"]))
        est = EstimationConfig(
            od_threshold_beta=float(fields["beta"]),
            angle_percentile_alpha=float(fields["alpha"]),
            concentration_percentile=float(fields["cpct"]),
        )
        return TemplateParams(StainBasis(h, e), cmax, optics, est)
    except ValueError as exc:
        raise BadTemplateFile(f"{path}: {exc}") from exc
