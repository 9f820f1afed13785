"""
Données de saillance: dossiers image/masque, génération synthétique,
augmentation et découpage en batchs
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter, zoom

from ..core.exceptions import ConfigurationError, DataError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png', '.ppm', '.pgm', '.jpg', '.jpeg', '.bmp')
SUPERSAMPLE = 4
FOREGROUND_RANGE = (0.02, 0.6)

SeedLike = Union[int, np.random.Generator, None]


def _generator(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


@dataclass
class SaliencySample:
    """Image [3, H, W] dans [0, 1] et masque binaire [1, H, W]"""
    name: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.mask.ndim == 2:
            self.mask = self.mask[None]
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"{self.name}: image [3, H, W] attendue, reçu {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise DataError(f"{self.name}: masque {self.mask.shape} incompatible avec l'image {self.image.shape}")
        if not np.all((self.mask == 0) | (self.mask == 1)):
            raise DataError(f"{self.name}: le masque doit être binaire")

    @property
    def size(self) -> Tuple[int, int]:
        return self.image.shape[1], self.image.shape[2]

    def foreground_fraction(self) -> float:
        return float(self.mask.mean())


# =====================================
# DOSSIERS
# =====================================

def _decode(path: Path, mode: str, size: Optional[Tuple[int, int]]) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img = img.convert(mode)
            if size is not None and img.size != (size[1], size[0]):
                img = img.resize((size[1], size[0]), Image.BILINEAR)
            return np.asarray(img, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"Fichier illisible: {path} ({e})") from e


def _index(directory: Path) -> dict:
    return {
        p.stem: p for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    }


def load_folder(
    images_dir: str,
    masks_dir: str,
    size: Optional[Tuple[int, int]] = None,
    skipped: Optional[List[str]] = None,
) -> List[SaliencySample]:
    """
    Charge les paires image/masque partageant le même nom de fichier

    Args:
        images_dir: Dossier des images (PNG, PPM, ...)
        masks_dir: Dossier des masques (niveaux de gris, binarisés à 0.5)
        size: Redimensionnement optionnel (H, W)
        skipped: Liste recevant les noms sans correspondance

    Returns:
        Échantillons triés par nom
    """
    images_path, masks_path = Path(images_dir), Path(masks_dir)
    for directory in (images_path, masks_path):
        if not directory.is_dir():
            raise FileNotFoundError(f"Dossier introuvable: {directory}")

    images, masks = _index(images_path), _index(masks_path)
    orphans = sorted(set(images) ^ set(masks))
    for stem in orphans:
        logger.warning(f"Paire incomplète ignorée: {stem}")
    if skipped is not None:
        skipped.extend(orphans)

    samples = []
    for stem in sorted(set(images) & set(masks)):
        image = _decode(images[stem], 'RGB', size).transpose(2, 0, 1)
        mask = (_decode(masks[stem], 'L', (image.shape[1], image.shape[2])) >= 0.5).astype(np.float64)
        samples.append(SaliencySample(stem, image, mask))

    logger.info(f"{len(samples)} échantillons chargés depuis {images_path} ({len(orphans)} ignorés)")
    return samples


# =====================================
# DONNÉES SYNTHÉTIQUES
# =====================================

def _coverage(shape: str, params: dict, size: int) -> np.ndarray:
    """Couverture anti-crénelée [size, size] d'une forme (sur-échantillonnage)"""
    fine = size * SUPERSAMPLE
    coords = (np.arange(fine) + 0.5) / SUPERSAMPLE
    y, x = np.meshgrid(coords, coords, indexing='ij')
    cy, cx, theta = params['cy'], params['cx'], params['theta']
    u = (x - cx) * np.cos(theta) + (y - cy) * np.sin(theta)
    v = -(x - cx) * np.sin(theta) + (y - cy) * np.cos(theta)

    if shape == 'ellipse':
        inside = (u / params['a']) ** 2 + (v / params['b']) ** 2 <= 1.0
    elif shape == 'rectangle':
        inside = (np.abs(u) <= params['a']) & (np.abs(v) <= params['b'])
    else:
        (x0, y0), (x1, y1), (x2, y2) = params['vertices']
        d0 = (x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)
        d1 = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        d2 = (x0 - x2) * (y - y2) - (y0 - y2) * (x - x2)
        inside = ((d0 >= 0) & (d1 >= 0) & (d2 >= 0)) | ((d0 <= 0) & (d1 <= 0) & (d2 <= 0))

    return inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def _random_shape(rng: np.random.Generator, size: int) -> Tuple[str, dict]:
    shape = ('ellipse', 'rectangle', 'triangle')[rng.integers(3)]
    params = {
        'cy': rng.uniform(0.25, 0.75) * size,
        'cx': rng.uniform(0.25, 0.75) * size,
        'theta': rng.uniform(0, np.pi),
        'a': rng.uniform(0.08, 0.25) * size,
        'b': rng.uniform(0.08, 0.25) * size,
    }
    if shape == 'triangle':
        radius = rng.uniform(0.12, 0.3) * size
        angles = np.sort(rng.uniform(0, 2 * np.pi, size=3))
        params['vertices'] = [
            (params['cx'] + radius * np.cos(t), params['cy'] + radius * np.sin(t)) for t in angles
        ]
    return shape, params


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    base = rng.uniform(0.1, 0.9, size=3)
    noise = gaussian_filter(rng.normal(size=(3, size, size)), sigma=(0, 2, 2))
    noise /= max(np.abs(noise).max(), 1e-12)
    ramp = np.linspace(-0.1, 0.1, size)[None, None, :] * rng.choice([-1, 1])
    return np.clip(base[:, None, None] + 0.15 * noise + ramp, 0.0, 1.0)


def synth_sample(rng: np.random.Generator, size: int, name: str = "synth") -> SaliencySample:
    """Une image: 1 à 3 formes colorées sur un fond texturé"""
    background = _background(rng, size)
    mean_color = background.mean(axis=(1, 2))

    for _ in range(100):
        count = int(rng.integers(1, 4))
        coverages = [_coverage(*_random_shape(rng, size), size) for _ in range(count)]
        mask = np.zeros((size, size), dtype=bool)
        for coverage in coverages:
            mask |= coverage >= 0.5
        if FOREGROUND_RANGE[0] < mask.mean() < FOREGROUND_RANGE[1]:
            break
    else:
        raise DataError(f"Impossible de générer une forme valide pour {name}")

    image = background.copy()
    for coverage in coverages:
        color = rng.uniform(0, 1, size=3)
        while np.linalg.norm(color - mean_color) < 0.4:
            color = rng.uniform(0, 1, size=3)
        image = image * (1 - coverage) + color[:, None, None] * coverage

    return SaliencySample(name, np.clip(image, 0.0, 1.0), mask.astype(np.float64))


def synth_dataset(n: int, size: int, seed: int = 0) -> List[SaliencySample]:
    """
    Génère n échantillons déterministes pour une graine donnée

    Chaque échantillon a son propre générateur issu de SeedSequence(seed).spawn.
    """
    if n < 1:
        raise ConfigurationError(f"Nombre d'échantillons invalide: {n}")
    if size < 32:
        raise ConfigurationError(f"Taille minimale 32, reçu {size}")
    children = np.random.SeedSequence(seed).spawn(n)
    samples = [synth_sample(np.random.default_rng(child), size, f"synth_{i:05d}") for i, child in enumerate(children)]
    logger.info(f"{n} échantillons synthétiques générés ({size}x{size}, graine {seed})")
    return samples


# =====================================
# AUGMENTATION
# =====================================

def resize_sample(sample: SaliencySample, size: Tuple[int, int]) -> SaliencySample:
    """Redimensionne image (bilinéaire) et masque (plus proche puis binarisé)"""
    h, w = sample.size
    if (h, w) == tuple(size):
        return sample
    factors = (size[0] / h, size[1] / w)
    image = np.clip(zoom(sample.image, (1,) + factors, order=1), 0.0, 1.0)
    mask = (zoom(sample.mask, (1,) + factors, order=0) >= 0.5).astype(np.float64)
    return SaliencySample(sample.name, image, mask)


def augment(
    sample: SaliencySample,
    seed: SeedLike = None,
    flip: Optional[bool] = None,
    crop: Optional[Tuple[int, int, int, int]] = None,
    crop_range: Tuple[float, float] = (0.8, 1.0),
) -> SaliencySample:
    """
    Retournement horizontal (p = 0.5) puis recadrage aléatoire redimensionné

    Args:
        sample: Échantillon source
        seed: Graine ou générateur
        flip: Force le retournement (None: tirage)
        crop: Force le recadrage (haut, gauche, hauteur, largeur)
        crop_range: Fraction de chaque dimension conservée
    """
    rng = _generator(seed)
    h, w = sample.size
    if flip is None:
        flip = bool(rng.random() < 0.5)
    if crop is None:
        ch = int(round(h * rng.uniform(*crop_range)))
        cw = int(round(w * rng.uniform(*crop_range)))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        crop = (top, left, ch, cw)

    top, left, ch, cw = crop
    if not (0 <= top and 0 <= left and ch >= 1 and cw >= 1 and top + ch <= h and left + cw <= w):
        raise ConfigurationError(f"Recadrage {crop} hors de l'image {h}x{w}")
    if not flip and crop == (0, 0, h, w):
        return sample

    image, mask = sample.image, sample.mask
    if flip:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    image = image[:, top:top + ch, left:left + cw]
    mask = mask[:, top:top + ch, left:left + cw]
    cropped = SaliencySample(sample.name, np.ascontiguousarray(image), np.ascontiguousarray(mask))
    return resize_sample(cropped, (h, w))


# =====================================
# BATCHS ET DÉCOUPAGE
# =====================================

def stack(samples: Sequence[SaliencySample]) -> Tuple[np.ndarray, np.ndarray]:
    """Empile en (images [N, 3, H, W], masques [N, 1, H, W])"""
    if not samples:
        raise DataError("Aucun échantillon à empiler")
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


def iterate_batches(
    samples: Sequence[SaliencySample],
    batch_size: int,
    seed: SeedLike = None,
    shuffle: bool = True,
    augmentation: bool = False,
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Parcourt le jeu de données par batchs (dernier batch éventuellement incomplet)"""
    if batch_size < 1:
        raise ConfigurationError(f"Taille de batch invalide: {batch_size}")
    rng = _generator(seed)
    order = rng.permutation(len(samples)) if shuffle else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        batch = [samples[i] for i in order[start:start + batch_size]]
        if augmentation:
            batch = [augment(s, rng) for s in batch]
        yield stack(batch)


def split_dataset(
    samples: Sequence[SaliencySample],
    holdout: float = 0.2,
    seed: int = 0,
) -> Tuple[List[SaliencySample], List[SaliencySample]]:
    """Découpage déterministe (entraînement, validation)"""
    if not 0 <= holdout < 1:
        raise ConfigurationError(f"Fraction de validation hors de [0, 1): {holdout}")
    order = np.random.default_rng(seed).permutation(len(samples))
    count = int(round(len(samples) * holdout))
    held = sorted(order[:count])
    kept = sorted(order[count:])
    return [samples[i] for i in kept], [samples[i] for i in held]
