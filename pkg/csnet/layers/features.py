"""
Caractéristiques multi-échelles: cartes de même batch à des résolutions
dérivées d'une résolution de référence commune par des puissances de deux
"""

from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple

from ..core.exceptions import ConfigurationError
from ..core.tensor import Tensor


def is_power_of_two(value: int) -> bool:
    return value >= 1 and (value & (value - 1)) == 0


class MultiScaleFeature:
    """
    Ensemble ordonné (facteur d'échelle, tenseur [N, C_s, H/s, W/s])

    Invariants: facteurs strictement croissants, batch partagé, taille
    spatiale exactement (H/s, W/s) pour la référence (H, W).
    """

    def __init__(self, entries: Iterable[Tuple[int, Tensor]], reference_size: Optional[Tuple[int, int]] = None):
        self._entries: List[Tuple[int, Tensor]] = [(int(s), t) for s, t in entries]
        if not self._entries:
            raise ConfigurationError("MultiScaleFeature sans aucune échelle")

        scales = [s for s, _ in self._entries]
        if any(not is_power_of_two(s) for s in scales):
            raise ConfigurationError(f"Facteurs d'échelle non puissances de deux: {scales}")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ConfigurationError(f"Facteurs d'échelle non strictement croissants: {scales}")

        first_scale, first = self._entries[0]
        if reference_size is None:
            reference_size = (first.shape[2] * first_scale, first.shape[3] * first_scale)
        self.reference_size: Tuple[int, int] = (int(reference_size[0]), int(reference_size[1]))

        ref_h, ref_w = self.reference_size
        for scale, tensor in self._entries:
            if tensor.ndim != 4:
                raise ConfigurationError(f"Échelle {scale}: tenseur 4D attendu, reçu {tensor.shape}")
            if tensor.shape[0] != first.shape[0]:
                raise ConfigurationError("Toutes les échelles doivent partager la taille de batch")
            if ref_h % scale or ref_w % scale or tensor.shape[2:] != (ref_h // scale, ref_w // scale):
                raise ConfigurationError(
                    f"Échelle {scale}: taille {tensor.shape[2:]} incompatible avec la référence {self.reference_size}"
                )

    @property
    def scales(self) -> List[int]:
        return [s for s, _ in self._entries]

    @property
    def batch_size(self) -> int:
        return self._entries[0][1].shape[0]

    def items(self) -> List[Tuple[int, Tensor]]:
        return list(self._entries)

    def get(self, scale: int) -> Optional[Tensor]:
        for s, tensor in self._entries:
            if s == scale:
                return tensor
        return None

    def __getitem__(self, scale: int) -> Tensor:
        tensor = self.get(scale)
        if tensor is None:
            raise ConfigurationError(f"Échelle {scale} absente (échelles: {self.scales})")
        return tensor

    def __contains__(self, scale: int) -> bool:
        return self.get(scale) is not None

    def __iter__(self) -> Iterator[Tuple[int, Tensor]]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def channels(self, scale: int) -> int:
        tensor = self.get(scale)
        return 0 if tensor is None else tensor.shape[1]

    def channel_map(self) -> Dict[int, int]:
        return {s: t.shape[1] for s, t in self._entries}

    def map(
        self,
        fn: Callable[[int, Tensor], Tensor],
        reference_size: Optional[Tuple[int, int]] = None,
    ) -> "MultiScaleFeature":
        """Applique fn à chaque échelle"""
        return MultiScaleFeature([(s, fn(s, t)) for s, t in self._entries], reference_size or self.reference_size)

    def __repr__(self) -> str:
        parts = ", ".join(f"{s}:{t.shape[1]}" for s, t in self._entries)
        return f"MultiScaleFeature(ref={self.reference_size}, channels={{{parts}}})"
