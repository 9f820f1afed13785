"""
Compteur d'opérations instrumentant la passe avant
Sert à recouper le comptage analytique du module d'analyse
"""

from collections import defaultdict
from contextlib import contextmanager
from typing import Dict, Iterator, List, Mapping

from .exceptions import ConfigurationError

CONV = "conv"
BATCH_NORM = "batch_norm"
PRELU = "prelu"
POOL = "pool"
UPSAMPLE = "upsample"
ADD = "add"

ELEMENTWISE_CATEGORIES = (BATCH_NORM, PRELU, POOL, UPSAMPLE, ADD)
FLOPS_CONVENTIONS = ('macs', '2macs')


def total_flops(
    macs: int,
    elementwise: Mapping[str, int],
    convention: str = 'macs',
    include_elementwise: bool = True,
) -> int:
    """
    Total des opérations d'une passe avant

    Les MACs valent 1 (convention macs) ou 2 (convention 2macs); chaque
    élément produit par une opération élément par élément vaut 1.
    """
    if convention not in FLOPS_CONVENTIONS:
        raise ConfigurationError(f"Convention FLOPs inconnue: {convention}")
    total = 2 * macs if convention == '2macs' else macs
    if include_elementwise:
        total += sum(elementwise.values())
    return int(total)


class OpCounter:
    """Accumule les MACs de convolution et les opérations élément par élément"""

    def __init__(self):
        self.counts: Dict[str, int] = defaultdict(int)

    def add(self, category: str, amount: int) -> None:
        self.counts[category] += int(amount)

    @property
    def macs(self) -> int:
        return self.counts.get(CONV, 0)

    def elementwise(self) -> Dict[str, int]:
        return {name: self.counts.get(name, 0) for name in ELEMENTWISE_CATEGORIES}

    def flops(self, convention: str = 'macs', include_elementwise: bool = True) -> int:
        return total_flops(self.macs, self.elementwise(), convention, include_elementwise)

    def reset(self) -> None:
        self.counts.clear()


_ACTIVE: List[OpCounter] = []


@contextmanager
def count_ops() -> Iterator[OpCounter]:
    """Active un compteur pour toutes les primitives exécutées dans le bloc"""
    counter = OpCounter()
    _ACTIVE.append(counter)
    try:
        yield counter
    finally:
        _ACTIVE.remove(counter)


def record(category: str, amount: int) -> None:
    """Enregistre une opération auprès des compteurs actifs"""
    for counter in _ACTIVE:
        counter.add(category, amount)
