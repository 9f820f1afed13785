"""
Factory pour créer les critères d'importance de canaux
"""

from typing import Dict, List

from ..exceptions import ConfigurationError
from ..interfaces import ChannelCriterion


class CriterionFactory:
    """
    Factory pour créer les critères d'importance
    Pattern: Factory + Registry
    """

    _registry: Dict[str, type] = {}

    @classmethod
    def register(cls, criterion_type: str, criterion_class: type) -> None:
        """Enregistre un type de critère"""
        cls._registry[criterion_type] = criterion_class

    @classmethod
    def create(cls, criterion_type: str) -> ChannelCriterion:
        """Crée une instance de critère"""
        if criterion_type not in cls._registry:
            raise ConfigurationError(
                f"Critère d'importance inconnu: {criterion_type} (disponibles: {cls.get_available_types()})"
            )
        return cls._registry[criterion_type]()

    @classmethod
    def get_available_types(cls) -> List[str]:
        """Retourne la liste des types disponibles"""
        return list(cls._registry.keys())
