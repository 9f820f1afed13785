"""
Interfaces de base de CSNet
Pattern: Composite (modules imbriqués) + Strategy (critères d'importance)
"""

from abc import ABC, abstractmethod
from collections import OrderedDict
from typing import Any, Dict, Iterator, List, Mapping, Tuple

import numpy as np

from .exceptions import ConfigurationError
from .tensor import Tensor


# =====================================
# MODULES
# =====================================

class Module(ABC):
    """
    Interface abstraite pour toutes les couches et tous les réseaux

    Les sous-modules affectés comme attributs sont enregistrés
    automatiquement; les paramètres passent par register_parameter.
    """

    def __init__(self):
        object.__setattr__(self, '_parameters', OrderedDict())
        object.__setattr__(self, '_buffers', OrderedDict())
        object.__setattr__(self, '_modules', OrderedDict())
        object.__setattr__(self, 'training', True)

    def __setattr__(self, name: str, value: Any) -> None:
        if isinstance(value, Module):
            self._modules[name] = value
        elif name in self._modules:
            del self._modules[name]
        object.__setattr__(self, name, value)

    def __delattr__(self, name: str) -> None:
        self._modules.pop(name, None)
        self._parameters.pop(name, None)
        self._buffers.pop(name, None)
        object.__delattr__(self, name)

    @abstractmethod
    def forward(self, *args: Any, **kwargs: Any) -> Any:
        """Passe avant du module"""
        pass

    def __call__(self, *args: Any, **kwargs: Any) -> Any:
        return self.forward(*args, **kwargs)

    # ------------------------------------------------------------------
    # Enregistrement
    # ------------------------------------------------------------------

    def register_parameter(self, name: str, tensor: Tensor) -> Tensor:
        """Enregistre un tenseur entraînable"""
        tensor.requires_grad = True
        tensor.name = name
        self._parameters[name] = tensor
        object.__setattr__(self, name, tensor)
        return tensor

    def register_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        """Enregistre un état non entraînable (statistiques courantes)"""
        self._buffers[name] = array
        object.__setattr__(self, name, array)
        return array

    def remove_parameter(self, name: str) -> None:
        if name in self._parameters:
            del self._parameters[name]
            object.__delattr__(self, name)

    # ------------------------------------------------------------------
    # Parcours
    # ------------------------------------------------------------------

    def named_modules(self, prefix: str = '') -> Iterator[Tuple[str, 'Module']]:
        yield prefix, self
        for name, module in self._modules.items():
            yield from module.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Tensor]]:
        for module_name, module in self.named_modules(prefix):
            for name, tensor in module._parameters.items():
                yield (f"{module_name}.{name}" if module_name else name), tensor

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for module_name, module in self.named_modules(prefix):
            for name, array in module._buffers.items():
                yield (f"{module_name}.{name}" if module_name else name), array

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(tensor.size for tensor in self.parameters()))

    # ------------------------------------------------------------------
    # État
    # ------------------------------------------------------------------

    def train(self, mode: bool = True) -> 'Module':
        for _, module in self.named_modules():
            object.__setattr__(module, 'training', mode)
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Paramètres puis statistiques, module par module"""
        state: Dict[str, np.ndarray] = OrderedDict()
        for module_name, module in self.named_modules():
            for name, tensor in module._parameters.items():
                state[f"{module_name}.{name}" if module_name else name] = tensor.data
            for name, array in module._buffers.items():
                state[f"{module_name}.{name}" if module_name else name] = array
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Copie les valeurs en place; noms et formes doivent correspondre exactement"""
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ConfigurationError(f"État incompatible: manquants={missing[:5]}, inattendus={unexpected[:5]}")
        for name, target in own.items():
            source = np.asarray(state[name], dtype=np.float64)
            if source.shape != target.shape:
                raise ConfigurationError(f"{name}: forme {source.shape}, attendu {target.shape}")
            target[...] = source


class ModuleList(Module):
    """Séquence de modules indexée ('0', '1', ...)"""

    def __init__(self, modules: List[Module] = ()):
        super().__init__()
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._modules))] = module

    def __getitem__(self, index: int) -> Module:
        return list(self._modules.values())[index]

    def __setitem__(self, index: int, module: Module) -> None:
        key = list(self._modules.keys())[index]
        self._modules[key] = module

    def __iter__(self) -> Iterator[Module]:
        return iter(list(self._modules.values()))

    def __len__(self) -> int:
        return len(self._modules)

    def forward(self, *args: Any, **kwargs: Any) -> Any:
        raise NotImplementedError("ModuleList n'a pas de passe avant propre")


# =====================================
# CRITÈRES D'IMPORTANCE
# =====================================

class ChannelCriterion(ABC):
    """
    Interface abstraite pour les critères d'importance de canaux
    Pattern: Strategy
    """

    name: str = "abstract"

    @abstractmethod
    def score(self, layer: Any) -> Dict[int, np.ndarray]:
        """
        Calcule un score >= 0 par canal et par échelle

        Args:
            layer: Couche élaguable (BatchNorm multi-échelle et convolutions productrices)

        Returns:
            Scores indexés par facteur d'échelle
        """
        pass
