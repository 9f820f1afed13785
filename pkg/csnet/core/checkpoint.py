"""
Format de checkpoint: conteneur binaire plat little-endian + manifeste JSON
Le manifeste associe chaque nom à sa forme, son dtype et son offset
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from .exceptions import ConfigurationError, DataError

logger = logging.getLogger(__name__)

FORMAT_NAME = "csnet-checkpoint"
FORMAT_VERSION = 1
DTYPE = "<f8"


def checkpoint_paths(path: str) -> Tuple[Path, Path]:
    """Retourne (fichier binaire, manifeste) pour un chemin sans extension"""
    base = Path(path)
    if base.suffix in ('.bin', '.json'):
        base = base.with_suffix('')
    return base.with_suffix('.bin'), base.with_suffix('.json')


def save_checkpoint(path: str, state: Mapping[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Écrit les tableaux nommés dans l'ordre d'insertion

    Args:
        path: Chemin de base (les extensions .bin et .json sont ajoutées)
        state: Tableaux nommés (paramètres et statistiques)
        metadata: Informations libres (configuration, structure du modèle)

    Returns:
        Chemin du manifeste
    """
    bin_path, manifest_path = checkpoint_paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)

    entries: Dict[str, Dict[str, Any]] = {}
    offset = 0
    with open(bin_path, 'wb') as f:
        for name, array in state.items():
            data = np.ascontiguousarray(array, dtype=DTYPE)
            raw = data.tobytes()
            entries[name] = {
                'shape': list(data.shape),
                'dtype': DTYPE,
                'offset': offset,
                'nbytes': len(raw),
            }
            f.write(raw)
            offset += len(raw)

    manifest = {
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'byteorder': 'little',
        'binary': bin_path.name,
        'tensors': entries,
        'metadata': metadata or {},
    }
    with open(manifest_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=False)

    logger.info(f"Checkpoint écrit: {bin_path} ({len(entries)} tableaux, {offset} octets)")
    return manifest_path


def load_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Relit un checkpoint écrit par save_checkpoint

    Returns:
        (tableaux nommés, métadonnées)
    """
    bin_path, manifest_path = checkpoint_paths(path)
    if not manifest_path.exists() or not bin_path.exists():
        raise FileNotFoundError(f"Checkpoint introuvable: {manifest_path}")

    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)
    if manifest.get('format') != FORMAT_NAME:
        raise ConfigurationError(f"Format de checkpoint inconnu: {manifest.get('format')}")

    raw = bin_path.read_bytes()
    state: Dict[str, np.ndarray] = {}
    for name, entry in manifest['tensors'].items():
        start, size = entry['offset'], entry['nbytes']
        if start + size > len(raw):
            raise DataError(f"Checkpoint tronqué au tableau {name}")
        array = np.frombuffer(raw[start:start + size], dtype=entry['dtype'])
        state[name] = array.reshape(entry['shape']).astype(np.float64)
    return state, manifest.get('metadata', {})
