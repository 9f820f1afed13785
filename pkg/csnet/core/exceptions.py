"""
Hiérarchie d'erreurs de CSNet
Chaque famille correspond à un code de sortie de la ligne de commande
"""


class CSNetError(Exception):
    """Erreur racine du package"""


class ConfigurationError(CSNetError, ValueError):
    """Configuration, forme ou spécification invalide (code de sortie 1)"""


class NumericError(CSNetError, ArithmeticError):
    """Valeur non finie rencontrée en avant ou en arrière (code de sortie 2)"""


class DataError(CSNetError, RuntimeError):
    """Fichier illisible ou jeu de données vide (code de sortie 2)"""
