"""
CSNet - Détection d'objets saillants ultra-légère
================================================

Moteur CNN différentiable minimal (numpy, double précision) implémentant
l'opérateur OctConv généralisé, l'architecture CSNet, la décroissance de
poids dynamique et l'élagage de canaux par γ de BatchNorm.

Architecture:
- Core: Tenseurs, autodiff, primitives neuronales, checkpoints
- Layers: gOctConv et couches multi-échelles
- Model: ILBlock, extracteur 4 étages, fusion inter-étages (CSF)
- Optim: Adam + décroissance standard / dynamique, boucle d'entraînement
- Prune: Critères d'importance, reconstruction compacte, pipeline complet
- Analysis: Comptage exact des paramètres et FLOPs
- Data: Jeux de données, augmentation, métriques F-measure / MAE
"""

__version__ = "1.0.0"
__author__ = "Nicolas"
