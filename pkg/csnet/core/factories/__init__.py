"""
Factories pour CSNet
"""

from .criterion_factory import CriterionFactory

__all__ = ['CriterionFactory']
