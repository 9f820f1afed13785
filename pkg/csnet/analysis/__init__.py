"""
Analyse de complexité: paramètres, MACs, balayages
"""

from .complexity import (
    OpCost, ComplexityItem, ComplexityReport, SweepTable,
    count_params, count_flops, analyze, measure_ops, sweep,
    conv_macs, goctconv_cost, format_table, to_flops,
)

__all__ = [
    'OpCost', 'ComplexityItem', 'ComplexityReport', 'SweepTable',
    'count_params', 'count_flops', 'analyze', 'measure_ops', 'sweep',
    'conv_macs', 'goctconv_cost', 'format_table', 'to_flops',
]
