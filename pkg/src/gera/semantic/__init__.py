"""Governed metric definitions: parse, validate, evaluate with lineage."""

from .ast import Aggregation, MetricDefinition
from .evaluate import Evaluator, StaticProvider, eval_pred
from .parser import MetricError, MetricLexError, MetricSyntaxError, MetricTypeError, parse_metric, parse_metrics, tokenize
from .printer import print_expr, print_metric
from .registry import MODEL_BASES, Registry, RegistryError, load_definitions, load_registry, type_check, validate_registry

__all__ = [
    "Aggregation",
    "Evaluator",
    "MODEL_BASES",
    "MetricDefinition",
    "MetricError",
    "MetricLexError",
    "MetricSyntaxError",
    "MetricTypeError",
    "Registry",
    "RegistryError",
    "StaticProvider",
    "eval_pred",
    "load_definitions",
    "load_registry",
    "parse_metric",
    "parse_metrics",
    "print_expr",
    "print_metric",
    "tokenize",
    "type_check",
    "validate_registry",
]
