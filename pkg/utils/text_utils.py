"""
Text utilities for TransNN Lab
Parsing of the initial-condition mini-language and comma-separated number lists
"""

import logging
import re
from typing import List, Optional

import numpy as np

from services.exceptions import ValidationError

logger = logging.getLogger(__name__)

_ALL = re.compile(r'^all\s*=\s*(?P<value>\S+)$')
_NODE = re.compile(r'^node\s*:\s*(?P<index>\d+)\s*=\s*(?P<value>\S+)$')
_RANDOM = re.compile(r'^uniform-random\s*\(\s*(?P<seed>\d*)\s*\)$')


def _split_clauses(spec: str) -> List[str]:
    # commas inside uniform-random(...) never occur, so a flat split is enough
    return [clause.strip() for clause in re.split(r'[;,]', spec) if clause.strip()]


def _unit_value(text: str, clause: str) -> float:
    try:
        value = float(text)
    except ValueError as e:
        raise ValidationError(f"'{text}' is not a number", f"p0-spec '{clause}'") from e
    if not (0.0 <= value <= 1.0):
        raise ValidationError(f"value {value} outside [0, 1]", f"p0-spec '{clause}'")
    return value


def parse_p0_spec(spec: str, n: int, default_seed: Optional[int] = None) -> np.ndarray:
    """
    Build an initial probability vector from a clause list

    Clauses are applied left to right, separated by ',' or ';':
        all=v               every node set to v
        node:i=v            node i (0-based) set to v
        uniform-random(s)   every node drawn from U(0, 1) with seed s
                            (the global seed when s is omitted)

    Args:
        spec: Clause list, e.g. "all=0,node:0=1"
        n: Number of nodes
        default_seed: Seed used by uniform-random()

    Returns:
        Probability vector of length n
    """
    if not spec or not spec.strip():
        raise ValidationError("empty initial-condition spec", "p0-spec")
    p = np.zeros(n)
    for clause in _split_clauses(spec):
        if match := _ALL.match(clause):
            p[:] = _unit_value(match.group("value"), clause)
        elif match := _NODE.match(clause):
            index = int(match.group("index"))
            if index >= n:
                raise ValidationError(f"node {index} out of range for {n} nodes", f"p0-spec '{clause}'")
            p[index] = _unit_value(match.group("value"), clause)
        elif match := _RANDOM.match(clause):
            seed_text = match.group("seed")
            seed = int(seed_text) if seed_text else (default_seed or 0)
            p[:] = np.random.default_rng(seed).uniform(0.0, 1.0, size=n)
        else:
            raise ValidationError("expected all=v, node:i=v or uniform-random(seed)", f"p0-spec '{clause}'")
    logger.debug(f"Parsed p0-spec '{spec}' for {n} nodes")
    return p


def parse_float_list(text: str, name: str = "list") -> List[float]:
    """
    Parse "0.1,0.05,0.025" into floats

    Args:
        text: Comma-separated numbers
        name: Argument name used in error messages

    Returns:
        List of floats
    """
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise ValidationError(f"could not parse '{text}' as numbers", name) from e
    if not values:
        raise ValidationError("no values given", name)
    return values


def parse_int_list(text: str, name: str = "list") -> List[int]:
    values = parse_float_list(text, name)
    if any(v != int(v) for v in values):
        raise ValidationError(f"'{text}' must contain integers", name)
    return [int(v) for v in values]
