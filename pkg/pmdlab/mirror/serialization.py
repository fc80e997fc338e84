"""
Key-value text format for potentials. Floats are written as hex so a round
trip reproduces every parameter bit for bit.

    format_version = 1.0
    family = piecewise
    size = 100
    knot_span = 0x1.0000000000000p+0
    values = 0x1.2f...p-3 0x1.0a...p-5 ...
"""
import logging
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from pmdlab.errors import ArtifactError
from pmdlab.mirror.potentials import (AugmentedPiecewisePotential, L2Potential, MonotoneNetPotentialInv,
                                      NegEntropyPotential, OmegaPotential, PiecewisePotential)
from pmdlab.models.schemas import FORMAT_VERSION

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("format_version", "family", "size", "values")


def check_format_version(version: str, byte_offset: int = 0) -> None:
    """Accept any 1.x version; refuse other majors."""
    expected_major = FORMAT_VERSION.split(".")[0]
    if str(version).split(".")[0] != expected_major:
        raise ArtifactError(f"unsupported format_version {version!r}, expected {expected_major}.x", byte_offset)


def format_potential(pot: OmegaPotential) -> str:
    params = pot.parameters()
    span = pot.knot_span if isinstance(pot, PiecewisePotential) else 0.0
    lines = [
        f"format_version = {FORMAT_VERSION}",
        f"family = {pot.family}",
        f"size = {params.size}",
        f"knot_span = {float(span).hex()}",
        "values = " + " ".join(float(v).hex() for v in params),
    ]
    return "\n".join(lines) + "\n"


def _split_fields(text: str) -> Dict[str, Tuple[str, int]]:
    """key -> (value, byte offset of its line)."""
    fields: Dict[str, Tuple[str, int]] = {}
    offset = 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            key, sep, value = stripped.partition("=")
            if not sep:
                raise ArtifactError(f"expected 'key = value', got {stripped[:40]!r}", offset)
            fields[key.strip()] = (value.strip(), offset)
        offset += len(line.encode("utf-8"))
    return fields


def parse_potential(text: str) -> OmegaPotential:
    fields = _split_fields(text)
    end = len(text.encode("utf-8"))
    for key in REQUIRED_KEYS:
        if key not in fields:
            raise ArtifactError(f"potential file is missing {key!r}", end)

    version, version_at = fields["format_version"]
    check_format_version(version, version_at)

    raw_values, values_at = fields["values"]
    try:
        values = np.array([float.fromhex(tok) for tok in raw_values.split()], dtype=np.float64)
    except ValueError as e:
        raise ArtifactError(f"bad float in values: {e}", values_at) from e
    size_text, size_at = fields["size"]
    if not size_text.isdigit() or int(size_text) != values.size:
        raise ArtifactError(f"size {size_text} does not match {values.size} values (truncated file?)", size_at)

    family, family_at = fields["family"]
    try:
        if family == "negentropy":
            return NegEntropyPotential()
        if family == "l2":
            return L2Potential()
        if family == "piecewise":
            return PiecewisePotential(values)
        if family == "augmented_piecewise":
            return AugmentedPiecewisePotential(values)
        if family == "neural":
            return MonotoneNetPotentialInv(values)
    except ValueError as e:
        raise ArtifactError(f"invalid {family} parameters: {e}", values_at) from e
    raise ArtifactError(f"unknown potential family {family!r}", family_at)


def dump_potential(pot: OmegaPotential, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_potential(pot), encoding="utf-8")
    logger.debug("Wrote %s potential to %s", pot.family, path)
    return path


def load_potential(path: Union[str, Path]) -> OmegaPotential:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ArtifactError(f"potential file not found: {path}") from e
    except UnicodeDecodeError as e:
        raise ArtifactError(f"potential file {path} is not UTF-8 text", e.start) from e
    return parse_potential(text)
