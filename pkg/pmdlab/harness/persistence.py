"""
Versioned JSON and CSV artifacts.
"""
import csv
import json
import logging
from pathlib import Path
from typing import List, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from pmdlab.errors import ArtifactError
from pmdlab.mirror.serialization import check_format_version
from pmdlab.models.schemas import PmdRunRecord

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)

RECORD_CSV_COLUMNS = ("iteration", "steps", "value", "q_error", "update_distance", "monotone_bound")


def save_model(model: BaseModel, path: Union[str, Path]) -> Path:
    """Write a pydantic model as indented JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(model.model_dump_json(indent=2))
        f.write("\n")
    logger.debug("Wrote %s to %s", type(model).__name__, path)
    return path


def load_model(path: Union[str, Path], model_type: Type[ModelT]) -> ModelT:
    """Read a JSON artifact back into `model_type`.

    Raises:
        ArtifactError: missing file, malformed JSON (with the byte offset of
            the failure), a different major format version, or fields that
            do not validate.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as e:
        raise ArtifactError(f"artifact not found: {path}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ArtifactError(f"{path} is not UTF-8", e.start) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode("utf-8"))
        raise ArtifactError(f"{path}: {e.msg}", offset) from e
    if not isinstance(data, dict):
        raise ArtifactError(f"{path}: expected a JSON object", 0)
    if "format_version" in data:
        check_format_version(str(data["format_version"]))
    try:
        return model_type.model_validate(data)
    except ValidationError as e:
        raise ArtifactError(f"{path}: invalid {model_type.__name__}: {e.errors()[0]['msg']}") from e


def save_record(record: PmdRunRecord, path: Union[str, Path]) -> Path:
    return save_model(record, path)


def load_record(path: Union[str, Path]) -> PmdRunRecord:
    return load_model(path, PmdRunRecord)


def record_rows(record: PmdRunRecord) -> List[list]:
    return [
        [t, record.steps[t], repr(record.value[t]), repr(record.q_error[t]),
         repr(record.update_distance[t]), repr(record.monotone_bound[t])]
        for t in range(record.num_iterations)
    ]


def write_record_csv(record: PmdRunRecord, path: Union[str, Path]) -> Path:
    """One row per iteration; floats use their shortest round-trip form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RECORD_CSV_COLUMNS)
        writer.writerows(record_rows(record))
    logger.debug("Wrote %d rows to %s", record.num_iterations, path)
    return path


def write_csv(path: Union[str, Path], header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path
