import json
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterable, Iterator, List, Optional, Type, TypeVar, Union

from pydantic import BaseModel

from sqlsynth.core.exceptions import DatabaseIOError, PreconditionError


PathLike = Union[str, Path]
ModelT = TypeVar("ModelT", bound=BaseModel)


def _dump(item: Any) -> str:
    if isinstance(item, BaseModel):
        return item.model_dump_json()
    return json.dumps(item, ensure_ascii=False, sort_keys=True, default=str)


@contextmanager
def atomic_path(path: PathLike) -> Iterator[Path]:
    """Yield a temporary sibling of path and promote it only if the block succeeds"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    temp = target.with_name(f".{target.name}.tmp")
    try:
        yield temp
        os.replace(temp, target)
    finally:
        if temp.exists():
            temp.unlink()


def write_jsonl(path: PathLike, items: Iterable[Any]) -> int:
    """Write one JSON document per line, atomically"""
    count = 0
    with atomic_path(path) as temp:
        with open(temp, "w", encoding="utf-8") as handle:
            for item in items:
                handle.write(_dump(item))
                handle.write("\n")
                count += 1
    return count


def append_jsonl(path: PathLike, item: Any) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(_dump(item))
        handle.write("\n")


def read_jsonl(path: PathLike, model: Optional[Type[ModelT]] = None) -> List[Any]:
    """Read a record-per-line file, validating each line against model when given"""
    path = Path(path)
    if not path.exists():
        raise DatabaseIOError(f"File not found: {path}", path=str(path))
    items = []
    with open(path, "r", encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                items.append(model.model_validate_json(line) if model else json.loads(line))
            except ValueError as e:
                raise PreconditionError(f"{path}:{number}: invalid record: {e}", path=str(path), line=number)
    return items


def write_json(path: PathLike, document: Any) -> Path:
    """Write one pretty-printed JSON document, atomically"""
    with atomic_path(path) as temp:
        if isinstance(document, BaseModel):
            payload = document.model_dump_json(indent=2)
        else:
            payload = json.dumps(document, ensure_ascii=False, indent=2, sort_keys=True, default=str)
        temp.write_text(payload + "\n", encoding="utf-8")
    return Path(path)


def write_text(path: PathLike, content: str) -> Path:
    with atomic_path(path) as temp:
        temp.write_text(content, encoding="utf-8")
    return Path(path)


def read_json(path: PathLike, model: Optional[Type[ModelT]] = None) -> Any:
    path = Path(path)
    if not path.exists():
        raise DatabaseIOError(f"File not found: {path}", path=str(path))
    payload = path.read_text(encoding="utf-8")
    try:
        return model.model_validate_json(payload) if model else json.loads(payload)
    except ValueError as e:
        raise PreconditionError(f"{path}: invalid document: {e}", path=str(path))
