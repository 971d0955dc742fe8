from typing import Any
from pathlib import Path
import hashlib

import numpy as np
import orjson


def orjson_default(obj: Any) -> Any:
    """Fallback serializer for orjson"""
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, 'tolist'):
        return obj.tolist()
    raise TypeError(f"Type is not JSON serializable: {type(obj).__name__}")


def dump_json(data: Any, path: Path) -> None:
    """Write human-readable JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        orjson.dumps(
            data,
            default=orjson_default,
            option=orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY
        )
    )


def load_json(path: Path) -> Any:
    return orjson.loads(Path(path).read_bytes())


def hash_bytes(data: bytes) -> str:
    """Generate sha256 hex digest"""
    return hashlib.sha256(data).hexdigest()


def deep_update(d: dict, u: dict) -> dict:
    """Deep update dict"""
    for k, v in u.items():
        if isinstance(v, dict):
            d[k] = deep_update(d.get(k, {}) or {}, v)
        else:
            d[k] = v
    return d


def parse_bool(value: Any) -> bool:
    """Parse boolean value"""
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.lower() in ('true', '1', 't', 'y', 'yes')
    return bool(value)


def parse_override_value(raw: str) -> Any:
    """Parse a --set value as JSON, falling back to a plain string"""
    raw = raw.strip()
    if raw.lower() in ('true', 'false'):
        return parse_bool(raw)
    try:
        return orjson.loads(raw)
    except orjson.JSONDecodeError:
        return raw
