from splat_graph.utils.validators import validator
from splat_graph.utils.helpers import (
    deep_update,
    dump_json,
    load_json,
    hash_bytes,
    parse_bool,
    parse_override_value
)

__all__ = [
    'validator',
    'deep_update',
    'dump_json',
    'load_json',
    'hash_bytes',
    'parse_bool',
    'parse_override_value'
]
