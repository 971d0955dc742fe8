from typing import Union
import logging

import numpy as np
import torch

from splat_graph.core.errors import ValidationError

logger = logging.getLogger(__name__)

ArrayLike = Union[torch.Tensor, np.ndarray]


class Validator:
    @staticmethod
    def finite(value: ArrayLike, name: str) -> ArrayLike:
        """Reject NaN and infinities"""
        ok = bool(torch.isfinite(value).all()) if isinstance(value, torch.Tensor) \
            else bool(np.isfinite(value).all())
        if not ok:
            raise ValidationError(f"{name} contains non-finite values", field=name)
        return value

    @staticmethod
    def last_dim(value: ArrayLike, size: int, name: str) -> ArrayLike:
        """Check trailing dimension"""
        if value.shape[-1] != size:
            raise ValidationError(
                f"{name} must have trailing dimension {size}, got shape {tuple(value.shape)}",
                field=name
            )
        return value

    @staticmethod
    def same_length(a: int, b: int, name: str) -> None:
        if a != b:
            raise ValidationError(f"{name}: length mismatch {a} != {b}", field=name)


validator = Validator()

__all__ = ['Validator', 'validator']
