from typing import Tuple
import logging
import threading

from cachetools import LRUCache
import torch

logger = logging.getLogger(__name__)


class RayCache:
    """LRU cache of camera-frame pixel ray grids"""

    def __init__(self, maxsize: int = 64):
        self._cache: LRUCache = LRUCache(maxsize=maxsize)
        self._lock = threading.Lock()

    def pixel_rays(
        self,
        fx: float,
        fy: float,
        cx: float,
        cy: float,
        width: int,
        height: int,
        dtype: torch.dtype = torch.float32,
        device: str = 'cpu'
    ) -> torch.Tensor:
        """Unnormalized camera-frame rays (x, y, 1) through pixel centers, (H, W, 3)"""
        key: Tuple = (fx, fy, cx, cy, width, height, dtype, str(device))
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached

        v, u = torch.meshgrid(
            torch.arange(height, dtype=dtype, device=device),
            torch.arange(width, dtype=dtype, device=device),
            indexing='ij'
        )
        rays = torch.stack([(u - cx) / fx, (v - cy) / fy, torch.ones_like(u)], dim=-1)

        with self._lock:
            self._cache[key] = rays
        return rays

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()


ray_cache = RayCache()

__all__ = ['RayCache', 'ray_cache']
