"""
Memoisation for quantile computations

Caches are cachetools LRU caches sized from settings; RANKFORGE_CACHE_ENABLED=false
turns memoisation off.
"""
import threading
from typing import Callable, Dict, List

from cachetools import LRUCache, cached

from rankforge import settings

_registry: List[LRUCache] = []


def memoize(maxsize: int = None) -> Callable:
    """
    Decorator caching a pure function of hashable arguments

    Args:
        maxsize: Cache size (defaults to RANKFORGE_CACHE_SIZE)
    """
    def decorator(func: Callable) -> Callable:
        if not settings.CACHE_ENABLED:
            return func
        cache = LRUCache(maxsize=maxsize or settings.MAX_CACHE_SIZE)
        _registry.append(cache)
        wrapped = cached(cache, lock=threading.RLock())(func)
        wrapped.cache = cache
        return wrapped
    return decorator


def cache_stats() -> Dict[str, int]:
    """Number of caches and entries currently held."""
    return {
        "cache_enabled": settings.CACHE_ENABLED,
        "caches": len(_registry),
        "entries": sum(len(c) for c in _registry),
    }


def clear_caches() -> None:
    for cache in _registry:
        cache.clear()
