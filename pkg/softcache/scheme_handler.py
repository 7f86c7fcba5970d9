import logging

from typing import Callable, Dict


class SchemeHandler:
    """Registry mapping caching scheme names to the functions that run them."""

    def __init__(self):
        self._schemes: Dict[str, Callable] = {}
        self.logger = logging.getLogger("softcache.schemes")

    def reg_scheme(self, name: str):
        def decorator(func: Callable):
            if name in self._schemes:
                self.logger.warning(f"Overwriting runner for scheme: {name}")

            self._schemes[name] = func
            return func

        return decorator

    def handle(self, name: str, *args, **kwargs):
        if name not in self._schemes:
            self.logger.error(f"No runner for scheme: {name}")
            raise ValueError(f"Unknown scheme: {name}")

        return self._schemes[name](*args, **kwargs)

    def get_schemes(self) -> Dict[str, Callable]:
        return self._schemes.copy()

    def has_scheme(self, name: str) -> bool:
        return name in self._schemes
