from .bundle import Bundle, create_failure_bundle

__all__ = ["Bundle", "create_failure_bundle"]
