"""Service layer: pydantic models, operation functions, and the FastAPI app."""

from . import models, service

__all__ = ["models", "service"]
