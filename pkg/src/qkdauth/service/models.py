"""Service-only response models (experiment schemas live in experiments)."""
from pydantic import BaseModel


class HealthResponse(BaseModel):
    status: str
    version: str
