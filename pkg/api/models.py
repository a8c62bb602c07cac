"""API models for request and response data."""
from pydantic import BaseModel, Field

from services.metrics import EvalReport


class HealthResponse(BaseModel):
    status: str = Field("ok", description="Always 'ok' while the service is up")


class TermsResponse(BaseModel):
    """Loss terms that can be switched off through `disabled_terms`."""

    terms: list[str]
    body_terms: list[str] = Field(..., description="Components of the within-body term")


class EvaluateResponse(EvalReport):
    """Evaluation report returned by /evaluate.

    Same fields as the CLI's report; body measures are null for scene-only documents.
    """
