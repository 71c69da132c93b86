"""Wire models for the control-plane REST contract (``/api/v1``)."""

from __future__ import annotations

from typing import Any, Literal, Optional

from pydantic import BaseModel, Field


class ResourceKeyModel(BaseModel):
    kind: str
    namespace: str = ""  # empty for cluster-scoped resources
    name: str


class ClusterEventModel(BaseModel):
    sequence: int
    verb: Literal["create", "update", "delete"]
    key: ResourceKeyModel
    timestamp: str
    # Body after the change; absent for deletes. Lets clients replay state.
    body: Optional[dict[str, Any]] = None


class ApplyResponse(BaseModel):
    result: Literal["created", "updated"]
    sequence: int


class DeleteResponse(BaseModel):
    result: Literal["deleted", "absent"]
    sequence: Optional[int] = None


class ResourceList(BaseModel):
    items: list[dict[str, Any]] = Field(default_factory=list)


class EventList(BaseModel):
    events: list[ClusterEventModel] = Field(default_factory=list)


class ErrorResponse(BaseModel):
    detail: str
