"""Control-plane boundary: REST client plus a bundled mock server."""

from charter.gateway.client import DEFAULT_CLUSTER_URL, ClusterEvent, ClusterGateway

__all__ = ["DEFAULT_CLUSTER_URL", "ClusterEvent", "ClusterGateway"]
