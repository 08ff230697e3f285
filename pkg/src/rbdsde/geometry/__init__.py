"""Convex domain computations: projections, distances, normals, resolvents,
mollified approximations."""

from .domains import (
    Ball,
    Box,
    ConvexDomain,
    HalfSpace,
    HalfSpaceIntersection,
    ProjectionResult,
    distance,
    domain_from_dict,
    domain_from_json,
    domain_to_json,
    normal_at,
    penalty_gradient,
    project,
    resolvent_step,
)
from .mollified import MollifiedDomain, mollify

__all__ = [
    "Ball",
    "Box",
    "ConvexDomain",
    "HalfSpace",
    "HalfSpaceIntersection",
    "MollifiedDomain",
    "ProjectionResult",
    "distance",
    "domain_from_dict",
    "domain_from_json",
    "domain_to_json",
    "mollify",
    "normal_at",
    "penalty_gradient",
    "project",
    "resolvent_step",
]
