"""Python access to the bilateral attention VOS library."""

from ._batman import (
    bilateral_attention,
    bilateral_mask,
    boundary_f,
    category_names,
    flow_to_color,
    generate_sequence,
    region_j,
    segment,
)

__all__ = [
    "bilateral_attention",
    "bilateral_mask",
    "boundary_f",
    "category_names",
    "flow_to_color",
    "generate_sequence",
    "region_j",
    "segment",
]
