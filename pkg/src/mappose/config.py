"""Tunable constants of the estimation pipeline."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional


@dataclass(frozen=True)
class Config:
    # orientation
    sigma_deg: float = 2.0
    min_segment_length_px: Optional[float] = None  # None -> fraction of diagonal
    min_segment_length_frac: float = 0.02
    vertical_angle_deg: float = 10.0
    vertical_angle_fallback_deg: float = 35.0
    max_tilt_correction_deg: float = 35.0
    fallback_inlier_ratio: float = 2.0
    horizon_margin_px: float = 5.0
    horizontal_exclusion_deg: float = 10.0
    min_vertical_inliers: int = 4
    min_yaw_inliers: int = 3
    max_yaw_correction_deg: float = 45.0
    assignment_heading_offsets_deg: tuple = (0.0, -10.0, 10.0, -20.0, 20.0, -30.0, 30.0, -40.0, 40.0)
    refine_rotation: bool = True
    refine_tau_deg: float = 2.0

    # translation
    camera_height: float = 1.6
    inlier_p: float = 0.90
    nms_frac: float = 0.01
    subpixel_halfwidth: int = 2
    facade_mask_dilation: int = 2
    window_mask_dilation: int = 1
    gradient_smoothing_sigma: float = 0.0
    max_lines: int = 12
    gating_radius_m: float = 30.0
    order_filter: bool = True
    visibility_filter: bool = True

    # map / visibility
    map_radius_m: float = 150.0
    frustum_margin: float = 0.10
    near_clip_m: float = 0.05

    # alignment
    pixel_stride: int = 2
    coarse_stride: int = 8
    coarse_keep: int = 32
    multiclass: bool = False
    n_extra_starts: int = 6
    start_radius_m: float = 12.5
    start_phase_deg: float = 0.0
    include_start_pose: bool = True
    dedup_tolerance_m: float = 1e-3

    def with_overrides(self, **kwargs) -> "Config":
        return replace(self, **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


DEFAULT_CONFIG = Config()
