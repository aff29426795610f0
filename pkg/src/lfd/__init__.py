"""Pose-invariant shape retrieval from location fields.

A location field stores, per pixel, the canonical-frame 3D coordinate of the
visible surface. Rendering those fields from 3D models, degrading them to mimic
regressed fields, and embedding them with a metric-learned network gives a
single descriptor space in which images (via their fields) retrieve models.
"""

from .errors import LFDError
from .mesh import Mesh, PointSet, load_obj, normalize_mesh, sample_surface, save_obj
from .render import Camera, LocationField, Pose, PoseConfig, render_location_field, sample_pose

__all__ = ["LFDError", "Mesh", "PointSet", "load_obj", "save_obj", "normalize_mesh",
           "sample_surface", "Camera", "LocationField", "Pose", "PoseConfig",
           "render_location_field", "sample_pose"]
