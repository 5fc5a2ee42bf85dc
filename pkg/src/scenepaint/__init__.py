"""Per-scene 3D painting: a coordinate-based color generator trained from
mutually inconsistent 2D references into a view-consistent scene appearance."""

__version__ = "0.1.0"
