"""Single-exemplar triplane texture fields: learn a feature-to-color field on one
textured mesh and transfer it to new meshes of the same category."""

__version__ = "0.1.0"
