# Transmission scattering lab for penetrable convex polygons
__version__ = "0.3.0"
