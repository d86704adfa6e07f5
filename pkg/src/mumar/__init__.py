"""Multi-view point cloud registration driven by planar 3D markers."""
__version__ = "0.1.0"
