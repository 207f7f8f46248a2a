"""Quasi-states and quasi-morphisms on the sphere and its disk bundle, with their reductions.

Submodules: group_qm, sphere_field, reeb_median, disk_bundle, reduction,
hirzebruch and cli.  Nothing heavy is imported here.
"""
__version__ = "0.1.0"
__all__ = ["group_qm", "sphere_field", "reeb_median", "disk_bundle", "reduction", "hirzebruch", "cli"]
