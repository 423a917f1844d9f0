"""Stereo object matching: cost volumes with 3D object-level context."""
