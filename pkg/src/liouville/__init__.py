"""Developing maps of the Liouville equation and their spherical geometry."""
