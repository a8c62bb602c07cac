"""HTTP surface of the scene fitting service."""
