"""Space Atom Laser - rf outcoupling of a spinor BEC in microgravity."""

__version__ = "1.0.0"
