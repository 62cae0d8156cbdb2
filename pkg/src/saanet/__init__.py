"""Light-field angular super-resolution with spatial-angular attention."""

__version__ = "0.1.0"
