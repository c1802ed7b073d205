"""partlift: lift 2D part labels onto 3D point clouds through multi-view
correspondence matching, mask-level voting, and cross-view consistency."""

__version__ = "0.1.0"
