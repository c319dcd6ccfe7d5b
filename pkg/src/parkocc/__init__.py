"""Ground-truth generation and evaluation toolkit for semantic scene completion
in underground-parking LiDAR sequences stored in SemanticKITTI layout."""

__version__ = "0.1.0"
