"""Guidance service: embeds rendered views with a vision encoder, computes
semantic and view-consistency losses, and streams pixel gradients back over a
socket protocol."""

__version__ = "0.1.0"
