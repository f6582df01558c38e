"""Vision-aided user matching and resource allocation for multi-BS mmWave links.

Synthetic traffic scenes with multi-camera 3D detections, geometric channels
with beam training, heatmap-based user matching and CNN-based BS/power
allocation, all on a small numpy network engine.
"""

__version__ = "0.1.0"
