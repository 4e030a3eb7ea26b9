"""Feature extraction to OTDF files for the otdet detection pipeline."""

from .crops import CropSpec, center_square, crop_views
from .encoders import ClipEncoder, EncoderError, MockEncoder, load_encoder
from .otdf import write_labels, write_manifest, write_matrix

__version__ = "0.1.0"
