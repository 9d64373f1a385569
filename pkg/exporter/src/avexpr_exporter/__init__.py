"""Feature exporter: pretrained encoders in, AFF1/AFA1 files out."""

__version__ = "0.1.0"

from .encoders import AudioEncoder, VisualEncoder, get_audio_encoder, get_visual_encoder
from .errors import EncoderUnavailable, ExporterError, InputError, ManifestError
from .export import ExportJob, export_all, export_audio, export_visual

__all__ = [
    "AudioEncoder",
    "VisualEncoder",
    "get_audio_encoder",
    "get_visual_encoder",
    "EncoderUnavailable",
    "ExporterError",
    "InputError",
    "ManifestError",
    "ExportJob",
    "export_all",
    "export_audio",
    "export_visual",
    "__version__",
]
