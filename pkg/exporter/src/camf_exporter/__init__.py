"""camf-exporter: convert torch checkpoints to the .camf saliency-engine format."""

from .export import export_model, load_reference_logits, make_demo_dog, make_probe_image
from .recipes import RECIPES, UnsupportedLayerError, build_recipe, convert_modules
from .verify import VerifyResult, engine_logits, find_engine, verify_bundle
from .writer import CamfLayer, CamfModel, read_camf_raw, tensor_from_payload, write_camf

__version__ = "0.1.0"
