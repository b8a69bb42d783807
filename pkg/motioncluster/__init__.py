from .annotations import GroundTruthMotion, MotionAnnotation
from .config import Config, load_config
from .pipeline import run_pipeline
from .shapes import Shape, Part, load_dataset
from .util import Error, InputError, NumericalError
