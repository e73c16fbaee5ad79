from .evaluation import Evaluator
from .model import SiameseSENet, build_model
from .tracker import Tracker, TrackerSession
from .training import Trainer, train

__all__ = ["Evaluator", "SiameseSENet", "Trainer", "Tracker", "TrackerSession", "build_model", "train"]
