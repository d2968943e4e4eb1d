from .detector import (DetectorBackend, DetectorConfigError, DetectorError,
                       DetectorInferenceError, ExternalDetector, OracleDetector,
                       StubDetector, detect)
from .model import PatchParserNet, preprocess
from .pairs import SINGLE_KEY, TrainPair, build_training_pairs
from .trainer import (ParserModel, TrainConfig, TrainingError, load_parser,
                      parse_patch, save_parser, train_parser)
from .vocab import (CHAR_INVENTORY, PAD_TOKEN, PROMPT_TOKEN, TokenVocab,
                    VocabError, build_vocab)

__all__ = [
    "DetectorBackend", "DetectorConfigError", "DetectorError",
    "DetectorInferenceError", "ExternalDetector", "OracleDetector",
    "StubDetector", "detect",
    "PatchParserNet", "preprocess",
    "SINGLE_KEY", "TrainPair", "build_training_pairs",
    "ParserModel", "TrainConfig", "TrainingError", "load_parser",
    "parse_patch", "save_parser", "train_parser",
    "CHAR_INVENTORY", "PAD_TOKEN", "PROMPT_TOKEN", "TokenVocab",
    "VocabError", "build_vocab",
]
