from .model import (
    TextDecoder,
    TextDecoderConfig,
    TextEncoder,
    TextEncoderConfig,
    encode_text,
    load_text_checkpoint,
    loss_reconstruction,
    save_text_checkpoint,
)
from .tokenizer import HashingTokenizer
from .train import DEFAULT_CATEGORIES, CategoryTable, TrainConfig, train_text_encoder

__all__ = [
    "CategoryTable",
    "DEFAULT_CATEGORIES",
    "HashingTokenizer",
    "TextDecoder",
    "TextDecoderConfig",
    "TextEncoder",
    "TextEncoderConfig",
    "TrainConfig",
    "encode_text",
    "load_text_checkpoint",
    "loss_reconstruction",
    "save_text_checkpoint",
    "train_text_encoder",
]
