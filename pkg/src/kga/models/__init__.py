"""Desk-scale text models sharing one contract: per-instance output distributions."""
from .base import Batch, Model, ModelSpec, TrainConfig, build_model, pad_stack
from .checkpoint import load_model, save_model
from .classifier import ClassifierModel, FeatureClassifier
from .decoding import (beam_generate, class_distribution, greedy_generate, greedy_translate, perplexities,
                       sequence_log_prob, sequence_perplexity, token_distributions, translate)
from .seq2seq import RNNSeq2Seq, Seq2SeqModel, TransformerSeq2Seq
from .training import TrainingDiverged, accuracy, cross_entropy, fit, train_supervised
from .vocab import BOS, EOS, PAD, UNK, Vocabulary

__all__ = [
    "Batch", "Model", "ModelSpec", "TrainConfig", "build_model", "pad_stack",
    "load_model", "save_model", "ClassifierModel", "FeatureClassifier",
    "beam_generate", "class_distribution", "greedy_generate", "greedy_translate", "perplexities",
    "sequence_log_prob", "sequence_perplexity", "token_distributions", "translate",
    "RNNSeq2Seq", "Seq2SeqModel", "TransformerSeq2Seq",
    "TrainingDiverged", "accuracy", "cross_entropy", "fit", "train_supervised",
    "BOS", "EOS", "PAD", "UNK", "Vocabulary",
]
