"""Zero-shot semantic utterance classification with click-log embeddings."""

__version__ = "0.1.0"
