"""
Low-resource text-to-speech toolkit.
Corpus preparation, attention-based spectrogram prediction, checkpoint
transfer, vocoding and evaluation for small speech corpora.
"""

__version__ = "1.0.0"
