"""
Base error type for the lowres-tts toolkit.
Each module defines its own subclasses next to the code that raises them.
"""


class TTSError(Exception):
    """Base class for every error the toolkit raises on purpose.

    ``code`` is a stable identifier the command line prints as
    ``CODE: message`` so scripts can match on it.
    """

    code = "E_TTS"

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message

    def __str__(self):
        return self.message or self.__class__.__name__
