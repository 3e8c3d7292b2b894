"""Linear alignment of visual embeddings to a target embedding space, with
zero-shot classification against class prototypes."""

from ._core import *  # noqa: F401,F403
from ._core import __version__, ProtoalignError

__all__ = [name for name in dir() if not name.startswith("_")]
