from _silobench import *  # noqa: F401,F403
from _silobench import __version__  # noqa: F401
