"""
This module holds the shared log channel used by the other modules. The channel
comes from alog (https://github.com/IBM/alchemy-logging) so that the
higher-order debug levels (debug1 - debug4) are available on it.
"""

# Third Party
import alog

log = alog.use_channel("PLOOM")


def configure(level: str = "warning"):
    """Configure the process-wide log handlers at the given alog level name
    (error, warning, info, debug, debug1 - debug4)
    """
    alog.configure(default_level=str(level).lower())
