"""rankmvml - incomplete multi-view multi-label learning with ranking-aware losses."""

__version__ = "0.1.0"
__author__ = "Hearthware"
__description__ = (
    "Masked multi-view autoencoders, quality-weighted fusion "
    "and correlation-aware multi-label loss"
)
