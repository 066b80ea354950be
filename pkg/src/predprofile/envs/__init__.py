"""Benchmark environments and their exact oracles."""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from . import ballbounce, gallery, threecard
from .ballbounce import BallBounce
from .base import Abstraction, StepResult
from .gallery import GalleryParams, ShootingGallery
from .threecard import ThreeCardMonte

ENV_IDS = (threecard.ENV_ID, gallery.ENV_ID, ballbounce.ENV_ID)


def make_env(env_id: str, rng: np.random.Generator | None = None, **params):
    """Build an environment by id; unknown ids or parameters are config errors."""
    rng = rng if rng is not None else np.random.default_rng(0)
    try:
        if env_id == threecard.ENV_ID:
            return ThreeCardMonte(rng, **params)
        if env_id == gallery.ENV_ID:
            return ShootingGallery(rng, GalleryParams(**params))
        if env_id == ballbounce.ENV_ID:
            return BallBounce(rng, **params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {env_id}: {exc}") from None
    raise ConfigError(f"unknown environment {env_id!r}; choose from {ENV_IDS}")


__all__ = ["Abstraction", "BallBounce", "ENV_IDS", "GalleryParams", "ShootingGallery",
           "StepResult", "ThreeCardMonte", "make_env"]
