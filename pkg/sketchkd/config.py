"""Hyperparameters for SketchKD experiments, their validation, and their file format.

A configuration file is a flat JSON object. Keys are

    m_cm, m_im_s, m_im_p, tau, lambda1 ... lambda6, beta, k, levels, patch_strides,
    channels, heads, sr_ratios, d, lr, weight_decay, batch_size, epochs, seed, image_size

plus the optional keys depth, mlp_ratio, eval_every, perspective_strength,
max_rotation and profile. List-valued keys may be JSON lists or comma-separated
strings ("4,2,2"). Unspecified keys are filled from the profile named by "profile"
(default "full").
"""

import json
import numbers
import copy
import dataclasses
from dataclasses import dataclass, field, asdict
from typing import List

import numpy as np

from sketchkd.helpers import check_filepath, parse_int_list, canonical_json, sha256_of_bytes
from sketchkd.exceptions import ConfigError


LIST_FIELDS = ("patch_strides", "channels", "heads", "sr_ratios")
INT_FIELDS = ("K", "levels", "d", "batch_size", "epochs", "seed", "image_size", "depth", "mlp_ratio", "eval_every")
FLOAT_FIELDS = ("m_cm", "m_im_s", "m_im_p", "tau", "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "lambda6", "beta",
                "lr", "weight_decay", "perspective_strength", "max_rotation")

# The file format spells the neighbour count in lower case
FILE_KEYS = {"k" : "K"}


@dataclass(frozen=True)
class Hyperparameters:
    """Every scalar knob of an experiment in one validated, immutable record.

    Construction validates all invariants and raises ConfigError naming the first
    failing field.
    """

    # Margins and temperature
    m_cm: float = 0.5
    m_im_s: float = 0.2
    m_im_p: float = 0.3
    tau: float = 0.01

    # Loss weights
    lambda1: float = 0.8
    lambda2: float = 0.2
    lambda3: float = 0.4
    lambda4: float = 0.4
    lambda5: float = 0.7
    lambda6: float = 0.5

    # EMA decay and neighbour count
    beta: float = 0.999
    K: int = 5

    # Architecture
    levels: int = 4
    patch_strides: List[int] = field(default_factory=lambda: [4, 2, 2, 2])
    channels: List[int] = field(default_factory=lambda: [64, 128, 320, 512])
    heads: List[int] = field(default_factory=lambda: [1, 2, 5, 8])
    sr_ratios: List[int] = field(default_factory=lambda: [8, 4, 2, 1])
    d: int = 512
    depth: int = 1
    mlp_ratio: int = 4

    # Optimisation
    lr: float = 1e-3
    weight_decay: float = 5e-2
    batch_size: int = 16
    epochs: int = 200
    seed: int = 0
    eval_every: int = 100

    # Input and augmentation
    image_size: int = 224
    perspective_strength: float = 0.1
    max_rotation: float = 45.0

    def __post_init__(self):

        # Real-valued fields must be numbers; stored as float
        for name in FLOAT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, numbers.Real):
                raise ConfigError(name, value, "must be a real number")
            object.__setattr__(self, name, float(value))

        # Normalise list fields to tuples of ints so the record stays hashable and immutable
        for name in LIST_FIELDS:
            try:
                object.__setattr__(self, name, tuple(parse_int_list(getattr(self, name))))
            except (TypeError, ValueError):
                raise ConfigError(name, getattr(self, name), "must be a list of integers")
        self._validate()


    def _validate(self):

        # Scalars
        for name in ("m_cm", "m_im_s", "m_im_p", "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "lambda6", "weight_decay"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0.0:
                raise ConfigError(name, getattr(self, name), "must be a finite real >= 0")
        if not getattr(self, "tau") > 0.0:
            raise ConfigError("tau", self.tau, "must be > 0")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta", self.beta, "must lie in [0, 1)")
        if not self.lr > 0.0:
            raise ConfigError("lr", self.lr, "must be > 0")
        if not 0.0 <= self.perspective_strength < 0.5:
            raise ConfigError("perspective_strength", self.perspective_strength, "must lie in [0, 0.5)")
        if self.max_rotation < 0.0:
            raise ConfigError("max_rotation", self.max_rotation, "must be >= 0")
        for name in ("K", "levels", "batch_size", "epochs", "d", "image_size", "depth", "mlp_ratio", "eval_every"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(name, value, "must be an integer >= 1")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("seed", self.seed, "must be an integer")

        # Per-level lists
        for name in LIST_FIELDS:
            if len(getattr(self, name)) != self.levels:
                raise ConfigError(name, list(getattr(self, name)), "must have one entry per level ({0})".format(self.levels))
            if any(value < 1 for value in getattr(self, name)):
                raise ConfigError(name, list(getattr(self, name)), "entries must be >= 1")

        # Pyramid geometry
        if self.image_size % int(np.prod(self.patch_strides)) != 0:
            raise ConfigError("image_size", self.image_size, "must be divisible by the product of patch_strides {0}".format(list(self.patch_strides)))
        if self.channels[-1] != self.d:
            raise ConfigError("channels", list(self.channels), "last entry must equal d ({0})".format(self.d))
        for l, (C, h) in enumerate(zip(self.channels, self.heads)):
            if C % h != 0:
                raise ConfigError("heads", list(self.heads), "level {0} width {1} is not divisible by {2} heads".format(l+1, C, h))
        for l, (side, sr) in enumerate(zip(self.map_sides, self.sr_ratios)):
            if side % sr != 0:
                raise ConfigError("sr_ratios", list(self.sr_ratios), "level {0} map side {1} is not divisible by {2}".format(l+1, side, sr))


    @property
    def map_sides(self):
        """Side length of the feature map produced at each level."""
        sides = []
        side = self.image_size
        for stride in self.patch_strides:
            side //= stride
            sides.append(side)
        return sides


    def replace(self, **kwargs):
        """Returns a validated copy with the given fields changed."""
        return dataclasses.replace(self, **kwargs)


    def to_dict(self):
        """Returns the record in file format (lower-case k, lists as lists)."""
        d = asdict(self)
        for name in LIST_FIELDS:
            d[name] = list(d[name])
        d["k"] = d.pop("K")
        return d


def paper_default_profile():
    """Returns the full-scale profile (224x224 inputs, four levels, d=512)."""
    return Hyperparameters()


def desk_profile():
    """Returns the desk-scale profile (32x32 inputs, three levels) used by the experiments."""
    return Hyperparameters(levels=3, patch_strides=[4, 2, 2], channels=[16, 32, 64], heads=[1, 2, 4], sr_ratios=[2, 1, 1], d=64, image_size=32, eval_every=20)


def tiny_profile():
    """Returns the smallest profile (8x8 inputs, d=8, K=2) used for gradient checks."""
    return Hyperparameters(levels=2, patch_strides=[2, 2], channels=[4, 8], heads=[1, 2], sr_ratios=[1, 1], d=8, image_size=8, K=2, batch_size=2, epochs=1, eval_every=1)


PROFILES = {
    "full" : paper_default_profile,
    "desk" : desk_profile,
    "tiny" : tiny_profile
}


def load_config(config_input):
    """Loads and validates a configuration.

    Parameters
    ----------
    config_input : str or dict
        Path to a JSON configuration file, or a dictionary in the same format.

    Returns
    -------
    Hyperparameters

    Raises
    ------
    IOError
        If the file cannot be found or does not parse.

    ConfigError
        If any invariant is violated. The offending field is named.
    """

    # File
    if isinstance(config_input, str):
        check_filepath(config_input, ".json")
        with open(config_input, 'r') as config_handle:
            try:
                input_dict = json.load(config_handle)
            except json.JSONDecodeError as e:
                raise IOError("Could not parse configuration file {0}: {1}".format(config_input, e))

    # Dictionary
    elif isinstance(config_input, dict):
        input_dict = copy.deepcopy(config_input)

    # Input format not recognized
    else:
        raise IOError("Configuration must be a file path or Python dictionary, not type {0}.".format(type(config_input)))

    if not isinstance(input_dict, dict):
        raise IOError("Configuration must be a JSON object.")

    # Start from the profile
    profile_name = input_dict.pop("profile", "full")
    if profile_name not in PROFILES:
        raise ConfigError("profile", profile_name, "must be one of {0}".format(sorted(PROFILES)))
    profile = PROFILES[profile_name]()

    # Translate file keys and reject unknown ones
    known = {f.name for f in dataclasses.fields(Hyperparameters)}
    overrides = {}
    for key, value in input_dict.items():
        name = FILE_KEYS.get(key, key)
        if name not in known:
            raise ConfigError(key, value, "is not a recognised configuration key")
        if name in INT_FIELDS and isinstance(value, float) and value.is_integer():
            value = int(value)
        overrides[name] = value

    return dataclasses.replace(profile, **overrides)


def save_config(hp, filename):
    """Writes the configuration as canonical JSON."""
    with open(filename, 'w') as config_handle:
        json.dump(hp.to_dict(), config_handle, indent=4, sort_keys=True)


def config_hash(hp):
    """SHA-256 of the canonical JSON form of the configuration."""
    return sha256_of_bytes(canonical_json(hp.to_dict()).encode("utf-8"))
