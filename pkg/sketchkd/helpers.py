"""A set of useful helper functions for SketchKD to use."""

import os
import json
import zlib
import hashlib
import warnings
import subprocess

import numpy as np


def check_filepath(input_filename, correct_ext):
    # Check correct file extension and that file exists
    if correct_ext not in str(input_filename):
        raise IOError("File {0} has the wrong extension. Expected a {1} file.".format(input_filename, correct_ext))
    if not os.path.exists(input_filename):
        raise IOError("Cannot find file {0}.".format(input_filename))


def parse_int_list(value):
    # Accepts a list of ints, a single int, or a comma-separated string such as "4,2,2"
    if isinstance(value, str):
        return [int(item) for item in value.replace(" ", "").split(",") if item != ""]
    if isinstance(value, (int, np.integer)):
        return [int(value)]
    return [int(item) for item in value]


def canonical_json(d):
    """Serializes the dictionary with sorted keys so equal records give equal strings."""
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def sha256_of_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_of_file(filename):
    digest = hashlib.sha256()
    with open(filename, 'rb') as file_handle:
        for chunk in iter(lambda: file_handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def component_seed(seed, name):
    # Deterministic 32-bit seed for one named component of a run
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]).generate_state(1)[0])


def component_rng(seed, name):
    """Returns the numpy generator for the named component of a run.

    All randomness in a run descends from the run seed. Splitting it by component
    name means two runs sharing a seed see the same data order, even when they
    differ in model or loss configuration.

    Parameters
    ----------
    seed : int
        Run seed.

    name : str
        Component name, e.g. "data.sampling" or "teacher.sampling".

    Returns
    -------
    numpy.random.Generator
    """
    return np.random.default_rng(component_seed(seed, name))


def atomic_write_text(filename, text):
    # Writes to a sibling temporary file, then renames over the target
    tmp_name = "{0}.tmp{1}".format(filename, os.getpid())
    with open(tmp_name, 'w') as file_handle:
        file_handle.write(text)
    os.replace(tmp_name, filename)


def git_describe():
    # Best effort; runs outside a git checkout are labelled "unknown"
    try:
        result = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    if result.returncode != 0:
        return "unknown"
    return result.stdout.strip() or "unknown"


def handle_error(error, instruction):
    """Handles a recoverable error according to the given instruction.

    Parameters
    ----------
    error : Exception
        The error to handle.

    instruction : str
        "raise", "warn", or "ignore".
    """
    if instruction == "raise":
        raise error
    elif instruction == "warn":
        warnings.warn(str(error))
    elif instruction == "ignore":
        return
    else:
        raise RuntimeError("SketchKD got an incorrect error handling instruction. '{0}' is invalid.".format(instruction))


def state_checksum(module):
    """Returns a SHA-256 over every parameter and buffer of the module, in name order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
