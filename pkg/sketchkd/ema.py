"""Exponential moving average of model parameters."""

from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, field

import torch

from sketchkd.exceptions import EmaSwapError


EMA_PREFIX = "ema."


@dataclass
class EmaState:
    """Shadow copy of every learnable parameter.

    Members
    ----------
    shadow : OrderedDict
        Parameter name -> tensor, same names and shapes as the live model.

    beta : float
        Decay in [0, 1).

    step : int
        Number of updates applied.
    """
    shadow: "OrderedDict[str, torch.Tensor]"
    beta: float
    step: int = 0
    swapped: bool = field(default=False, repr=False)

    def state_dict(self):
        """Shadow tensors under the ema. prefix, as stored in checkpoints."""
        return OrderedDict((EMA_PREFIX+name, tensor.clone()) for name, tensor in self.shadow.items())


def _named_params(params):
    # Accepts a module or a name -> tensor mapping
    if isinstance(params, torch.nn.Module):
        return OrderedDict(params.named_parameters())
    return OrderedDict(params)


def ema_init(params, beta=0.999):
    """Starts the average at an exact copy of the parameters.

    Parameters
    ----------
    params : torch.nn.Module or dict
        Model, or parameter name -> tensor mapping.

    beta : float, optional
        Decay. Defaults to 0.999.

    Returns
    -------
    EmaState
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("EMA decay must lie in [0, 1), got {0}.".format(beta))
    shadow = OrderedDict((name, tensor.detach().clone()) for name, tensor in _named_params(params).items())
    return EmaState(shadow=shadow, beta=beta, step=0)


def _check_match(state, named):
    if list(named.keys()) != list(state.shadow.keys()):
        missing = sorted(set(state.shadow)-set(named))
        extra = sorted(set(named)-set(state.shadow))
        raise EmaSwapError("Parameter names do not match the EMA shadow (missing {0}, unexpected {1}).".format(missing, extra))
    for name, tensor in named.items():
        if tensor.shape != state.shadow[name].shape:
            raise EmaSwapError("Parameter '{0}' has shape {1} but its EMA shadow has shape {2}.".format(name, list(tensor.shape), list(state.shadow[name].shape)))


def ema_update(state, params):
    """Applies shadow <- beta*shadow + (1-beta)*params to every entry and counts the step.

    The state is updated in place and returned.
    """
    named = _named_params(params)
    _check_match(state, named)
    with torch.no_grad():
        for name, tensor in named.items():
            state.shadow[name].mul_(state.beta).add_(tensor.detach(), alpha=1.0-state.beta)
    state.step += 1
    return state


@contextmanager
def ema_swap_for_eval(state, model):
    """Installs the shadow parameters in the model for the duration of the block.

    The live parameters are restored bit-exactly on exit, also when the block raises.
    A second swap on the same state before the first is released raises EmaSwapError.
    """
    if state.swapped:
        raise EmaSwapError("The EMA shadow is already installed; nested swaps are not allowed.")
    named = _named_params(model)
    _check_match(state, named)

    backup = OrderedDict((name, tensor.detach().clone()) for name, tensor in named.items())
    state.swapped = True
    try:
        with torch.no_grad():
            for name, tensor in named.items():
                tensor.copy_(state.shadow[name])
        yield model
    finally:
        with torch.no_grad():
            for name, tensor in named.items():
                tensor.copy_(backup[name])
        state.swapped = False


def load_ema_state(state_dict, beta, step=0):
    """Rebuilds an EmaState from the ema.-prefixed entries of a checkpoint dictionary."""
    shadow = OrderedDict((name[len(EMA_PREFIX):], tensor.clone()) for name, tensor in state_dict.items() if name.startswith(EMA_PREFIX))
    if len(shadow) == 0:
        raise EmaSwapError("The checkpoint holds no EMA entries.")
    return EmaState(shadow=shadow, beta=beta, step=step)
