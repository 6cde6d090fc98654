"""Custom exceptions used in SketchKD."""


class ConfigError(ValueError):
    """An exception thrown when an experiment configuration is invalid.

    Members
    ----------
    field : str
        Name of the offending configuration key.

    value : object
        The value which was rejected.

    message : str
        A message about the error.
    """

    def __init__(self, field, value, reason):

        # Store args
        self.field = field
        self.value = value
        self.message = "Configuration field '{0}' is invalid: {1}".format(field, reason)

        # Initialize super
        super().__init__(self.message)


    def __str__(self):
        return self.message+" (got {0}).".format(self.value)


class NonFiniteLossError(Exception):
    """An exception thrown when the training loss becomes NaN or infinite.

    Members
    ----------
    step : int
        Optimizer step at which the loss was found to be non-finite.

    value : float
        The offending loss value.

    message : str
        A message about the error.
    """

    def __init__(self, step, value):

        # Store args
        self.step = step
        self.value = value
        self.message = "Training loss became non-finite at step {0}. Try lowering the learning rate or the temperature.".format(step)

        # Initialize super
        super().__init__(self.message)


    def __str__(self):
        return self.message+" The loss was {0}.".format(self.value)


class NonFiniteActivationError(Exception):
    """An exception thrown when a backbone level produces NaN or infinite activations.

    Members
    ----------
    level : int
        Pyramid level (1-based) at which the activations were found to be non-finite.

    message : str
        A message about the error.
    """

    def __init__(self, level):

        # Store args
        self.level = level
        self.message = "Backbone level {0} produced non-finite activations.".format(level)

        # Initialize super
        super().__init__(self.message)


class DatasetError(Exception):
    """An exception thrown when a dataset cannot be used as requested."""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)


class BankMismatchError(Exception):
    """An exception thrown when the feature bank refers to photos the trainer cannot see.

    Members
    ----------
    missing_ids : list
        Photo ids named by the bank which are absent from the photo pool.

    message : str
        A message about the error.
    """

    def __init__(self, missing_ids):

        # Store args
        self.missing_ids = list(missing_ids)
        self.message = "The feature bank names {0} photo(s) which are not in the photo pool.".format(len(self.missing_ids))

        # Initialize super
        super().__init__(self.message)


    def __str__(self):
        return self.message+" First missing ids: {0}.".format(self.missing_ids[:5])


class EmaSwapError(RuntimeError):
    """An exception thrown when EMA shadow weights cannot be installed or updated."""

    def __init__(self, message):
        self.message = message
        super().__init__(self.message)
