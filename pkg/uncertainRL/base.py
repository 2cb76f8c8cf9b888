"""Base of Uncertainty-aware Reinforcement Learning
"""

# License: BSD 3 clause
import ast

import numpy as np
from sklearn.base import BaseEstimator


class UncertainRLError(Exception):
    """Root of every error raised on purpose by this package."""


class InputContractError(UncertainRLError, ValueError):
    """An array does not have the shape the receiving operation expects."""


class PreconditionError(UncertainRLError, ValueError):
    """An operation was called before its data requirements were met."""


class ConfigError(UncertainRLError, ValueError):
    """A hyperparameter is outside its documented range."""


class TrainingDivergenceError(UncertainRLError, ArithmeticError):
    """A gradient or activation stopped being finite."""


class ModelDivergenceError(UncertainRLError, ArithmeticError):
    """The world model produced a non-finite prediction."""


class BaseConfig(BaseEstimator):
    """
    Hyperparameter container in scikit-learn style.

    Every hyperparameter is a keyword argument of ``__init__`` stored verbatim
    under the same name, so ``get_params(deep=True)`` and
    ``set_params(section__key=value)`` work across nested configurations.
    Subclasses check their values in ``_validate_hyperparameters``.
    """

    def _validate_hyperparameters(self):
        pass

    def validate(self):
        """Validate this configuration and every nested one.

        Returns
        -------
        self : object
            The validated configuration.

        Raises
        ------
        ConfigError
            The message names the first offending key.
        """
        self._validate_hyperparameters()
        for value in self.get_params(deep=False).values():
            if isinstance(value, BaseConfig):
                value.validate()
        return self


def _check_range(
    name, value, low=-np.inf, high=np.inf, closed="both", allow_inf=False
):
    """Raise ConfigError unless ``low <= value <= high`` (ends per ``closed``)."""
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number, got {value!r}.") from None
    if np.isnan(number) or (np.isinf(number) and not allow_inf):
        raise ConfigError(f"{name} must be a finite number, got {value!r}.")
    low_ok = value >= low if closed in ("both", "left") else value > low
    high_ok = value <= high if closed in ("both", "right") else value < high
    if not (low_ok and high_ok):
        left = "[" if closed in ("both", "left") else "("
        right = "]" if closed in ("both", "right") else ")"
        raise ConfigError(
            f"{name} must lie in {left}{low}, {high}{right}, got {value!r}."
        )


def _check_input(X, width, name="X"):
    """Return ``X`` as a 2-d float64 array and whether it arrived 1-d."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != width:
        raise InputContractError(
            f"{name} must have {width} columns, got an array of shape {np.shape(X)}."
        )
    return X, single


def _check_finite(arrays, error, message):
    if not all(np.isfinite(a).all() for a in arrays):
        raise error(message)


def _literal(raw):
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_key_values(text, source="<text>"):
    """Parse ``key = value`` lines into an ordered list of pairs.

    Blank lines and ``#`` comments are skipped, keys may repeat, and values
    are read as Python literals, falling back to bare strings.
    """
    pairs = []
    for number, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value'")
        key, raw = line.split("=", 1)
        pairs.append((key.strip(), _literal(raw.strip())))
    return pairs


def format_value(value):
    """Inverse of the value parsing in ``parse_key_values``."""
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, np.ndarray):
        value = value.tolist()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return repr(value)
