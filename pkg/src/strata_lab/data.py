"""Immutable observed-data table with optional latent truth."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from enum import IntEnum

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["Stratum", "STRATUM_TOKENS", "Dataset"]


class Stratum(IntEnum):
    """Principal strata ordered along the latent selection index.

    NN is the never stratum (S1=S0=0), SC the complier (S1=1, S0=0) and SS the
    always stratum (S1=S0=1).  Defiers are excluded under monotonicity.
    """

    NN = 0
    SC = 1
    SS = 2

    @property
    def token(self) -> str:
        return STRATUM_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "Stratum":
        try:
            return _FROM_TOKEN[token]
        except KeyError:
            raise InvalidArgumentError(f"unknown stratum token {token!r}") from None


STRATUM_TOKENS = {Stratum.NN: "nn", Stratum.SC: "sc", Stratum.SS: "ss"}
_FROM_TOKEN = {v: k for k, v in STRATUM_TOKENS.items()}


def _freeze(arr, dtype=float):
    if arr is None:
        return None
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observed records (Z, S, Y, A, W, C).

    ``c`` is always 2-D (n, k); one column per baseline covariate in the C
    block.  ``y`` holds NaN where the outcome is undefined (S = 0 under
    truncation).  ``u`` and ``g`` carry latent truth for synthetic data.
    """

    z: np.ndarray
    s: np.ndarray
    a: np.ndarray
    w: np.ndarray
    c: np.ndarray
    y: np.ndarray | None = None
    u: np.ndarray | None = None
    g: np.ndarray | None = None

    def __post_init__(self):
        z = _freeze(self.z, np.int8)
        n = z.size
        c = np.asarray(self.c, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        vals = {
            "z": z,
            "s": _freeze(self.s, np.int8),
            "a": _freeze(self.a),
            "w": _freeze(self.w),
            "c": _freeze(c),
            "y": _freeze(self.y),
            "u": _freeze(self.u),
            "g": _freeze(self.g, np.int8),
        }
        for name, arr in vals.items():
            if arr is not None and arr.shape[0] != n:
                raise InvalidArgumentError(f"column {name} has {arr.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, arr)
        if not (np.isin(vals["z"], (0, 1)).all() and np.isin(vals["s"], (0, 1)).all()):
            raise InvalidArgumentError("z and s must be binary")
        for name in ("a", "w", "c"):
            if not np.all(np.isfinite(vals[name])):
                raise InvalidArgumentError(f"column {name} must be finite")

    @property
    def n(self) -> int:
        return int(self.z.size)

    def __len__(self) -> int:
        return self.n

    @property
    def k(self) -> int:
        """Number of C-block covariates."""
        return int(self.c.shape[1])

    @property
    def has_latent(self) -> bool:
        return self.g is not None

    @property
    def has_outcome(self) -> bool:
        return self.y is not None

    @property
    def is_truncated(self) -> bool:
        """True when some outcome is missing (only legal where S = 0)."""
        return self.y is not None and bool(np.isnan(self.y).any())

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        kw = {f.name: (None if getattr(self, f.name) is None else getattr(self, f.name)[idx]) for f in fields(self)}
        return Dataset(**kw)

    def observed(self) -> "Dataset":
        return replace(self, u=None, g=None)

    def with_outcome(self, y) -> "Dataset":
        return replace(self, y=y)

    def equals(self, other: "Dataset") -> bool:
        for f in fields(self):
            x, y = getattr(self, f.name), getattr(other, f.name)
            if (x is None) != (y is None):
                return False
            if x is not None and not np.array_equal(x, y, equal_nan=np.issubdtype(x.dtype, np.floating)):
                return False
        return True
