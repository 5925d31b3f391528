"""Discrete design spaces: variable definitions, validation, indexing and sampling.

A design space is a full Cartesian grid over an ordered list of variables.
Every variable is stored as an ordered list of admissible levels; points carry
both the level indices and the physical values.

Flat indices are mixed-radix with the *last* variable varying fastest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

KINDS = ("categorical", "discrete-integer", "discretized-continuous")
DEFAULT_NUM_LEVELS = 30
MAX_CARDINALITY = 2**63 - 1


class DesignSpaceError(ValueError):
    """Invalid design-space configuration or point."""


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    levels: tuple

    def __post_init__(self):
        if not isinstance(self.name, str) or not self.name:
            raise DesignSpaceError(f"variable name must be a non-empty string, got {self.name!r}")
        if self.kind not in KINDS:
            raise DesignSpaceError(f"{self.name}: unknown kind {self.kind!r} (expected one of {KINDS})")
        if len(self.levels) == 0:
            raise DesignSpaceError(f"{self.name}: empty levels")
        if len(set(self.levels)) != len(self.levels):
            raise DesignSpaceError(f"{self.name}: duplicate levels")
        if self.kind == "discretized-continuous":
            lv = np.asarray(self.levels, dtype=float)
            if not np.all(np.isfinite(lv)):
                raise DesignSpaceError(f"{self.name}: non-finite levels")
            if lv.size > 1:
                steps = np.diff(lv)
                if np.any(steps <= 0):
                    raise DesignSpaceError(f"{self.name}: levels must be strictly increasing")
                span = abs(lv[-1] - lv[0])
                if np.max(np.abs(steps - steps.mean())) > 1e-9 * max(span, 1.0):
                    raise DesignSpaceError(f"{self.name}: levels are not evenly spaced")

    @property
    def size(self) -> int:
        return len(self.levels)

    @classmethod
    def from_bounds(cls, name: str, lower: float, upper: float,
                    num_levels: int = DEFAULT_NUM_LEVELS) -> "VariableSpec":
        """Discretized-continuous variable on an inclusive evenly spaced grid."""
        if num_levels < 1:
            raise DesignSpaceError(f"{name}: num_levels must be >= 1")
        if num_levels == 1:
            if lower != upper:
                raise DesignSpaceError(f"{name}: one level requires lower == upper")
            return cls(name, "discretized-continuous", (float(lower),))
        if not upper > lower:
            raise DesignSpaceError(f"{name}: upper bound must exceed lower bound")
        grid = np.linspace(float(lower), float(upper), int(num_levels))
        return cls(name, "discretized-continuous", tuple(float(v) for v in grid))


@dataclass(frozen=True)
class DesignPoint:
    indices: tuple
    values: tuple


@dataclass(frozen=True)
class DesignSpace:
    variables: tuple
    cardinality: int = field(init=False)

    def __post_init__(self):
        if len(self.variables) < 1:
            raise DesignSpaceError("a design space needs at least one variable")
        names = [v.name for v in self.variables]
        for name in names:
            if names.count(name) > 1:
                raise DesignSpaceError(f"{name}: duplicate variable name")
        card = 1
        for v in self.variables:
            card *= v.size
            if card > MAX_CARDINALITY:
                raise DesignSpaceError(f"{v.name}: cardinality overflow (exceeds 2**63 - 1)")
        object.__setattr__(self, "cardinality", card)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    @property
    def sizes(self) -> list[int]:
        return [v.size for v in self.variables]

    def __len__(self) -> int:
        return len(self.variables)

    def point(self, indices: Sequence[int]) -> DesignPoint:
        """Build a validated point from level indices."""
        idx = tuple(int(i) for i in indices)
        if len(idx) != len(self.variables):
            raise DesignSpaceError(f"expected {len(self.variables)} indices, got {len(idx)}")
        for i, v in zip(idx, self.variables):
            if not 0 <= i < v.size:
                raise DesignSpaceError(f"{v.name}: level index {i} out of range [0, {v.size})")
        return DesignPoint(idx, tuple(v.levels[i] for i, v in zip(idx, self.variables)))

    def validate(self, p: DesignPoint) -> DesignPoint:
        q = self.point(p.indices)
        if q.values != tuple(p.values):
            raise DesignSpaceError("point values do not match its level indices")
        return p

    def assignment(self, p: DesignPoint) -> dict[str, Any]:
        """Named physical values of a point, as plain Python scalars."""
        return {v.name: _plain(val) for v, val in zip(self.variables, p.values)}

    def index_array(self, points: Iterable[DesignPoint]) -> np.ndarray:
        rows = [p.indices for p in points]
        return np.asarray(rows, dtype=np.int64).reshape(len(rows), len(self.variables))

    def points(self, index_array: np.ndarray) -> list[DesignPoint]:
        return [self.point(row) for row in np.asarray(index_array)]

    def enumerate_indices(self) -> np.ndarray:
        """All grid points as an index array, in flat-index order."""
        if self.cardinality > 10**7:
            raise DesignSpaceError(f"refusing to enumerate {self.cardinality} points")
        return unravel(self, np.arange(self.cardinality, dtype=np.int64))

    def to_config(self) -> dict:
        out = []
        for v in self.variables:
            out.append({"name": v.name, "kind": v.kind, "levels": [_plain(x) for x in v.levels]})
        return {"variables": out}


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    return x


def _radix_strides(space: DesignSpace) -> list[int]:
    strides = [1] * len(space.variables)
    for n in range(len(space.variables) - 2, -1, -1):
        strides[n] = strides[n + 1] * space.variables[n + 1].size
    return strides


def flat_index(space: DesignSpace, p: DesignPoint) -> int:
    """Mixed-radix index of ``p`` in ``[0, cardinality)``; last variable fastest."""
    idx = p.indices
    if len(idx) != len(space.variables):
        raise DesignSpaceError(f"expected {len(space.variables)} indices, got {len(idx)}")
    out = 0
    for i, v in zip(idx, space.variables):
        if not 0 <= i < v.size:
            raise DesignSpaceError(f"{v.name}: level index {i} out of range [0, {v.size})")
        out = out * v.size + int(i)
    return out


def point_from_flat_index(space: DesignSpace, k: int) -> DesignPoint:
    k = int(k)
    if not 0 <= k < space.cardinality:
        raise DesignSpaceError(f"flat index {k} out of range [0, {space.cardinality})")
    idx = []
    for stride, v in zip(_radix_strides(space), space.variables):
        q, k = divmod(k, stride)
        idx.append(q)
    return space.point(idx)


def ravel(space: DesignSpace, index_array: np.ndarray) -> np.ndarray:
    """Vectorized flat_index for an (n, N) index array."""
    arr = np.asarray(index_array, dtype=np.int64)
    return arr @ np.asarray(_radix_strides(space), dtype=np.int64)


def unravel(space: DesignSpace, flat: np.ndarray) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.int64)
    cols = []
    for stride, v in zip(_radix_strides(space), space.variables):
        cols.append((flat // stride) % v.size)
    return np.stack(cols, axis=-1)


def sample_indices(space: DesignSpace, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` uniform grid points (with replacement) as an index array."""
    if count < 1:
        raise DesignSpaceError("count must be >= 1")
    cols = [rng.integers(0, v.size, size=count) for v in space.variables]
    return np.stack(cols, axis=1).astype(np.int64)


def sample_uniform(space: DesignSpace, count: int, seed) -> list[DesignPoint]:
    """Draw ``count`` independent uniform points from the full grid.

    ``seed`` may be an integer or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return space.points(sample_indices(space, count, rng))


# -- config loading ---------------------------------------------------------

def _parse_variable(entry: Mapping) -> VariableSpec:
    if not isinstance(entry, Mapping):
        raise DesignSpaceError(f"variable entry must be a mapping, got {entry!r}")
    name = entry.get("name")
    if not isinstance(name, str) or not name:
        raise DesignSpaceError(f"variable entry without a valid name: {dict(entry)!r}")
    kind = entry.get("kind")
    if kind not in KINDS:
        raise DesignSpaceError(f"{name}: unknown kind {kind!r} (expected one of {KINDS})")
    allowed = {"name", "kind", "levels", "lower", "upper", "num_levels"}
    extra = set(entry) - allowed
    if extra:
        raise DesignSpaceError(f"{name}: unknown keys {sorted(extra)}")
    has_levels = "levels" in entry
    has_bounds = "lower" in entry or "upper" in entry
    if has_levels == has_bounds:
        raise DesignSpaceError(f"{name}: give either 'levels' or 'lower'/'upper'")

    if has_levels:
        levels = entry["levels"]
        if not isinstance(levels, list):
            raise DesignSpaceError(f"{name}: 'levels' must be a list")
        if not levels:
            raise DesignSpaceError(f"{name}: empty levels")
        if kind == "discrete-integer":
            if not all(isinstance(x, int) and not isinstance(x, bool) for x in levels):
                raise DesignSpaceError(f"{name}: discrete-integer levels must be integers")
        elif kind == "discretized-continuous":
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in levels):
                raise DesignSpaceError(f"{name}: discretized-continuous levels must be numbers")
            levels = [float(x) for x in levels]
        return VariableSpec(name, kind, tuple(levels))

    if kind == "categorical":
        raise DesignSpaceError(f"{name}: categorical variables need explicit 'levels'")
    if "lower" not in entry or "upper" not in entry:
        raise DesignSpaceError(f"{name}: both 'lower' and 'upper' are required")
    lower, upper = entry["lower"], entry["upper"]
    for b in (lower, upper):
        if not isinstance(b, (int, float)) or isinstance(b, bool) or not math.isfinite(b):
            raise DesignSpaceError(f"{name}: bounds must be finite numbers")
    if kind == "discrete-integer":
        if "num_levels" in entry:
            raise DesignSpaceError(f"{name}: discrete-integer ranges use unit steps, drop 'num_levels'")
        if not (isinstance(lower, int) and isinstance(upper, int)):
            raise DesignSpaceError(f"{name}: discrete-integer bounds must be integers")
        if upper < lower:
            raise DesignSpaceError(f"{name}: upper bound below lower bound")
        return VariableSpec(name, kind, tuple(range(lower, upper + 1)))
    num = entry.get("num_levels", DEFAULT_NUM_LEVELS)
    if not isinstance(num, int) or isinstance(num, bool) or num < 1:
        raise DesignSpaceError(f"{name}: num_levels must be a positive integer")
    if num > 1 and not upper > lower:
        raise DesignSpaceError(f"{name}: bounds must be increasing")
    return VariableSpec.from_bounds(name, lower, upper, num)


def space_from_dict(doc: Mapping) -> DesignSpace:
    if not isinstance(doc, Mapping) or "variables" not in doc:
        raise DesignSpaceError("config must be a mapping with a top-level 'variables' list")
    entries = doc["variables"]
    if not isinstance(entries, list) or not entries:
        raise DesignSpaceError("'variables' must be a non-empty list")
    return DesignSpace(tuple(_parse_variable(e) for e in entries))


def load_space(config) -> DesignSpace:
    """Load a design space from a YAML document.

    ``config`` may be a path, a YAML string, or an already-parsed mapping.
    """
    if isinstance(config, Mapping):
        return space_from_dict(config)
    if isinstance(config, Path) or (isinstance(config, str) and "\n" not in config
                                    and Path(config).exists()):
        text = Path(config).read_text(encoding="utf-8")
    else:
        text = config
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise DesignSpaceError(f"cannot parse config: {exc}") from exc
    return space_from_dict(doc)


def builtin_config(name: str) -> Path:
    """Path of a config shipped with the package (``reactor``, ``caprylic``, ``dwc``)."""
    from importlib import resources

    stem = name[:-4] if name.endswith(".cfg") else name
    path = Path(str(resources.files("vaebo") / "configs" / f"{stem}.cfg"))
    if not path.exists():
        raise DesignSpaceError(f"no built-in config named {name!r}")
    return path
