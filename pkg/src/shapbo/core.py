"""Search domains, evaluated samples and seeded random streams."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when a vector does not match the dimensionality of a domain."""


@dataclass(frozen=True)
class SearchDomain:
    """Axis-aligned box with named, closed dimensions."""

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.array(self.lower, dtype=float)
        upper = np.array(self.upper, dtype=float)
        names = tuple(self.names)
        if lower.ndim != 1 or lower.shape != upper.shape or len(names) != lower.size:
            raise DimensionError(
                f"names ({len(names)}), lower {lower.shape} and upper {upper.shape} disagree"
            )
        if lower.size == 0:
            raise DimensionError("a domain needs at least one dimension")
        if not np.all(lower < upper):
            bad = [names[j] for j in np.flatnonzero(~(lower < upper))]
            raise ValueError(f"lower < upper violated for {bad}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def from_bounds(cls, bounds: Sequence[tuple[float, float]], names: Sequence[str] | None = None):
        bounds = list(bounds)
        if names is None:
            names = [f"x{j}" for j in range(len(bounds))]
        return cls(tuple(names), np.array([b[0] for b in bounds]), np.array([b[1] for b in bounds]))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown feature {name!r}; known: {self.names}") from None

    def replace(self, lower=None, upper=None) -> "SearchDomain":
        return SearchDomain(
            self.names,
            self.lower if lower is None else lower,
            self.upper if upper is None else upper,
        )

    def is_subset_of(self, other: "SearchDomain") -> bool:
        return bool(np.all(self.lower >= other.lower) and np.all(self.upper <= other.upper))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SearchDomain":
        return cls(tuple(d["names"]), np.array(d["lower"]), np.array(d["upper"]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SearchDomain):
            return NotImplemented
        return (
            self.names == other.names
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
        )

    def __hash__(self) -> int:
        return hash((self.names, self.lower.tobytes(), self.upper.tobytes()))


def _check_dim(domain: SearchDomain, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (domain.dim,):
        raise DimensionError(f"expected trailing dimension {domain.dim}, got shape {x.shape}")
    return x


def contains(domain: SearchDomain, x) -> bool:
    x = _check_dim(domain, x)
    return bool(np.all((domain.lower <= x) & (x <= domain.upper)))


def clip(domain: SearchDomain, x) -> np.ndarray:
    x = _check_dim(domain, x)
    return np.minimum(np.maximum(x, domain.lower), domain.upper)


class RngStream:
    """Seeded PCG64 stream; children are addressed by integer stream index.

    PCG64 driven by a ``SeedSequence`` is specified bit-for-bit, so a given
    ``(seed, path)`` yields identical draws on every platform.  Not safe to
    share between threads.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.path))
        )

    def child(self, *index: int) -> "RngStream":
        """Independent stream for ``index``; does not advance this stream."""
        return RngStream(self.seed, self.path + tuple(index))

    def uniform(self, low, high, size=None) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self.generator.standard_normal(size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"


def initial_design(domain: SearchDomain, n: int, rng: RngStream) -> list[np.ndarray]:
    """``n`` independent uniform draws inside ``domain``."""
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if n == 0:
        return []
    u = rng.uniform(0.0, 1.0, size=(n, domain.dim))
    xs = domain.lower + u * domain.width
    # lower + u*width can round past upper when u is close to 1
    xs = np.minimum(xs, domain.upper)
    return [row.copy() for row in xs]


@dataclass(frozen=True)
class EvaluatedSample:
    x: np.ndarray
    y: float

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        x.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))


@dataclass
class Dataset:
    """Cumulative evaluation history of one run.

    ``domain`` is the run's original domain; every sample must lie inside it.
    """

    domain: SearchDomain
    samples: list[EvaluatedSample] = field(default_factory=list)

    def __post_init__(self) -> None:
        for s in self.samples:
            self._validate(s)

    def _validate(self, sample: EvaluatedSample) -> None:
        if not contains(self.domain, sample.x):
            raise ValueError(f"sample {sample.x} lies outside the original domain")

    def add(self, x, y: float) -> EvaluatedSample:
        sample = EvaluatedSample(x, y)
        self._validate(sample)
        self.samples.append(sample)
        return sample

    def extend(self, samples: Iterable[EvaluatedSample]) -> None:
        for s in samples:
            self._validate(s)
            self.samples.append(s)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def X(self) -> np.ndarray:
        if not self.samples:
            return np.empty((0, self.domain.dim))
        return np.vstack([s.x for s in self.samples])

    @property
    def y(self) -> np.ndarray:
        return np.array([s.y for s in self.samples], dtype=float)

    def best_index(self) -> int:
        if not self.samples:
            raise ValueError("empty dataset has no best sample")
        # argmax returns the first maximum, i.e. the lowest index on ties
        return int(np.argmax(self.y))

    def best(self) -> EvaluatedSample:
        return self.samples[self.best_index()]

    def subset(self, domain: SearchDomain) -> "Dataset":
        """Samples that lie inside ``domain`` (the original domain is kept)."""
        return Dataset(self.domain, [s for s in self.samples if contains(domain, s.x)])
