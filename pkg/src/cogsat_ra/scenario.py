"""System instances: dimensions, channel gains, interference thresholds.

All powers and gains are in units normalized to the receiver noise power.
SUs are indexed globally ``k = 0 .. N*K-1``.  The canonical layout puts SU
``k`` in operator ``k // K`` and, inside that operator, in beam
``(k % K) // M``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DimensionError(ValueError):
    """Dimensions violate K = B*M or a positivity requirement."""


class ScenarioFormatError(ValueError):
    """A scenario file could not be parsed or failed validation."""


@dataclass(frozen=True)
class Dimensions:
    n_operators: int
    sus_per_operator: int
    beams: int
    subbands: int
    pus: int

    def __post_init__(self):
        for name in ("n_operators", "sus_per_operator", "beams", "subbands", "pus"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise DimensionError(f"{name} must be a positive integer, got {v!r}")
        if self.sus_per_operator != self.beams * self.subbands:
            raise DimensionError(
                f"K={self.sus_per_operator} must equal B*M={self.beams}*{self.subbands}"
            )

    @property
    def n_sus(self) -> int:
        return self.n_operators * self.sus_per_operator

    # short aliases used throughout the formulas
    N = property(lambda self: self.n_operators)
    K = property(lambda self: self.sus_per_operator)
    B = property(lambda self: self.beams)
    M = property(lambda self: self.subbands)
    L = property(lambda self: self.pus)

    def canonical_layout(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(beam_of, operator_of)`` for the canonical SU ordering."""
        k = np.arange(self.n_sus)
        return (k % self.K) // self.M, k // self.K


@dataclass(frozen=True, eq=False)
class Scenario:
    """One problem instance.

    ``gain_to_sat[k, b, m]`` is the gain from SU k to beam b of its own
    operator's satellite; ``gain_to_pu[k, l, m]`` the gain from SU k to PU l.
    """

    dims: Dimensions
    gain_to_sat: np.ndarray  # (N*K, B, M)
    gain_to_pu: np.ndarray  # (N*K, L, M)
    threshold: np.ndarray  # (L, M)
    p_max: float
    beam_of: np.ndarray  # (N*K,)
    operator_of: np.ndarray  # (N*K,)

    def __post_init__(self):
        d = self.dims
        arrays = {
            "gain_to_sat": (self.gain_to_sat, (d.n_sus, d.B, d.M)),
            "gain_to_pu": (self.gain_to_pu, (d.n_sus, d.L, d.M)),
            "threshold": (self.threshold, (d.L, d.M)),
        }
        for name, (arr, shape) in arrays.items():
            arr = np.array(arr, dtype=float)
            if arr.shape != shape:
                raise DimensionError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            if np.any(arr < 0):
                raise ValueError(f"{name} has negative entries")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.threshold <= 0):
            raise ValueError("threshold entries must be > 0")
        if not (math.isfinite(self.p_max) and self.p_max > 0):
            raise ValueError(f"p_max must be finite and > 0, got {self.p_max}")
        object.__setattr__(self, "p_max", float(self.p_max))

        for name in ("beam_of", "operator_of"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            if arr.shape != (d.n_sus,):
                raise DimensionError(f"{name} has shape {arr.shape}, expected ({d.n_sus},)")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.beam_of.min() < 0 or self.beam_of.max() >= d.B:
            raise ValueError("beam_of index out of range")
        if self.operator_of.min() < 0 or self.operator_of.max() >= d.N:
            raise ValueError("operator_of index out of range")
        counts = np.zeros((d.N, d.B), dtype=int)
        np.add.at(counts, (self.operator_of, self.beam_of), 1)
        if np.any(counts != d.M):
            raise DimensionError(
                "every (operator, beam) pair must host exactly M SUs; "
                f"got counts {counts.tolist()}"
            )

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.p_max == other.p_max
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("gain_to_sat", "gain_to_pu", "threshold", "beam_of", "operator_of")
            )
        )

    __hash__ = None

    def sus_of_operator(self, n: int) -> np.ndarray:
        return np.flatnonzero(self.operator_of == n)

    def sus_of_beam(self, n: int, b: int) -> np.ndarray:
        return np.flatnonzero((self.operator_of == n) & (self.beam_of == b))

    def own_beam_gain(self) -> np.ndarray:
        """``G[k, beam_of[k], m]`` as an (N*K, M) array."""
        return self.gain_to_sat[np.arange(self.dims.n_sus), self.beam_of, :]


@dataclass(frozen=True)
class ScenarioSpec:
    """Recipe for a random Rayleigh-fading instance.

    Off-beam satellite gains (``G[k, b, m]`` with ``b != beam_of[k]``) are
    attenuated by ``interbeam_isolation_db`` relative to the serving beam.
    ``mean_gain_pu_db = -inf`` yields ``F == 0``.
    """

    dims: Dimensions = field(default_factory=lambda: Dimensions(5, 4, 2, 2, 12))
    seed: int = 0
    mean_gain_sat_db: float = 0.0
    mean_gain_pu_db: float = -20.0
    threshold_db: float = 0.0
    p_max: float = 100.0
    interbeam_isolation_db: float = 30.0


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    d = spec.dims
    rng = np.random.default_rng(spec.seed)
    beam_of, operator_of = d.canonical_layout()

    g = rng.exponential(1.0, size=(d.n_sus, d.B, d.M)) * float(db_to_linear(spec.mean_gain_sat_db))
    off_beam = np.ones((d.n_sus, d.B, 1), dtype=bool)
    off_beam[np.arange(d.n_sus), beam_of, 0] = False
    g = np.where(off_beam, g * float(db_to_linear(-spec.interbeam_isolation_db)), g)

    f = rng.exponential(1.0, size=(d.n_sus, d.L, d.M))
    if spec.mean_gain_pu_db == -math.inf:
        f = np.zeros_like(f)
    else:
        f = f * float(db_to_linear(spec.mean_gain_pu_db))

    eta = np.full((d.L, d.M), float(db_to_linear(spec.threshold_db)))
    return Scenario(d, g, f, eta, spec.p_max, beam_of, operator_of)


# --- persistence -----------------------------------------------------------

_REQUIRED = {
    "dims": "dimensions",
    "p_max": "power cap",
    "eta": "interference threshold",
    "g": "SU-to-satellite gains",
    "f": "SU-to-PU gains",
}


def scenario_to_dict(s: Scenario) -> dict:
    d = s.dims
    return {
        "dims": {"N": d.N, "K": d.K, "B": d.B, "M": d.M, "L": d.L},
        "p_max": s.p_max,
        "eta": s.threshold.tolist(),
        "g": s.gain_to_sat.tolist(),
        "f": s.gain_to_pu.tolist(),
        "beam_of": s.beam_of.tolist(),
        "operator_of": s.operator_of.tolist(),
    }


def save_scenario(s: Scenario, path) -> None:
    # json writes floats with repr(), which round-trips exactly
    text = json.dumps(scenario_to_dict(s), indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def scenario_from_dict(doc: dict, source: str = "<dict>") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioFormatError(f"{source}: top level must be an object")
    for key, what in _REQUIRED.items():
        if key not in doc:
            raise ScenarioFormatError(f"{source}: missing field '{key}' ({what})")
    raw_dims = doc["dims"]
    try:
        dims = Dimensions(
            int(raw_dims["N"]), int(raw_dims["K"]), int(raw_dims["B"]),
            int(raw_dims["M"]), int(raw_dims["L"]),
        )
    except KeyError as exc:
        raise ScenarioFormatError(f"{source}: field 'dims' lacks key {exc}") from None
    except DimensionError as exc:
        raise ScenarioFormatError(f"{source}: field 'dims': {exc}") from None

    def array(key, dtype=float):
        try:
            return np.array(doc[key], dtype=dtype)
        except (TypeError, ValueError) as exc:
            raise ScenarioFormatError(f"{source}: field '{key}' ({_REQUIRED.get(key, key)}) "
                                      f"is not a rectangular numeric array: {exc}") from None

    beam_of, operator_of = dims.canonical_layout()
    if "beam_of" in doc:
        beam_of = array("beam_of", np.int64)
    if "operator_of" in doc:
        operator_of = array("operator_of", np.int64)
    try:
        return Scenario(
            dims, array("g"), array("f"), array("eta"), float(doc["p_max"]),
            beam_of, operator_of,
        )
    except ValueError as exc:
        raise ScenarioFormatError(f"{source}: {exc}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return scenario_from_dict(doc, source=str(path))


def spec_from_dict(doc: dict, seed=None) -> ScenarioSpec:
    """ScenarioSpec from a JSON-style dict; unknown keys are rejected."""
    doc = dict(doc)
    kw = {}
    if "dims" in doc:
        dd = doc.pop("dims")
        kw["dims"] = Dimensions(int(dd["N"]), int(dd["K"]), int(dd["B"]), int(dd["M"]), int(dd["L"]))
    names = {f.name for f in ScenarioSpec.__dataclass_fields__.values()} - {"dims"}
    for key, value in doc.items():
        if key not in names:
            raise ScenarioFormatError(f"unknown scenario spec field '{key}'")
        kw[key] = int(value) if key == "seed" else float(value)
    if seed is not None:
        kw["seed"] = int(seed)
    return ScenarioSpec(**kw)
