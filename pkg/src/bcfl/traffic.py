"""Machine identities, data streams and the 18-feature SCADA flow schema.

Also hosts min-max normalization and a seeded synthetic traffic generator
whose attack profiles perturb the feature space in documented ways.
"""

from __future__ import annotations

import csv
import enum
import ipaddress
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DoubleNormalize, EmptyDataset, InvalidRecord

FEATURE_NAMES: tuple[str, ...] = (
    "command_address",
    "response_address",
    "command_memory",
    "response_memory",
    "command_memory_count",
    "response_memory_count",
    "comm_read_function",
    "comm_write_fun",
    "resp_read_fun",
    "resp_write_fun",
    "sub_function",
    "command_length",
    "resp_length",
    "control_mode",
    "control_scheme",
    "pump",
    "crc_rate",
    "measurement",
)
N_FEATURES = len(FEATURE_NAMES)
_IDX = {name: i for i, name in enumerate(FEATURE_NAMES)}

RESPONSE_FEATURES = (
    "response_address",
    "response_memory",
    "response_memory_count",
    "resp_read_fun",
    "resp_write_fun",
    "resp_length",
)


class PublishRole(enum.Enum):
    PUBLISHER = "Publisher"
    SUBSCRIBER = "Subscriber"


class Direction(enum.Enum):
    SENDER = "Sender"
    RECEIVER = "Receiver"


class AttackKind(enum.Enum):
    COMMAND_INJECTION = "command_injection"
    RESPONSE_INJECTION = "response_injection"
    DENIAL_OF_SERVICE = "dos"


NORMAL_LABEL = "normal"
LABELS = (NORMAL_LABEL,) + tuple(k.value for k in AttackKind)


@dataclass(frozen=True)
class MachineIdentity:
    account_id: str
    address: str
    publish_role: PublishRole
    direction: Direction
    internals: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.account_id:
            raise ValueError("account_id must be non-empty")
        try:
            ipaddress.IPv6Address(self.address)
        except ipaddress.AddressValueError as exc:
            raise ValueError(f"not an IPv6 address: {self.address!r}") from exc
        if not isinstance(self.publish_role, PublishRole) or not isinstance(self.direction, Direction):
            raise ValueError("status role needs one PublishRole and one Direction")


@dataclass(frozen=True)
class AttackProfile:
    kind: AttackKind
    intensity: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.intensity <= 1.0):
            raise ValueError(f"intensity must lie in (0, 1], got {self.intensity}")


@dataclass(frozen=True)
class TrafficFlowRecord:
    """One observed command/response exchange.

    ``values`` holds the 18 features in ``FEATURE_NAMES`` order. ``label`` is
    ``None`` (unlabelled), ``"normal"`` or an ``AttackKind`` value.
    """

    values: tuple[float, ...]
    label: str | None = None

    def __post_init__(self):
        if len(self.values) != N_FEATURES:
            raise InvalidRecord(f"expected {N_FEATURES} features, got {len(self.values)}")
        if self.label is not None and self.label not in LABELS:
            raise InvalidRecord(f"unknown label {self.label!r}")

    @classmethod
    def from_features(cls, label: str | None = None, **features: float) -> "TrafficFlowRecord":
        unknown = set(features) - set(FEATURE_NAMES)
        if unknown:
            raise InvalidRecord(f"unknown features: {sorted(unknown)}")
        return cls(tuple(float(features.get(n, 0.0)) for n in FEATURE_NAMES), label)

    def __getitem__(self, name: str) -> float:
        return self.values[_IDX[name]]

    @property
    def is_anomalous(self) -> bool:
        return self.label is not None and self.label != NORMAL_LABEL


@dataclass(frozen=True)
class DataStream:
    stream_id: int
    size_kb: float
    timestamp: str
    sender: MachineIdentity
    receiver: MachineIdentity
    flow: TrafficFlowRecord

    def __post_init__(self):
        if self.stream_id <= 0:
            raise ValueError("stream_id must be positive")
        if self.size_kb < 0:
            raise ValueError("size_kb must be non-negative")
        if self.sender.account_id == self.receiver.account_id:
            raise ValueError("sender and receiver must differ")

    def summary(self) -> dict:
        """Ledger-safe description of the stream; carries no flow features."""
        return {
            "stream_id": self.stream_id,
            "size_kb": float(self.size_kb),
            "timestamp": self.timestamp,
            "sender": self.sender.account_id,
            "receiver": self.receiver.account_id,
        }


@dataclass(frozen=True)
class FeatureVector:
    values: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self):
        if len(self.values) != N_FEATURES:
            raise InvalidRecord(f"feature vector must have {N_FEATURES} entries")
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidRecord("feature vector contains non-finite values")
        if self.normalized and not all(0.0 <= v <= 1.0 for v in self.values):
            raise InvalidRecord("normalized vector outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class NormalizerStats:
    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    fitted_on: int

    def __post_init__(self):
        if len(self.mins) != N_FEATURES or len(self.maxs) != N_FEATURES:
            raise ValueError("normalizer needs 18 (min, max) pairs")
        if any(lo > hi for lo, hi in zip(self.mins, self.maxs)):
            raise ValueError("min exceeds max")
        if self.fitted_on < 1:
            raise ValueError("fitted_on must be >= 1")

    def to_dict(self) -> dict:
        return {"mins": list(self.mins), "maxs": list(self.maxs), "fitted_on": self.fitted_on}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizerStats":
        return cls(tuple(map(float, d["mins"])), tuple(map(float, d["maxs"])), int(d["fitted_on"]))


def extract_features(record: TrafficFlowRecord) -> FeatureVector:
    values = tuple(float(v) for v in record.values)
    if not all(math.isfinite(v) for v in values):
        raise InvalidRecord("record contains non-finite feature values")
    return FeatureVector(values, normalized=False)


def fit_normalizer(records: Sequence[TrafficFlowRecord]) -> NormalizerStats:
    if not records:
        raise EmptyDataset("cannot fit a normalizer on zero records")
    data = np.array([extract_features(r).values for r in records], dtype=np.float64)
    return NormalizerStats(
        tuple(float(v) for v in data.min(axis=0)),
        tuple(float(v) for v in data.max(axis=0)),
        len(records),
    )


def normalize(vector: FeatureVector, stats: NormalizerStats) -> FeatureVector:
    if vector.normalized:
        raise DoubleNormalize("vector is already normalized")
    out = []
    for v, lo, hi in zip(vector.values, stats.mins, stats.maxs):
        if hi == lo:
            out.append(0.0)
        else:
            out.append(min(1.0, max(0.0, (v - lo) / (hi - lo))))
    return FeatureVector(tuple(out), normalized=True)


def prepare(records: Iterable[TrafficFlowRecord], stats: NormalizerStats) -> list[FeatureVector]:
    """extract_features followed by normalize, over many records."""
    return [normalize(extract_features(r), stats) for r in records]


# --- synthetic traffic -------------------------------------------------------
#
# Baseline generator for normal traffic. Every feature is drawn from one of
# the documented distributions below; correlated features are derived from
# the command side so an autoencoder has structure to learn.

BASELINE = {
    "address_ids": (1, 4),          # command_address uniform integer, response mirrors it
    "memory_mean": 120.0,           # command_memory ~ N(mean, sd)
    "memory_sd": 8.0,
    "memory_echo_sd": 1.0,          # response_memory = command_memory + N(0, sd)
    "memory_count": (8, 12),        # uniform integer, response mirrors it
    "read_probability": 0.7,        # read vs write function codes
    "sub_functions": (0, 2),        # uniform integer
    "command_length": (16, 24),     # uniform integer bytes
    "resp_header": 8,               # resp_length = header + 2 * response_memory_count
    "control_mode_p": (0.1, 0.2, 0.7),  # off / manual / auto
    "control_scheme_p": (0.6, 0.4),
    "pump_on_probability": 0.5,
    "crc_lambda": 0.5,              # crc_rate ~ Poisson(lambda)
    "setpoint": 50.0,               # measurement ~ N(setpoint, sd)
    "measurement_sd": 2.0,
}

# Perturbation magnitudes at intensity 1.0; scaled linearly by intensity.
ATTACK_SHIFT = {
    "command_memory": 60.0,
    "sub_function": 5.0,
    "measurement": 25.0,
    "response_memory": 60.0,
    "decouple_span": 30.0,
    "crc_rate": 20.0,
}


def _normal_row(rng: np.random.Generator) -> np.ndarray:
    b = BASELINE
    row = np.zeros(N_FEATURES)
    addr = rng.integers(b["address_ids"][0], b["address_ids"][1] + 1)
    mem = rng.normal(b["memory_mean"], b["memory_sd"])
    count = rng.integers(b["memory_count"][0], b["memory_count"][1] + 1)
    read = 1.0 if rng.random() < b["read_probability"] else 0.0
    row[_IDX["command_address"]] = addr
    row[_IDX["response_address"]] = addr
    row[_IDX["command_memory"]] = mem
    row[_IDX["response_memory"]] = mem + rng.normal(0.0, b["memory_echo_sd"])
    row[_IDX["command_memory_count"]] = count
    row[_IDX["response_memory_count"]] = count
    row[_IDX["comm_read_function"]] = read
    row[_IDX["comm_write_fun"]] = 1.0 - read
    row[_IDX["resp_read_fun"]] = read
    row[_IDX["resp_write_fun"]] = 1.0 - read
    row[_IDX["sub_function"]] = rng.integers(b["sub_functions"][0], b["sub_functions"][1] + 1)
    row[_IDX["command_length"]] = rng.integers(b["command_length"][0], b["command_length"][1] + 1)
    row[_IDX["resp_length"]] = b["resp_header"] + 2 * count
    row[_IDX["control_mode"]] = rng.choice(3, p=b["control_mode_p"])
    row[_IDX["control_scheme"]] = rng.choice(2, p=b["control_scheme_p"])
    row[_IDX["pump"]] = 1.0 if rng.random() < b["pump_on_probability"] else 0.0
    row[_IDX["crc_rate"]] = rng.poisson(b["crc_lambda"])
    row[_IDX["measurement"]] = rng.normal(b["setpoint"], b["measurement_sd"])
    return row


def _perturb(row: np.ndarray, profile: AttackProfile, rng: np.random.Generator) -> np.ndarray:
    s = profile.intensity
    out = row.copy()
    if profile.kind is AttackKind.COMMAND_INJECTION:
        out[_IDX["command_memory"]] += s * ATTACK_SHIFT["command_memory"]
        out[_IDX["comm_read_function"]] = 0.0
        out[_IDX["comm_write_fun"]] = 1.0
        out[_IDX["sub_function"]] += s * ATTACK_SHIFT["sub_function"]
        out[_IDX["measurement"]] += s * ATTACK_SHIFT["measurement"]
    elif profile.kind is AttackKind.RESPONSE_INJECTION:
        span = s * ATTACK_SHIFT["decouple_span"]
        out[_IDX["measurement"]] = BASELINE["setpoint"] + rng.uniform(-span, span)
        out[_IDX["control_mode"]] = rng.integers(0, 3)
        out[_IDX["response_memory"]] += s * ATTACK_SHIFT["response_memory"]
    else:
        out[_IDX["crc_rate"]] += s * ATTACK_SHIFT["crc_rate"]
        for name in RESPONSE_FEATURES:
            out[_IDX[name]] *= 1.0 - s
    return out


def generate_traffic(
    seed: int, n_normal: int, n_anomalous: int, profile: AttackProfile
) -> list[TrafficFlowRecord]:
    """Seeded normal records followed by ``n_anomalous`` perturbed ones."""
    if n_normal < 0 or n_anomalous < 0:
        raise ValueError("counts must be non-negative")
    if n_normal + n_anomalous < 1:
        raise EmptyDataset("generate_traffic needs at least one record")
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(n_normal):
        records.append(TrafficFlowRecord(tuple(float(v) for v in _normal_row(rng)), NORMAL_LABEL))
    for _ in range(n_anomalous):
        row = _perturb(_normal_row(rng), profile, rng)
        records.append(TrafficFlowRecord(tuple(float(v) for v in row), profile.kind.value))
    return records


def baseline_crc_moments() -> tuple[float, float]:
    """(mean, standard deviation) of the normal crc_rate distribution."""
    lam = BASELINE["crc_lambda"]
    return lam, math.sqrt(lam)


# --- files -------------------------------------------------------------------

CSV_HEADER = FEATURE_NAMES + ("label",)


def write_flow_csv(records: Sequence[TrafficFlowRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([repr(float(v)) for v in r.values] + [r.label or ""])
    return path


def read_flow_csv(path: str | Path) -> list[TrafficFlowRecord]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_HEADER:
            raise InvalidRecord(f"unexpected header in {path}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise InvalidRecord(f"{path}:{lineno}: expected {len(CSV_HEADER)} columns")
            try:
                values = tuple(float(v) for v in row[:N_FEATURES])
            except ValueError as exc:
                raise InvalidRecord(f"{path}:{lineno}: {exc}") from exc
            out.append(TrafficFlowRecord(values, row[-1] or None))
    return out


def write_metadata(params: dict, path: str | Path) -> Path:
    """Echo generator parameters as sorted key=value lines."""
    path = Path(path)
    path.write_text("".join(f"{k}={params[k]}\n" for k in sorted(params)), encoding="utf-8")
    return path
