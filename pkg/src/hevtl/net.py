"""Shared-trunk actor-critic MLP with hand-written backprop.

The policy is a tanh-squashed Gaussian over engine torque with a
state-independent log standard deviation. All weights live in one flat
vector so a checkpoint is just (layout, vector, metadata).
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hevtl.errors import CheckpointFormatError, DomainError, GradientError, TransferIncompatibilityError

FORMAT_VERSION = 1
MAGIC = b"HEVTLCKPT"

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
ACTION_LOW, ACTION_HIGH = 0.0, 115.0
ACTION_HALF = 0.5 * (ACTION_HIGH - ACTION_LOW)
ACTION_MID = 0.5 * (ACTION_HIGH + ACTION_LOW)
ATANH_CLIP = 1.0 - 1e-6
LOG_2PI = math.log(2.0 * math.pi)

_ACTIVATIONS = ("tanh", "identity")


@dataclass(frozen=True)
class NetLayout:
    obs_dim: int = 3
    hidden: tuple = (64, 64)
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.obs_dim < 1 or any(h < 1 for h in self.hidden):
            raise DomainError("layer sizes must be positive")
        if self.activation not in _ACTIVATIONS:
            raise DomainError(f"activation must be one of {_ACTIVATIONS}")

    def shapes(self):
        """(name, shape) for every parameter block, in flat-vector order."""
        out = []
        sizes = (self.obs_dim,) + self.hidden
        for k in range(len(self.hidden)):
            out.append((f"trunk{k}.W", (sizes[k + 1], sizes[k])))
            out.append((f"trunk{k}.b", (sizes[k + 1],)))
        top = sizes[-1]
        out += [("mean.W", (1, top)), ("mean.b", (1,)),
                ("value.W", (1, top)), ("value.b", (1,)), ("log_std", (1,))]
        return out

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def to_dict(self):
        return {"obs_dim": self.obs_dim, "hidden": list(self.hidden), "activation": self.activation}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["obs_dim"]), tuple(d["hidden"]), d["activation"])


@dataclass(frozen=True)
class PolicyParams:
    vector: np.ndarray
    layout: NetLayout = field(default_factory=NetLayout)
    version: int = FORMAT_VERSION

    def __post_init__(self):
        vec = np.array(self.vector, dtype=np.float64)
        if vec.shape != (self.layout.size,):
            raise DomainError(f"parameter vector has {vec.size} entries, layout needs {self.layout.size}")
        if not np.all(np.isfinite(vec)):
            raise DomainError("parameter vector has non-finite entries")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    def blocks(self) -> dict:
        """Named read-only views into the flat vector."""
        out, i = {}, 0
        for name, shape in self.layout.shapes():
            n = int(np.prod(shape))
            out[name] = self.vector[i:i + n].reshape(shape)
            i += n
        return out

    def with_vector(self, vec) -> "PolicyParams":
        return PolicyParams(vec, self.layout, self.version)

    def digest(self) -> str:
        return hashlib.sha256(self.vector.tobytes()).hexdigest()


@dataclass(frozen=True)
class PolicyOutput:
    mean: np.ndarray
    log_std: float
    value: np.ndarray

    @property
    def std(self) -> float:
        return math.exp(self.log_std)


def _orthogonal(rng, shape, gain):
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_params(layout: NetLayout | None = None, seed: int = 0, log_std: float = 0.0) -> PolicyParams:
    """Orthogonal init; output heads scaled by 0.01 so the first policy is nearly flat."""
    layout = layout or NetLayout()
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in layout.shapes():
        if name.endswith(".b"):
            parts.append(np.zeros(shape))
        elif name == "log_std":
            parts.append(np.full(shape, float(log_std)))
        else:
            gain = 0.01 if name.startswith(("mean", "value")) else math.sqrt(2.0)
            parts.append(_orthogonal(rng, shape, gain))
    return PolicyParams(np.concatenate([p.ravel() for p in parts]), layout)


def _act(name, z):
    return np.tanh(z) if name == "tanh" else z


def _forward_cached(params: PolicyParams, obs):
    x = np.atleast_2d(np.asarray(obs, dtype=float))
    if x.shape[1] != params.layout.obs_dim:
        raise DomainError(f"observation width {x.shape[1]} != {params.layout.obs_dim}")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite observation")
    b = params.blocks()
    acts = [x]
    h = x
    for k in range(len(params.layout.hidden)):
        h = _act(params.layout.activation, h @ b[f"trunk{k}.W"].T + b[f"trunk{k}.b"])
        acts.append(h)
    mean = (h @ b["mean.W"].T + b["mean.b"])[:, 0]
    value = (h @ b["value.W"].T + b["value.b"])[:, 0]
    raw_ls = float(b["log_std"][0])
    log_std = min(max(raw_ls, LOG_STD_MIN), LOG_STD_MAX)
    return PolicyOutput(mean, log_std, value), acts


def forward(params: PolicyParams, obs) -> PolicyOutput:
    """Batched forward pass on normalized observations, shape (B, obs_dim) or (obs_dim,)."""
    out, _ = _forward_cached(params, obs)
    return out


def backward(params: PolicyParams, obs, d_mean, d_value, d_log_std: float = 0.0) -> np.ndarray:
    """Chain upstream gradients on (mean, value, log_std) back to every parameter.

    ``d_mean`` and ``d_value`` are per-sample gradients of a scalar loss, so
    batch reduction is the caller's job. Returns a flat vector aligned with
    ``params.vector``.
    """
    _, acts = _forward_cached(params, obs)
    b = params.blocks()
    d_mean = np.asarray(d_mean, dtype=float).reshape(-1, 1)
    d_value = np.asarray(d_value, dtype=float).reshape(-1, 1)
    h = acts[-1]
    grads = {
        "mean.W": d_mean.T @ h, "mean.b": d_mean.sum(axis=0),
        "value.W": d_value.T @ h, "value.b": d_value.sum(axis=0),
    }
    raw_ls = float(b["log_std"][0])
    inside = LOG_STD_MIN <= raw_ls <= LOG_STD_MAX
    grads["log_std"] = np.array([d_log_std if inside else 0.0])
    dh = d_mean @ b["mean.W"] + d_value @ b["value.W"]
    for k in range(len(params.layout.hidden) - 1, -1, -1):
        out = acts[k + 1]
        dz = dh * (1.0 - out * out) if params.layout.activation == "tanh" else dh
        grads[f"trunk{k}.W"] = dz.T @ acts[k]
        grads[f"trunk{k}.b"] = dz.sum(axis=0)
        if not (np.all(np.isfinite(grads[f"trunk{k}.W"])) and np.all(np.isfinite(dz))):
            raise GradientError(f"non-finite gradient in trunk{k}")
        dh = dz @ b[f"trunk{k}.W"]
    for name in ("mean.W", "value.W", "log_std"):
        if not np.all(np.isfinite(grads[name])):
            raise GradientError(f"non-finite gradient in {name}")
    return np.concatenate([np.ravel(grads[name]) for name, _ in params.layout.shapes()])


def squash(u):
    return ACTION_MID + ACTION_HALF * np.tanh(u)


def unsquash(action):
    """Pre-image of an action, with the tanh argument clipped away from +-1."""
    y = np.clip((np.asarray(action, dtype=float) - ACTION_MID) / ACTION_HALF, -ATANH_CLIP, ATANH_CLIP)
    return np.arctanh(y), y


def action_log_prob(mean, log_std, action):
    """Log density of the squashed Gaussian at ``action`` (includes the tanh Jacobian)."""
    u, y = unsquash(action)
    z = (u - mean) * math.exp(-log_std)
    return -0.5 * z * z - log_std - 0.5 * LOG_2PI - math.log(ACTION_HALF) - np.log1p(-y * y)


def gaussian_entropy(log_std: float) -> float:
    """Entropy of the pre-squash Gaussian."""
    return 0.5 + 0.5 * LOG_2PI + log_std


def sample_action(out: PolicyOutput, rng: np.random.Generator):
    """Draw torque(s) and their log-probabilities.

    The log-probability is evaluated from the returned action, so it agrees
    exactly with a later ``log_prob_and_entropy`` on the same input.
    """
    mean = np.asarray(out.mean, dtype=float)
    u = mean + out.std * rng.standard_normal(mean.shape)
    action = np.clip(squash(u), ACTION_LOW, ACTION_HIGH)
    return action, action_log_prob(mean, out.log_std, action)


def deterministic_action(out: PolicyOutput):
    return squash(np.asarray(out.mean, dtype=float))


def log_prob_and_entropy(params: PolicyParams, obs, action):
    a = np.asarray(action, dtype=float)
    if np.any(a < ACTION_LOW) or np.any(a > ACTION_HIGH):
        raise DomainError(f"action outside [{ACTION_LOW}, {ACTION_HIGH}]")
    out = forward(params, obs)
    return action_log_prob(out.mean, out.log_std, a), gaussian_entropy(out.log_std)


# -- checkpoints -----------------------------------------------------------

def save_params(params: PolicyParams, path, metadata: dict | None = None) -> None:
    """Binary checkpoint: magic, JSON header, little-endian float64 vector."""
    header = {
        "format_version": params.version,
        "layout": params.layout.to_dict(),
        "size": int(params.vector.size),
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.vector.astype("<f8").tobytes())


def read_checkpoint(path):
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC) or len(data) < len(MAGIC) + 4:
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    (n,) = struct.unpack("<I", data[off:off + 4])
    off += 4
    try:
        header = json.loads(data[off:off + n].decode("utf-8"))
        version = int(header["format_version"])
        layout = NetLayout.from_dict(header["layout"])
        size = int(header["size"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt header ({exc})") from None
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    body = data[off + n:]
    if len(body) != 8 * size or size != layout.size:
        raise CheckpointFormatError(f"{path}: parameter block truncated or mis-sized")
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    try:
        params = PolicyParams(vec, layout, version)
    except DomainError as exc:
        raise CheckpointFormatError(f"{path}: {exc}") from None
    return params, header.get("metadata", {})


def load_params(path, expected_layout: NetLayout | None = None) -> PolicyParams:
    params, _ = read_checkpoint(path)
    if expected_layout is not None and params.layout != expected_layout:
        raise TransferIncompatibilityError(
            f"checkpoint layout {params.layout.to_dict()} != expected {expected_layout.to_dict()}")
    return params
