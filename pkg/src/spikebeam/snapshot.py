"""Portable flat-binary policy snapshots.

Layout (all little-endian)::

    magic      8 bytes  b"SPKBEAM\\0"
    version    uint32
    backend    uint8    (0 spiking, 1 dense)
    K          uint32
    power_fill float64
    lif        5 x float64 (leak, threshold, reset, steps, sharpness) + uint8 detach_reset
    n_nets     uint32   (1 actor only, 2 actor + critic)
    per net:   uint32 n_dims, n_dims x uint32 dims, then W0, b0, W1, b1, ... as float64
    log_std    (2K - 1) x float64

Weights are stored row-major with the (fan_in, fan_out) shape implied by dims.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .rl import GaussianPolicy, TrainConfig, ValueHead, build_network
from .snn import LifParams

MAGIC = b"SPKBEAM\x00"
FORMAT_VERSION = 1
_BACKENDS = {"spiking": 0, "dense": 1}


class SnapshotError(ValueError):
    """Unreadable or corrupt snapshot."""


class SnapshotMismatch(SnapshotError):
    """Well-formed snapshot that does not fit the requested scenario."""


def _pack_net(net) -> bytes:
    dims = net.layer_dims
    parts = [struct.pack("<I", len(dims)), struct.pack(f"<{len(dims)}I", *dims)]
    for p in net.params:
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return b"".join(parts)


def dumps(policy: GaussianPolicy, critic: ValueHead | None = None) -> bytes:
    net = policy.net
    lif = getattr(net, "lif", None) or LifParams()
    head = [
        MAGIC,
        struct.pack("<IBI", FORMAT_VERSION, _BACKENDS[net.kind], policy.num_vehicles),
        struct.pack("<d", policy.power_fill),
        struct.pack("<5dB", lif.leak, lif.threshold, lif.reset, float(lif.steps), lif.sharpness,
                    int(lif.detach_reset)),
        struct.pack("<I", 1 if critic is None else 2),
        _pack_net(net),
    ]
    if critic is not None:
        head.append(_pack_net(critic.net))
    head.append(np.ascontiguousarray(policy.log_std, dtype="<f8").tobytes())
    return b"".join(head)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise SnapshotError("snapshot is truncated")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, n: int) -> np.ndarray:
        size = 8 * n
        if self.pos + size > len(self.data):
            raise SnapshotError("snapshot is truncated")
        out = np.frombuffer(self.data, dtype="<f8", count=n, offset=self.pos).astype(float)
        self.pos += size
        return out


def _read_net(reader: _Reader) -> tuple[tuple[int, ...], list[np.ndarray]]:
    (n,) = reader.take("<I")
    if not 2 <= n <= 64:
        raise SnapshotError(f"implausible layer count {n}")
    dims = reader.take(f"<{n}I")
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.append(reader.array(fan_in * fan_out).reshape(fan_in, fan_out))
        params.append(reader.array(fan_out))
    return tuple(dims), params


def loads(data: bytes, scenario: ScenarioConfig) -> tuple[GaussianPolicy, ValueHead | None]:
    """Rebuild (actor, critic) for ``scenario``; raises SnapshotError on any mismatch."""
    if data[:8] != MAGIC:
        raise SnapshotError("not a policy snapshot (bad magic)")
    reader = _Reader(data)
    reader.pos = 8
    version, code, k = reader.take("<IBI")
    if version != FORMAT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}")
    kinds = {v: name for name, v in _BACKENDS.items()}
    if code not in kinds:
        raise SnapshotError(f"unknown backend code {code}")
    (fill,) = reader.take("<d")
    leak, th, reset, steps, sharp, detach = reader.take("<5dB")
    n_nets, = reader.take("<I")
    if n_nets not in (1, 2):
        raise SnapshotError(f"bad network count {n_nets}")
    if k != scenario.num_vehicles:
        raise SnapshotMismatch(f"snapshot is for K={k}, scenario has K={scenario.num_vehicles}")
    try:
        lif = LifParams(leak=leak, threshold=th, reset=reset, steps=int(steps), sharpness=sharp,
                        detach_reset=bool(detach))
    except ValueError as exc:
        raise SnapshotError(f"bad neuron parameters: {exc}") from exc
    nets = []
    for _ in range(n_nets):
        dims, params = _read_net(reader)
        tcfg = TrainConfig(hidden=tuple(dims[1:-1]), lif=lif)
        net = build_network(kinds[code], dims, tcfg, np.random.default_rng(0))
        net.set_params(params)
        nets.append(net)
    if nets[0].layer_dims[0] != scenario.obs_dim:
        raise SnapshotMismatch(f"actor input width {nets[0].layer_dims[0]} != observation size {scenario.obs_dim}")
    try:
        policy = GaussianPolicy(nets[0], scenario, power_fill=fill)
    except ValueError as exc:
        raise SnapshotMismatch(str(exc)) from exc
    policy.log_std[:] = reader.array(policy.action_dim)
    if reader.pos != len(data):
        raise SnapshotError("trailing bytes after snapshot")
    critic = ValueHead(nets[1]) if n_nets == 2 else None
    return policy, critic


def save(path: str | Path, policy: GaussianPolicy, critic: ValueHead | None = None) -> None:
    Path(path).write_bytes(dumps(policy, critic))


def load(path: str | Path, scenario: ScenarioConfig) -> tuple[GaussianPolicy, ValueHead | None]:
    return loads(Path(path).read_bytes(), scenario)
