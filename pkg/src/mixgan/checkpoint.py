"""Single-file checkpoint container and loss-history CSV sidecar.

Layout (little-endian)::

    b"MXGN" | version:u32 | metadata_len:u32 | metadata (UTF-8 JSON) | payload

The metadata holds the architecture, training config, stage tag, epoch,
RNG provenance, loss history and an array directory; the payload is the
float32 arrays concatenated in directory order.
"""

from __future__ import annotations

import copy
import csv
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch

from .exceptions import FormatError, IoError, StageError, VersionError
from .nets import NET_NAMES, ArchSpec, MixganNets

MAGIC = b"MXGN"
FORMAT_VERSION = 1
STAGES = ("init", "content", "mixture")
_HEADER = struct.Struct("<4sII")


@dataclass
class ModelCheckpoint:
    """Everything needed to resume or sample: float32 arrays plus JSON metadata.

    ``arrays`` keys are ``net/<net>/<param>`` for network parameters and
    batch-norm statistics, ``adam/<optimizer>/m|v/<param>`` for optimizer
    moments. Integer buffers (batch-norm counters) and Adam step counts
    live in ``int_state``.
    """

    arch: ArchSpec
    stage: str = "init"
    epoch: int = 0
    arrays: dict = field(default_factory=dict)
    int_state: dict = field(default_factory=dict)
    configs: dict = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise StageError(f"unknown stage tag {self.stage!r}")

    # -- conversion to and from live networks

    @classmethod
    def from_nets(cls, nets: MixganNets, **kwargs) -> "ModelCheckpoint":
        ckpt = cls(arch=nets.arch, **kwargs)
        ckpt.store_nets(nets)
        return ckpt

    def store_nets(self, nets: MixganNets):
        for name in NET_NAMES:
            for key, value in nets.net(name).state_dict().items():
                full = f"net/{name}/{key}"
                if value.dtype.is_floating_point:
                    self.arrays[full] = value.detach().cpu().numpy().astype(np.float32, copy=True)
                else:
                    self.int_state[full] = int(value.item())

    def build_nets(self) -> MixganNets:
        nets = MixganNets(self.arch)
        for name in NET_NAMES:
            module = nets.net(name)
            state = {}
            for key, ref in module.state_dict().items():
                full = f"net/{name}/{key}"
                if ref.dtype.is_floating_point:
                    if full not in self.arrays:
                        raise FormatError(f"checkpoint lacks array {full}")
                    state[key] = torch.from_numpy(np.array(self.arrays[full], dtype=np.float32))
                else:
                    state[key] = torch.tensor(self.int_state.get(full, 0), dtype=ref.dtype)
            module.load_state_dict(state)
        return nets

    def store_optimizer(self, name, optimizer):
        for key in [k for k in self.arrays if k.startswith(f"adam/{name}/")]:
            del self.arrays[key]
        for key, value in optimizer.state_arrays().items():
            self.arrays[f"adam/{name}/{key}"] = value.detach().cpu().numpy().astype(np.float32, copy=True)
        self.int_state[f"adam/{name}/step"] = optimizer.state.step

    def load_optimizer(self, name, optimizer) -> bool:
        """Restore optimizer state; returns False when the checkpoint holds none."""
        step_key = f"adam/{name}/step"
        if step_key not in self.int_state:
            return False
        prefix = f"adam/{name}/"
        arrays = {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}
        optimizer.load_state_arrays(self.int_state[step_key], arrays)
        return True

    def net_arrays(self, name) -> dict:
        prefix = f"net/{name}/"
        return {k: v for k, v in self.arrays.items() if k.startswith(prefix)}

    def copy(self) -> "ModelCheckpoint":
        return copy.deepcopy(self)

    def require_stage(self, *stages):
        if self.stage not in stages:
            raise StageError(f"checkpoint stage is {self.stage!r}, expected one of {stages}")

    def metadata(self) -> dict:
        return {
            "arch": self.arch.to_dict(),
            "stage": self.stage,
            "epoch": self.epoch,
            "int_state": self.int_state,
            "configs": self.configs,
            "rng": self.rng,
            "history": self.history,
        }


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    names = sorted(ckpt.arrays)
    directory, chunks, offset = [], [], 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f4")
        raw = arr.tobytes()
        directory.append({"name": name, "dtype": "float32", "shape": list(arr.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    meta = ckpt.metadata()
    meta["arrays"] = directory
    meta["payload_bytes"] = len(payload)
    meta["payload_crc32"] = zlib.crc32(payload)
    meta_raw = _dumps(meta)
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(meta_raw)))
            fh.write(meta_raw)
            fh.write(payload)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> ModelCheckpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, meta_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = _HEADER.size + meta_len
    if len(raw) < start:
        raise FormatError(f"{path}: metadata truncated")
    try:
        meta = json.loads(raw[_HEADER.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata: {exc}") from exc
    payload = raw[start:]
    try:
        if len(payload) != meta["payload_bytes"] or zlib.crc32(payload) != meta["payload_crc32"]:
            raise FormatError(f"{path}: payload size or checksum mismatch")
        arrays = {}
        for entry in meta["arrays"]:
            count = int(np.prod(entry["shape"], dtype=np.int64))
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
            arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
        return ModelCheckpoint(
            arch=ArchSpec.from_dict(meta["arch"]),
            stage=meta["stage"],
            epoch=int(meta["epoch"]),
            arrays=arrays,
            int_state={k: int(v) for k, v in meta["int_state"].items()},
            configs=meta["configs"],
            rng=meta["rng"],
            history=[list(row) for row in meta["history"]],
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: malformed checkpoint: {exc}") from exc


def write_loss_csv(history, path) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "step", "loss_name", "value"])
            for epoch, step, name, value in history:
                writer.writerow([epoch, step, name, repr(float(value))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_loss_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [[int(r["epoch"]), int(r["step"]), r["loss_name"], float(r["value"])] for r in rows]
