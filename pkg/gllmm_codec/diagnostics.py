"""Diagnostics support for bitstreams and weight stores."""

from __future__ import annotations

from .codec import Bitstream
from .network import ModelConfig
from .weight_layout import parameter_count
from .weight_store import WeightStore

SUB_NETWORKS = ("g_a", "g_s", "h_a", "h_s", "ctx", "ep", "factorized")


def bitstream_diagnostics(bitstream: Bitstream) -> dict:
    return {
        "width": bitstream.width,
        "height": bitstream.height,
        "channels": bitstream.channels,
        "fingerprint": f"{bitstream.fingerprint:016x}",
        "y_alphabet": list(bitstream.y_alphabet),
        "z_alphabet": list(bitstream.z_alphabet),
        "z_payload_bytes": len(bitstream.z_payload),
        "y_payload_bytes": len(bitstream.y_payload),
        "total_bytes": bitstream.num_bytes,
        "bpp": bitstream.bpp,
    }


def weight_diagnostics(w: WeightStore, cfg: ModelConfig = None) -> dict:
    data = {
        "fingerprint": f"{w.fingerprint:016x}",
        "tensors": len(w),
        "parameters": int(sum(value.size for value in w.tensors.values())),
    }
    if cfg is not None:
        data["config"] = cfg.as_dict()
        data["sub_networks"] = {name: parameter_count(cfg, name) for name in SUB_NETWORKS}
    return data
