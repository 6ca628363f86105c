"""Self-describing checkpoint container for simulation states.

A checkpoint is a single JSON document: scalar metadata plus raw field
arrays encoded as base64 of their little-endian float64 bytes in C order
(mode-major: horizontal axes vary slowest, the vertical node index
fastest).  Writing is deterministic -- fixed key order, fixed float
formatting -- so identical states produce identical bytes, and a
write/read round-trip reproduces every array bit for bit.

BDF2 runs need one level of history to resume exactly, so a checkpoint may
carry the previous state as well.
"""

from __future__ import annotations

import base64
import json

import numpy as np

from .state import State

__all__ = ["save_checkpoint", "load_checkpoint", "checkpoint_document"]

FORMAT_VERSION = 1


def _encode_array(a):
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {
        "shape": list(a.shape),
        "dtype": "<f8",
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(doc):
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype=np.dtype(doc["dtype"])).reshape(
        doc["shape"]).copy()


def _state_doc(state):
    return {
        "t": state.t,
        "q": _encode_array(state.q),
        "u": _encode_array(state.u),
        "eta": _encode_array(state.eta),
    }


def _state_from_doc(doc):
    return State(q=_decode_array(doc["q"]), u=_decode_array(doc["u"]),
                 eta=_decode_array(doc["eta"]), t=float(doc["t"]))


def checkpoint_document(state, meta=None, prev_state=None):
    doc = {
        "format_version": FORMAT_VERSION,
        "meta": dict(meta) if meta else {},
        "state": _state_doc(state),
    }
    if prev_state is not None:
        doc["prev_state"] = _state_doc(prev_state)
    return doc


def save_checkpoint(path, state, meta=None, prev_state=None):
    doc = checkpoint_document(state, meta=meta, prev_state=prev_state)
    text = json.dumps(doc, indent=1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")
    return path


def load_checkpoint(path):
    """Returns (state, prev_state_or_None, meta)."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    prev = _state_from_doc(doc["prev_state"]) if "prev_state" in doc else None
    return _state_from_doc(doc["state"]), prev, doc.get("meta", {})
