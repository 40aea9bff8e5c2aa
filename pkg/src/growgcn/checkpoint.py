"""Single-file binary checkpoints for layer stacks.

Layout, in order:

    bytes 0..7    magic b"GCNSTCK1"
    bytes 8..11   uint32 little-endian: length of the JSON header
    header        UTF-8 JSON (see _header below)
    arrays        row-major float32 little-endian, concatenated in the
                  order the header's "arrays" list declares: for each conv
                  layer (input first) W, then A and B when the layer has an
                  adapter; the head last.
"""

import json
import struct

import numpy as np

from .autodiff import Tensor
from .errors import DataError
from . import layers as ly

MAGIC = b"GCNSTCK1"


def _header(stack):
    layers = []
    arrays = []
    for i, layer in enumerate(stack.conv_layers()):
        entry = {"mode": layer.mode.value, "d_in": layer.d_in, "d_out": layer.d_out}
        arrays.append([f"layer{i}.W", [layer.d_in, layer.d_out]])
        if layer.adapter is not None:
            entry["rank"] = layer.adapter.rank
            entry["alpha"] = layer.adapter.alpha
            arrays.append([f"layer{i}.A", [layer.d_in, layer.adapter.rank]])
            arrays.append([f"layer{i}.B", [layer.adapter.rank, layer.d_out]])
        layers.append(entry)
    arrays.append(["head", list(stack.head.data.shape)])
    return {
        "format": 1,
        "layers": layers,
        "head": list(stack.head.data.shape),
        "dropout_p": stack.dropout_p,
        "pairnorm_s": None if stack.pairnorm is None else stack.pairnorm.s,
        "sgc_steps": stack.sgc_steps,
        "row_normalize": stack.row_normalize,
        "arrays": arrays,
    }


def _tensors_in_order(stack):
    out = []
    for layer in stack.conv_layers():
        out.append(layer.W)
        if layer.adapter is not None:
            out.extend([layer.adapter.A, layer.adapter.B])
    out.append(stack.head)
    return out


def save_checkpoint(stack, path):
    header = json.dumps(_header(stack)).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for t in _tensors_in_order(stack):
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return path


def load_checkpoint(path):
    try:
        blob = open(path, "rb").read()
    except OSError as e:
        raise DataError(str(e), file=path) from e
    if blob[:8] != MAGIC:
        raise DataError("not a checkpoint (bad magic)", file=path)
    (hlen,) = struct.unpack("<I", blob[8:12])
    try:
        header = json.loads(blob[12 : 12 + hlen].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"corrupt checkpoint header: {e}", file=path) from e
    if header.get("format") != 1:
        raise DataError(f"unsupported checkpoint format {header.get('format')}", file=path)

    offset = 12 + hlen
    data = {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise DataError(f"checkpoint truncated in array {name}", file=path)
        data[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise DataError(f"{len(blob) - offset} trailing bytes after arrays", file=path)

    conv = []
    for i, entry in enumerate(header["layers"]):
        mode = ly.LayerMode(entry["mode"])
        w = Tensor(data[f"layer{i}.W"], requires_grad=(mode is ly.LayerMode.TRAINABLE))
        adapter = None
        if mode is ly.LayerMode.FROZEN_LORA:
            adapter = ly.LoraAdapter(
                A=Tensor(data[f"layer{i}.A"], requires_grad=True),
                B=Tensor(data[f"layer{i}.B"], requires_grad=True),
                rank=entry["rank"],
                alpha=entry["alpha"],
            )
        conv.append(ly.GcnLayer(w, mode=mode, adapter=adapter))

    stack = ly.LayerStack(
        input_layer=conv[0] if conv else None,
        hidden_layers=conv[1:],
        head=Tensor(data["head"], requires_grad=True),
        dropout_p=header["dropout_p"],
        pairnorm=None if header["pairnorm_s"] is None else ly.PairNormConfig(header["pairnorm_s"]),
        sgc_steps=header["sgc_steps"],
        row_normalize=header["row_normalize"],
    )
    return stack.check()
