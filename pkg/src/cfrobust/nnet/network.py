"""Small convolutional classifier built on the autodiff engine."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Network:
    """conv3x3 -> ReLU -> maxpool, twice, then a dense layer to K logits.

    The dense layer reads the global max and global mean of the last feature
    map, which makes the classifier translation invariant. Inputs are NHWC
    batches already normalized to [-1, 1].
    """

    def __init__(self, num_classes: int, image_size: int = 32, in_channels: int = 3,
                 channels: tuple[int, int] = (16, 32), seed: int = 0, dtype=np.float32,
                 pooling: str = "maxmean"):
        if image_size % 4:
            raise ValueError("image_size must be divisible by 4")
        self.num_classes = num_classes
        self.image_size = image_size
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c1, c2 = self.channels
        self.pooling = pooling
        feat = c2 if pooling == "max" else 2 * c2

        def he(fan_in, shape):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        self.params: dict[str, Tensor] = {}
        init = {
            "conv1.w": he(9 * in_channels, (9 * in_channels, c1)),
            "conv1.b": np.zeros(c1),
            "conv2.w": he(9 * c1, (9 * c1, c2)),
            "conv2.b": np.zeros(c2),
            "dense.w": rng.normal(0.0, np.sqrt(1.0 / feat), size=(feat, num_classes)),
            "dense.b": np.zeros(num_classes),
        }
        for name, value in init.items():
            self.params[name] = Tensor(value.astype(self.dtype), requires_grad=True)

    # ------------------------------------------------------------------ access
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {self.params[k].shape} vs {v.shape}")
            self.params[k].data = np.asarray(v, dtype=self.dtype).copy()

    def astype(self, dtype) -> Network:
        """Copy of the network with parameters cast to ``dtype`` (e.g. float64 for checks)."""
        other = object.__new__(Network)
        other.__dict__.update(self.__dict__)
        other.dtype = np.dtype(dtype)
        other.params = {k: Tensor(v.data.astype(dtype), requires_grad=True) for k, v in self.params.items()}
        return other

    # ----------------------------------------------------------------- compute
    def _conv(self, x: Tensor, name: str) -> Tensor:
        n, h, w, _ = x.shape
        cols = ad.im2col(x, 3)
        flat = ad.reshape(cols, (n * h * w, cols.shape[-1]))
        out = ad.matmul(flat, self.params[f"{name}.w"]) + self.params[f"{name}.b"]
        return ad.reshape(out, (n, h, w, out.shape[-1]))

    def forward(self, x, trace: list | None = None) -> Tensor:
        """Logits of shape (N, K).

        If ``trace`` is a list, the ReLU pre-activations and pooled feature maps
        are appended to it (used to detect kinks in finite-difference checks).
        """
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if x.ndim != 4 or x.shape[0] == 0:
            raise ValueError(f"expected a nonempty NHWC batch, got shape {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise ValueError("non-finite input")
        if x.data.min() < -1.0 - 1e-6 or x.data.max() > 1.0 + 1e-6:
            raise ValueError("inputs must be normalized to [-1, 1]")
        h = x
        for name in ("conv1", "conv2"):
            pre = self._conv(h, name)
            h = ad.maxpool2(ad.relu(pre))
            if trace is not None:
                trace.append(pre.data.copy())
                trace.append(h.data.copy())
        if self.pooling == "max":
            h = ad.global_maxpool(h)
        else:
            h = ad.concat([ad.global_maxpool(h), h.mean(axis=(1, 2))], axis=1)
        return ad.matmul(h, self.params["dense.w"]) + self.params["dense.b"]

    __call__ = forward

    def predict_proba(self, x, batch_size: int = 256) -> np.ndarray:
        out = []
        with ad.no_grad():
            for i in range(0, len(x), batch_size):
                logits = self.forward(np.asarray(x[i:i + batch_size], dtype=self.dtype))
                out.append(ad.softmax(logits).data)
        return np.concatenate(out).astype(np.float64)


def input_gradient(net: Network, image, cls: int):
    """Gradient of logit ``cls`` w.r.t. a normalized HWC image.

    Returns ``(saliency, raw)`` where ``raw`` has the image's shape and
    ``saliency`` is its per-pixel L2 norm across channels.
    """
    if not 0 <= cls < net.num_classes:
        raise ValueError(f"class index {cls} outside [0, {net.num_classes})")
    x = Tensor(np.asarray(image, dtype=net.dtype)[None], requires_grad=True)
    logit = ad.sum_(net.forward(x) * _onehot(cls, net))
    (g,) = ad.grad(logit, [x])
    raw = g.data[0]
    return np.sqrt((raw.astype(np.float64) ** 2).sum(axis=-1)), raw


def batch_input_gradient(net: Network, images, classes) -> np.ndarray:
    """Per-image gradients of the selected logits for a batch, shape (N, H, W, C)."""
    classes = np.asarray(classes)
    x = Tensor(np.asarray(images, dtype=net.dtype), requires_grad=True)
    onehot = np.eye(net.num_classes, dtype=net.dtype)[classes]
    target = ad.sum_(net.forward(x) * Tensor(onehot))
    (g,) = ad.grad(target, [x])
    return g.data


def _onehot(cls: int, net: Network) -> Tensor:
    v = np.zeros((1, net.num_classes), dtype=net.dtype)
    v[0, cls] = 1.0
    return Tensor(v)


# ------------------------------------------------------------------ checkpoint
def save_checkpoint(net: Network, path) -> None:
    """Write a text shape manifest followed by raw float32 little-endian values.

    Layout: ``CFNET1\\n``, then one ``name d0,d1,...`` line per tensor,
    a blank line, then the concatenated parameter values in manifest order.
    """
    path = Path(path)
    header = ["CFNET1", f"meta num_classes={net.num_classes} image_size={net.image_size} "
              f"in_channels={net.in_channels} channels={net.channels[0]},{net.channels[1]} "
              f"pooling={net.pooling}"]
    for name, p in net.params.items():
        header.append(f"{name} {','.join(str(d) for d in p.shape)}")
    blob = b"".join(p.data.astype("<f4").tobytes() for p in net.params.values())
    path.write_bytes(("\n".join(header) + "\n\n").encode("ascii") + blob)


def load_checkpoint(path) -> Network:
    raw = Path(path).read_bytes()
    head, _, blob = raw.partition(b"\n\n")
    lines = head.decode("ascii").splitlines()
    if not lines or lines[0] != "CFNET1":
        raise ValueError(f"{path}: not a checkpoint file")
    meta = dict(kv.split("=") for kv in lines[1].split()[1:])
    c1, c2 = (int(v) for v in meta["channels"].split(","))
    net = Network(int(meta["num_classes"]), int(meta["image_size"]), int(meta["in_channels"]), (c1, c2),
                  pooling=meta.get("pooling", "maxmean"))
    offset = 0
    state = {}
    for line in lines[2:]:
        name, dims = line.split()
        shape = tuple(int(d) for d in dims.split(","))
        count = int(np.prod(shape))
        state[name] = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += 4 * count
    if offset != len(blob):
        raise ValueError(f"{path}: payload size does not match manifest")
    net.load_state_dict(state)
    return net
