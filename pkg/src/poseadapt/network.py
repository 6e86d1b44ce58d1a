"""MLP encoder plus per-branch classifier/regressor heads, Adam, checkpoints.

The network maps an observation vector to a shared feature, then four
classifier branches (softmax probabilities over rotation / v_x / v_y / z
anchors) and four regressor branches (per-anchor residuals; rotation
residuals are 6D representations).  Branches with zero anchors are
disabled, which is how the scalar-target variant reuses the same code
with only the z branch active.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .errors import (
    CheckpointError,
    CheckpointIncompatibleError,
    InvalidArgumentError,
    ShapeError,
)

LEAK = 0.01  # leaky-relu slope: nonzero gradient almost everywhere

ROT6D_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True)
class NetworkConfig:
    obs_dim: int
    n_rot: int = 60
    n_vx: int = 20
    n_vy: int = 20
    n_z: int = 40
    feature_dim: int = 128
    encoder_hidden: tuple = (128, 128)
    head_hidden: int = 64

    def branches(self):
        out = {}
        if self.n_rot > 0:
            out["rot"] = self.n_rot
        if self.n_vx > 0:
            out["vx"] = self.n_vx
        if self.n_vy > 0:
            out["vy"] = self.n_vy
        if self.n_z > 0:
            out["z"] = self.n_z
        if not out:
            raise InvalidArgumentError("at least one branch must be active")
        return out


class Linear:
    def __init__(self, n_in, n_out, rng, w_scale=None):
        scale = np.sqrt(2.0 / n_in) if w_scale is None else w_scale
        self.w = ad.parameter(rng.standard_normal((n_in, n_out)) * scale)
        self.b = ad.parameter(np.zeros(n_out))

    def __call__(self, x):
        return ad.add(ad.matmul(x, self.w), self.b)


class MLP:
    """Linear stack with leaky-relu between layers; last layer is linear."""

    def __init__(self, n_in, hidden, n_out, rng, out_scale=None):
        dims = [n_in, *hidden, n_out]
        self.layers = []
        for i in range(len(dims) - 1):
            last = i == len(dims) - 2
            self.layers.append(Linear(dims[i], dims[i + 1], rng,
                                      w_scale=out_scale if last and out_scale is not None else None))

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.leaky_relu(x, LEAK)
        return x


@dataclass
class HeadOutput:
    """Batched network output: probabilities, residuals, shared feature."""

    probs: dict          # branch -> Tensor (B, N)
    residuals: dict      # "rot" -> Tensor (B, N, 6); scalars -> Tensor (B, N)
    feature: "ad.Tensor"  # (B, C)

    def picks(self):
        """Arg-max anchor index per branch; ties go to the lowest index."""
        return {k: np.argmax(v.data, axis=1) for k, v in self.probs.items()}


class PoseNetwork:
    def __init__(self, config: NetworkConfig, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.encoder = MLP(c.obs_dim, list(c.encoder_hidden), c.feature_dim, rng)
        self.cls_heads = {}
        self.reg_heads = {}
        for name, n in c.branches().items():
            self.cls_heads[name] = MLP(c.feature_dim, [c.head_hidden], n, rng)
            n_out = n * 6 if name == "rot" else n
            head = MLP(c.feature_dim, [c.head_hidden], n_out, rng, out_scale=0.01)
            if name == "rot":
                # start every rotation residual at the identity so the 6D
                # Gram-Schmidt map is far from its degenerate inputs
                head.layers[-1].b.data[:] = np.tile(ROT6D_IDENTITY, n)
            self.reg_heads[name] = head
        self._param_cache = None

    # -- parameters ----------------------------------------------------------

    def parameters(self):
        """Ordered name -> Tensor mapping of every trainable parameter."""
        if self._param_cache is not None:
            return self._param_cache
        params = {}

        def register(prefix, mlp):
            for i, layer in enumerate(mlp.layers):
                params[f"{prefix}.{i}.w"] = layer.w
                params[f"{prefix}.{i}.b"] = layer.b

        register("encoder", self.encoder)
        for name in self.cls_heads:
            register(f"cls.{name}", self.cls_heads[name])
        for name in self.reg_heads:
            register(f"reg.{name}", self.reg_heads[name])
        self._param_cache = params
        return params

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def state_arrays(self):
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_arrays(self, state):
        params = self.parameters()
        if set(state) != set(params):
            raise CheckpointIncompatibleError("parameter names do not match network config")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise CheckpointIncompatibleError(
                    f"shape mismatch for {k}: {state[k].shape} vs {p.data.shape}")
            p.data = state[k].astype(np.float64).copy()

    def copy(self):
        clone = PoseNetwork(self.config, seed=0)
        clone.load_state_arrays(self.state_arrays())
        return clone

    # -- forward -------------------------------------------------------------

    def forward(self, obs):
        """Run a batch (B, obs_dim) through encoder and all branches."""
        x = obs if isinstance(obs, ad.Tensor) else ad.Tensor(np.asarray(obs, dtype=np.float64))
        if x.data.ndim != 2 or x.data.shape[1] != self.config.obs_dim:
            raise ShapeError(
                f"expected observations (B, {self.config.obs_dim}), got {x.data.shape}")
        f = self.encoder(x)
        probs, residuals = {}, {}
        for name, n in self.config.branches().items():
            probs[name] = ad.softmax(self.cls_heads[name](f), axis=1)
            r = self.reg_heads[name](f)
            residuals[name] = ad.reshape(r, (x.data.shape[0], n, 6)) if name == "rot" else r
        return HeadOutput(probs=probs, residuals=residuals, feature=f)

    def forward_one(self, obs):
        return self.forward(np.asarray(obs, dtype=np.float64)[None, :])


class Adam:
    """Adaptive-moment optimizer with bias correction."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state(self):
        return {
            "t": self.t, "lr": self.lr, "beta1": self.beta1,
            "beta2": self.beta2, "eps": self.eps,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.beta1, self.beta2 = float(state["beta1"]), float(state["beta2"])
        self.eps = float(state["eps"])
        for k in self.m:
            self.m[k] = state["m"][k].astype(np.float64).copy()
            self.v[k] = state["v"][k].astype(np.float64).copy()


# ---------------------------------------------------------------------------
# checkpoint file: versioned binary, header JSON + raw float64 arrays

_CKPT_MAGIC = b"poseadapt-ckpt v1\n"


def save_checkpoint(path, net: PoseNetwork, optimizer: Adam = None,
                    rng: np.random.Generator = None, meta=None):
    """Write network (and optionally optimizer + RNG) state to ``path``.

    Loading restores bit-identical subsequent training on one platform.
    """
    params = net.parameters()
    names = list(params)
    arrays = [params[k].data for k in names]
    header = {
        "version": 1,
        "config": asdict(net.config),
        "params": [{"name": k, "shape": list(params[k].data.shape)} for k in names],
        "meta": meta or {},
    }
    if optimizer is not None:
        header["adam"] = {
            "t": optimizer.t, "lr": optimizer.lr, "beta1": optimizer.beta1,
            "beta2": optimizer.beta2, "eps": optimizer.eps,
        }
        arrays.extend(optimizer.m[k] for k in names)
        arrays.extend(optimizer.v[k] for k in names)
    if rng is not None:
        header["rng_state"] = rng.bit_generator.state
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(len(blob).to_bytes(8, "big"))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path, expected_config: NetworkConfig = None):
    """Read a checkpoint; returns (net, optimizer_or_None, rng_or_None, meta)."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not raw.startswith(_CKPT_MAGIC):
        raise CheckpointError(f"{path}: not a poseadapt checkpoint")
    try:
        n = int.from_bytes(raw[len(_CKPT_MAGIC):len(_CKPT_MAGIC) + 8], "big")
        header = json.loads(raw[len(_CKPT_MAGIC) + 8:len(_CKPT_MAGIC) + 8 + n])
        offset = len(_CKPT_MAGIC) + 8 + n
        cfg_dict = dict(header["config"])
        cfg_dict["encoder_hidden"] = tuple(cfg_dict["encoder_hidden"])
        config = NetworkConfig(**cfg_dict)
        names, state = [], {}
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
            offset += count * 8
            names.append(spec["name"])
            state[spec["name"]] = arr.copy()
        net = PoseNetwork(config, seed=0)
        net.load_state_arrays(state)
        optimizer = None
        if "adam" in header:
            h = header["adam"]
            optimizer = Adam(net.parameters(), lr=h["lr"], beta1=h["beta1"],
                             beta2=h["beta2"], eps=h["eps"])
            optimizer.t = int(h["t"])
            for store in (optimizer.m, optimizer.v):
                for k in names:
                    shape = state[k].shape
                    count = int(np.prod(shape)) if shape else 1
                    store[k] = np.frombuffer(raw, dtype="<f8", count=count,
                                             offset=offset).reshape(shape).copy()
                    offset += count * 8
        rng = None
        if "rng_state" in header:
            rng = np.random.default_rng(0)
            st = header["rng_state"]
            if "state" in st and isinstance(st["state"], dict):
                st["state"] = {k: int(v) for k, v in st["state"].items()}
            rng.bit_generator.state = st
    except CheckpointIncompatibleError:
        raise
    except Exception as e:
        raise CheckpointError(f"{path}: corrupt checkpoint ({e})") from e
    if expected_config is not None and config != expected_config:
        raise CheckpointIncompatibleError(
            f"checkpoint config {config} does not match requested {expected_config}")
    return net, optimizer, rng, header.get("meta", {})
