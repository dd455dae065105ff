"""Bidirectional recurrent locator: stacked BRNN, dense, mask multiply, κ-max, averaging."""

import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from ..errors import DataError, ShapeError
from .cells import CELLS, sigmoid

MODEL_MAGIC = "vulnloc-model"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 30
    hidden: int = 900
    layers: int = 2
    dense: int = 512
    kappa: int = 1
    cell: str = "gru"
    dropout: float = 0.4

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("kappa must be at least 1")
        if self.cell not in CELLS:
            raise ValueError(f"unknown cell {self.cell!r}")


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def param_names(cfg: ModelConfig) -> List[str]:
    names = []
    for layer in range(cfg.layers):
        for direction in ("fw", "bw"):
            names += [f"l{layer}_{direction}_{p}" for p in ("W", "U", "b")]
    return names + ["dense_W", "dense_b", "out_w", "out_b"]


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    gates = CELLS[cfg.cell][0]
    H = cfg.hidden
    params = {}
    for layer in range(cfg.layers):
        fan_in = cfg.input_dim if layer == 0 else 2 * H
        for direction in ("fw", "bw"):
            key = f"l{layer}_{direction}"
            params[key + "_W"] = _glorot(rng, fan_in, gates * H)
            params[key + "_U"] = np.concatenate([_orthogonal(rng, H) for _ in range(gates)], axis=1)
            params[key + "_b"] = np.zeros(gates * H)
    params["dense_W"] = _glorot(rng, 2 * H, cfg.dense)
    params["dense_b"] = np.zeros(cfg.dense)
    params["out_w"] = _glorot(rng, cfg.dense, 1)[:, 0]
    params["out_b"] = np.zeros(1)
    return params


def multiply_layer(A, alpha):
    """Elementwise gate of token activations by the location mask."""
    A = np.asarray(A, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if A.shape != alpha.shape:
        raise ShapeError(f"activation shape {A.shape} does not match mask shape {alpha.shape}")
    return A * alpha


def kmax_indices(M, kappa):
    """Positions of the κ largest entries along the last axis, ties to the lowest index."""
    M = np.asarray(M)
    if kappa > M.shape[-1]:
        raise ShapeError(f"kappa={kappa} exceeds length {M.shape[-1]}")
    return np.argsort(-M, axis=-1, kind="stable")[..., :kappa]


def kmax_average(M, kappa):
    M = np.asarray(M, dtype=np.float64)
    idx = kmax_indices(M, kappa)
    return np.take_along_axis(M, idx, axis=-1).mean(axis=-1)


class Model:
    def __init__(self, cfg: ModelConfig, params: Dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig, rng):
        return cls(cfg, init_params(cfg, rng))

    # forward pieces -------------------------------------------------------

    def _check(self, X):
        if X.ndim != 3 or X.shape[2] != self.cfg.input_dim:
            raise ShapeError(f"expected (batch, tokens, {self.cfg.input_dim}) input, got {X.shape}")

    def activations(self, X, dropout_rng=None, keep_cache=False):
        """Per-token outputs A in (0, 1), shape (batch, tokens)."""
        X = np.asarray(X, dtype=np.float64)
        self._check(X)
        _, fwd, _ = CELLS[self.cfg.cell]
        p = self.params
        caches = []
        h = X
        for layer in range(self.cfg.layers):
            key = f"l{layer}"
            hf, cf = fwd(h, p[key + "_fw_W"], p[key + "_fw_U"], p[key + "_fw_b"])
            hb, cb = fwd(h[:, ::-1], p[key + "_bw_W"], p[key + "_bw_U"], p[key + "_bw_b"])
            out = np.concatenate([hf, hb[:, ::-1]], axis=2)
            drop = None
            if dropout_rng is not None and self.cfg.dropout > 0:
                keep = 1.0 - self.cfg.dropout
                drop = (dropout_rng.random(out.shape) < keep) / keep
                out = out * drop
            caches.append((cf, cb, drop))
            h = out
        z = np.tanh(h @ p["dense_W"] + p["dense_b"])
        A = sigmoid(z @ p["out_w"] + p["out_b"][0])
        if keep_cache:
            return A, (caches, h, z)
        return A

    def pooled(self, X, mask, dropout_rng=None):
        A = self.activations(X, dropout_rng)
        return kmax_average(multiply_layer(A, mask), self.cfg.kappa)

    # training -------------------------------------------------------------

    def loss_and_grads(self, X, mask, y, dropout_rng=None):
        """Mean binary cross-entropy on the pooled score, with exact gradients."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        A, (caches, h_top, z) = self.activations(X, dropout_rng, keep_cache=True)
        M = multiply_layer(A, mask)
        idx = kmax_indices(M, self.cfg.kappa)
        o = np.take_along_axis(M, idx, axis=-1).mean(axis=-1)
        oc = np.clip(o, 1e-12, 1.0 - 1e-12)
        n = len(y)
        loss = float(-np.mean(y * np.log(oc) + (1.0 - y) * np.log(1.0 - oc)))

        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        d_o = (oc - y) / (oc * (1.0 - oc)) / n
        dM = np.zeros_like(M)
        np.put_along_axis(dM, idx, np.repeat((d_o / self.cfg.kappa)[:, None], idx.shape[1], axis=1), axis=-1)
        dA = dM * mask
        dpre = dA * A * (1.0 - A)
        grads["out_b"][0] = dpre.sum()
        grads["out_w"] = np.einsum("bt,btd->d", dpre, z)
        dz = dpre[:, :, None] * p["out_w"] * (1.0 - z * z)
        grads["dense_W"] = np.einsum("bti,btj->ij", h_top, dz)
        grads["dense_b"] = dz.sum(axis=(0, 1))
        dh = dz @ p["dense_W"].T

        _, _, bwd = CELLS[self.cfg.cell]
        H = self.cfg.hidden
        for layer in range(self.cfg.layers - 1, -1, -1):
            cf, cb, drop = caches[layer]
            if drop is not None:
                dh = dh * drop
            key = f"l{layer}"
            dxf, dWf, dUf, dbf = bwd(dh[:, :, :H], cf)
            dxb, dWb, dUb, dbb = bwd(dh[:, ::-1, H:], cb)
            grads[key + "_fw_W"], grads[key + "_fw_U"], grads[key + "_fw_b"] = dWf, dUf, dbf
            grads[key + "_bw_W"], grads[key + "_bw_U"], grads[key + "_bw_b"] = dWb, dUb, dbb
            dh = dxf + dxb[:, ::-1]
        return loss, grads

    # persistence ----------------------------------------------------------

    def save(self, path, extra: Optional[dict] = None):
        """JSON header line, then each parameter as little-endian float64, row-major."""
        names = param_names(self.cfg)
        arrays = []
        offset = 0
        for name in names:
            arr = self.params[name]
            arrays.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.size * 8})
            offset += arr.size * 8
        header = {"format": MODEL_MAGIC, "version": 1, "dtype": "<f8", "config": asdict(self.cfg),
                  "arrays": arrays, "extra": extra or {}}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for name in names:
                fh.write(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            try:
                header = json.loads(fh.readline().decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise DataError(f"{path}: not a model file") from None
            if header.get("format") != MODEL_MAGIC:
                raise DataError(f"{path}: not a model file")
            blob = fh.read()
        cfg = ModelConfig(**header["config"])
        params = {}
        for a in header["arrays"]:
            raw = blob[a["offset"]:a["offset"] + a["nbytes"]]
            if len(raw) != a["nbytes"]:
                raise DataError(f"{path}: truncated array {a['name']}")
            params[a["name"]] = np.frombuffer(raw, dtype="<f8").reshape(a["shape"]).copy()
        model = cls(cfg, params)
        model.extra = header.get("extra", {})
        return model
