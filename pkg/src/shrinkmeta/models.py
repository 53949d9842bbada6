"""Task models: data loss, gradient and Hessian-vector products.

Every model works on a flat parameter vector ``theta``.  Losses are negative
log-likelihoods with additive constants dropped (Gaussian models) or a mean
squared error (sinusoid MLP).  The prior is never part of a model's loss;
callers add it through :mod:`shrinkmeta.prior`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prior import ContractError, ModulePartition


@dataclass(frozen=True)
class Batch:
    """A set of observations.  ``y`` is ``None`` for density-estimation tasks."""

    x: np.ndarray
    y: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)

    def concat(self, other: "Batch") -> "Batch":
        y = None if self.y is None else np.concatenate([self.y, other.y])
        return Batch(np.concatenate([self.x, other.x]), y)

    def to_json(self) -> dict:
        out = {"x": np.asarray(self.x).tolist()}
        if self.y is not None:
            out["y"] = np.asarray(self.y).tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Batch":
        y = obj.get("y")
        return cls(np.array(obj["x"], dtype=float), None if y is None else np.array(y, dtype=float))


class TaskModel:
    """Base class.  Subclasses implement ``loss_and_grad``; ``hvp`` defaults to
    a central difference of the gradient."""

    name = "model"
    dim: int
    partition: ModulePartition

    def loss_and_grad(self, theta: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def loss(self, theta: np.ndarray, batch: Batch) -> float:
        return self.loss_and_grad(theta, batch)[0]

    def grad(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        return self.loss_and_grad(theta, batch)[1]

    def hvp(self, theta: np.ndarray, batch: Batch, v: np.ndarray) -> np.ndarray:
        return fd_hvp(self, theta, batch, v)

    def _check(self, theta: np.ndarray, batch: Batch):
        if len(batch.x) == 0:
            raise ContractError("empty batch")
        if theta.shape != (self.dim,):
            raise ContractError(f"{self.name}: theta has shape {np.shape(theta)}, expected ({self.dim},)")


def fd_hvp(model: TaskModel, theta: np.ndarray, batch: Batch, v: np.ndarray) -> np.ndarray:
    """Central difference of the gradient along ``v``.

    Step ``h = 1e-4 (1 + |theta|_inf) / (1 + |v|_inf)``.
    """
    v = np.asarray(v, dtype=float)
    vmax = np.max(np.abs(v)) if v.size else 0.0
    if vmax == 0.0:
        return np.zeros_like(v)
    h = 1e-4 * (1.0 + np.max(np.abs(theta))) / (1.0 + vmax)
    gp = model.grad(theta + h * v, batch)
    gm = model.grad(theta - h * v, batch)
    return (gp - gm) / (2.0 * h)


def swirl_transform(theta: np.ndarray, omega: float) -> np.ndarray:
    """Rotate consecutive pairs by ``omega`` times their Euclidean norm."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] % 2:
        raise ContractError("swirl transform needs an even dimension")
    pairs = theta.reshape(theta.shape[:-1] + (-1, 2))
    a, b = pairs[..., 0], pairs[..., 1]
    ang = omega * np.hypot(a, b)
    c, s = np.cos(ang), np.sin(ang)
    out = np.stack([c * a - s * b, s * a + c * b], axis=-1)
    return out.reshape(theta.shape)


def _swirl_jacobian_blocks(theta: np.ndarray, omega: float) -> np.ndarray:
    """Per-pair 2x2 Jacobians of :func:`swirl_transform`, shape ``(D/2, 2, 2)``."""
    pairs = theta.reshape(-1, 2)
    a, b = pairs[:, 0], pairs[:, 1]
    rho = np.hypot(a, b)
    ang = omega * rho
    c, s = np.cos(ang), np.sin(ang)
    # d(rot(ang) p)/d ang = rot(ang + pi/2) p
    dmu = np.stack([-s * a - c * b, c * a - s * b], axis=-1)
    safe = np.where(rho > 0, rho, 1.0)
    drho = np.where(rho[:, None] > 0, pairs / safe[:, None], 0.0)
    jac = np.empty((len(pairs), 2, 2))
    jac[:, 0, 0], jac[:, 0, 1] = c, -s
    jac[:, 1, 0], jac[:, 1, 1] = s, c
    jac += omega * dmu[:, :, None] * drho[:, None, :]
    return jac


class GaussianObsModel(TaskModel):
    """Observations ``x ~ N(mu(theta), diag(xi2))`` with a known mean map.

    ``transform`` is one of ``"identity"``, ``"linear"`` (``mu = A theta``) or
    ``"swirl"``.  The loss is ``sum_n sum_d (x_nd - mu_d)^2 / (2 xi2_d)``,
    i.e. the negative log-likelihood without the ``log(2 pi xi2)/2`` terms.
    """

    def __init__(self, dim, xi2, transform="identity", matrix=None, omega=np.pi / 5,
                 partition: ModulePartition | None = None):
        self.dim = int(dim)
        self.transform = transform
        self.omega = float(omega)
        if transform == "identity":
            self.matrix = np.eye(self.dim)
        elif transform == "linear":
            if matrix is None:
                matrix = linear_exp1_matrix(self.dim)
            self.matrix = np.asarray(matrix, dtype=float)
            if self.matrix.shape[1] != self.dim:
                raise ContractError("linear transform matrix must have dim columns")
        elif transform == "swirl":
            if self.dim % 2:
                raise ContractError("swirl transform needs an even dimension")
            self.matrix = None
        else:
            raise ContractError(f"unknown transform {transform!r}")
        self.obs_dim = self.dim if self.matrix is None else self.matrix.shape[0]
        self.xi2 = np.broadcast_to(np.asarray(xi2, dtype=float), (self.obs_dim,)).copy()
        if np.any(self.xi2 <= 0):
            raise ContractError("observation variances must be positive")
        self.partition = partition or ModulePartition.per_coordinate(self.dim)
        self.name = f"gaussian-{transform}"

    def mean(self, theta: np.ndarray) -> np.ndarray:
        if self.transform == "swirl":
            return swirl_transform(theta, self.omega)
        if self.transform == "identity":
            return theta
        return self.matrix @ theta

    def _obs(self, batch: Batch) -> np.ndarray:
        x = batch.x
        return x if x.ndim == 2 else np.asarray(x, dtype=float).reshape(len(x), self.obs_dim)

    def loss_and_grad(self, theta, batch):
        self._check(theta, batch)
        x = self._obs(batch)
        diff = self.mean(theta) - x
        resid = diff / self.xi2
        loss = 0.5 * float(np.vdot(diff, resid))
        r = resid.sum(axis=0)
        if self.transform == "swirl":
            jac = _swirl_jacobian_blocks(theta, self.omega)
            g = np.einsum("pij,pi->pj", jac, r.reshape(-1, 2)).reshape(-1)
        elif self.transform == "identity":
            g = r
        else:
            g = self.matrix.T @ r
        return loss, g

    def hessian(self, theta: np.ndarray, batch: Batch) -> np.ndarray:
        """Dense data Hessian; analytic for identity/linear, differenced for swirl."""
        if self.transform == "swirl":
            eye = np.eye(self.dim)
            h = np.stack([self.hvp(theta, batch, e) for e in eye], axis=1)
            return 0.5 * (h + h.T)
        return len(batch) * (self.matrix.T / self.xi2) @ self.matrix

    def hvp(self, theta, batch, v):
        self._check(theta, batch)
        v = np.asarray(v, dtype=float)
        if self.transform == "swirl":
            return fd_hvp(self, theta, batch, v)
        return len(batch) * (self.matrix.T @ ((self.matrix @ v) / self.xi2))


def linear_exp1_matrix(dim: int) -> np.ndarray:
    """``[I_M, 1_M / sqrt(M)]^T``: identity rows plus one averaging row."""
    return np.vstack([np.eye(dim), np.full((1, dim), 1.0 / np.sqrt(dim))])


def normal_mean_model() -> GaussianObsModel:
    """Univariate ``x ~ N(theta, 1)``."""
    return GaussianObsModel(1, 1.0, "identity")


class SinusoidMLP(TaskModel):
    """ReLU network ``1 -> hidden -> hidden -> 1`` trained with mean squared error.

    Parameters are flattened as ``w0, b0, w1, b1, w2, b2`` with weights stored
    ``(out, in)``; each tensor is one module.
    """

    name = "sinusoid-mlp"

    def __init__(self, hidden: int = 40):
        self.hidden = h = int(hidden)
        self.shapes = [("w0", (h, 1)), ("b0", (h,)), ("w1", (h, h)), ("b1", (h,)),
                       ("w2", (1, h)), ("b2", (1,))]
        sizes = [int(np.prod(s)) for _, s in self.shapes]
        self.partition = ModulePartition.from_sizes(sizes, [n for n, _ in self.shapes])
        self.dim = self.partition.dim
        self._slices = [slice(s, e) for _, s, e in self.partition.modules]

    def unpack(self, theta: np.ndarray) -> list[np.ndarray]:
        return [theta[sl].reshape(shape) for sl, (_, shape) in zip(self._slices, self.shapes)]

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        theta = np.empty(self.dim)
        fan_in = {"w0": 1, "b0": 1, "w1": self.hidden, "b1": self.hidden,
                  "w2": self.hidden, "b2": self.hidden}
        for name, s, e in self.partition.modules:
            bound = np.sqrt(1.0 / fan_in[name])
            theta[s:e] = rng.uniform(-bound, bound, size=e - s)
        return theta

    def predict(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        w0, b0, w1, b1, w2, b2 = self.unpack(theta)
        h1 = np.maximum(np.asarray(x, dtype=float)[:, None] * w0[:, 0] + b0, 0.0)
        h2 = np.maximum(h1 @ w1.T + b1, 0.0)
        return h2 @ w2[0] + b2[0]

    def _forward(self, theta, x):
        w0, b0, w1, b1, w2, b2 = self.unpack(theta)
        z1 = x[:, None] * w0[:, 0] + b0
        h1 = np.maximum(z1, 0.0)
        z2 = h1 @ w1.T + b1
        h2 = np.maximum(z2, 0.0)
        out = h2 @ w2[0] + b2[0]
        return (w0, b0, w1, b1, w2, b2), z1, h1, z2, h2, out

    def _check(self, theta, batch):
        super()._check(theta, batch)
        if batch.y is None or batch.x.ndim != 1:
            raise ContractError("sinusoid batches need 1-d inputs and targets")

    def loss_and_grad(self, theta, batch):
        self._check(theta, batch)
        x, y = batch.x, batch.y
        n = len(x)
        (w0, b0, w1, b1, w2, b2), z1, h1, z2, h2, out = self._forward(theta, x)
        err = out - y
        loss = float(err @ err) / n
        d_out = (2.0 / n) * err
        g = np.empty(self.dim)
        sl = self._slices
        d_z2 = d_out[:, None] * w2[0]
        d_z2 *= z2 > 0
        d_z1 = d_z2 @ w1
        d_z1 *= z1 > 0
        g[sl[0]] = x @ d_z1
        g[sl[1]] = d_z1.sum(axis=0)
        g[sl[2]] = (d_z2.T @ h1).ravel()
        g[sl[3]] = d_z2.sum(axis=0)
        g[sl[4]] = d_out @ h2
        g[sl[5]] = d_out.sum()
        return loss, g

    def hvp(self, theta, batch, v):
        """Exact Hessian-vector product by forward-over-reverse (R-operator)."""
        self._check(theta, batch)
        v = np.asarray(v, dtype=float)
        x, y = batch.x, batch.y
        n = len(x)
        (w0, b0, w1, b1, w2, b2), z1, h1, z2, h2, out = self._forward(theta, x)
        vw0, vb0, vw1, vb1, vw2, vb2 = self.unpack(v)
        m1 = z1 > 0
        m2 = z2 > 0
        # directional derivatives of the forward pass
        r_z1 = x[:, None] * vw0[:, 0] + vb0
        r_h1 = r_z1 * m1
        r_z2 = r_h1 @ w1.T + h1 @ vw1.T + vb1
        r_h2 = r_z2 * m2
        r_out = r_h2 @ w2[0] + h2 @ vw2[0] + vb2[0]
        # backward pass and its directional derivative
        d_out = (2.0 / n) * (out - y)
        r_d_out = (2.0 / n) * r_out
        d_h2 = np.outer(d_out, w2[0])
        r_d_h2 = np.outer(r_d_out, w2[0]) + np.outer(d_out, vw2[0])
        d_z2 = d_h2 * m2
        r_d_z2 = r_d_h2 * m2
        r_d_h1 = r_d_z2 @ w1 + d_z2 @ vw1
        r_d_z1 = r_d_h1 * m1
        hv = np.empty(self.dim)
        sl = self._slices
        hv[sl[0]] = x @ r_d_z1
        hv[sl[1]] = r_d_z1.sum(axis=0)
        hv[sl[2]] = (r_d_z2.T @ h1 + d_z2.T @ r_h1).ravel()
        hv[sl[3]] = r_d_z2.sum(axis=0)
        hv[sl[4]] = r_d_out @ h2 + d_out @ r_h2
        hv[sl[5]] = r_d_out.sum()
        return hv
