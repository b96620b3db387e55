"""Covering-number bound for the discriminator hypothesis class.

Two arities are exposed: the 3-layer headline bound (no activation moduli)
and the 5-layer chain whose product picks up the activation Lipschitz
constants. Spectral quantities of live discriminators are measured by
seeded power iteration, with the reference matrices taken to be the
initialization weights, so b_i measures distance traveled during training.

Note the per-layer epsilon allocation implements the closed form
eps_i = eps * (rho_i * prod_{j<i} s_j rho_j) / (prod_{j<=n} s_j rho_j),
whose increments satisfy eps_{i+1} = rho_{i+1} * s_i * eps_i. A recurrence
with the layer indices shifted one place circulates as well but contradicts
the closed form whenever consecutive layers differ; the closed form is
what the bound's derivation actually consumes, so it is authoritative here.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .adversarial import STREAMS, discriminator_weight_matrices
from .detector import DetectorConfig


@dataclass
class DiscriminatorSpec:
    """Per-layer spectral data for one discriminator."""
    spectral_norms: tuple   # s_1..s_n, all > 0
    distances: tuple        # b_1..b_n, all >= 0
    moduli: tuple           # rho_1..rho_n (activation Lipschitz constants)
    width: int              # W, max layer width
    data_norm: float        # ||X||_2 over the probe set

    def __post_init__(self):
        n = len(self.spectral_norms)
        if n not in (3, 5):
            raise ValueError(f"layer count must be 3 or 5, got {n}")
        if not (len(self.distances) == len(self.moduli) == n):
            raise ValueError("spectral_norms, distances, moduli must align")
        if any(s <= 0 for s in self.spectral_norms):
            raise ValueError("spectral norms must be positive")
        if any(b < 0 for b in self.distances):
            raise ValueError("reference distances must be non-negative")
        if any(r <= 0 for r in self.moduli) or self.width <= 0 or self.data_norm <= 0:
            raise ValueError("moduli, width and data norm must be positive")

    @property
    def n(self) -> int:
        return len(self.spectral_norms)


def covering_bound(spec: DiscriminatorSpec, eps: float) -> float:
    """Upper bound on log N(F|_S, eps, ||.||_2), natural logarithm.

    n=3 uses the headline form log(2W^2) ||X||^2/eps^2 * prod s_i^2 *
    sum b_i^2/s_i^2; n=5 multiplies (prod s_i rho_i)^2 instead of prod s_i^2.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    s = np.asarray(spec.spectral_norms, dtype=np.float64)
    b = np.asarray(spec.distances, dtype=np.float64)
    if spec.n == 3:
        prod = float(np.prod(s ** 2))
    else:
        rho = np.asarray(spec.moduli, dtype=np.float64)
        prod = float(np.prod(s * rho) ** 2)
    lead = math.log(2.0 * spec.width ** 2) * spec.data_norm ** 2 / eps ** 2
    return lead * prod * float(np.sum(b ** 2 / s ** 2))


def epsilon_allocation(spec: DiscriminatorSpec, eps: float) -> np.ndarray:
    """Per-layer granularities eps_1..eps_n splitting a total budget eps."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    s = np.asarray(spec.spectral_norms, dtype=np.float64)
    rho = np.asarray(spec.moduli, dtype=np.float64)
    full = float(np.prod(s * rho))
    if full == 0.0:
        raise ValueError("zero product of spectral norms and moduli")
    out = np.empty(spec.n)
    for i in range(spec.n):
        out[i] = eps * rho[i] * float(np.prod(s[:i] * rho[:i])) / full
    return out


def spectral_norm(mat: np.ndarray, iters: int = 100, tol: float = 1e-8,
                  seed: int = 0) -> float:
    """Largest singular value by seeded power iteration on A^T A."""
    a = np.asarray(mat, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("spectral_norm expects a matrix")
    if not np.any(a):
        return 0.0
    rng = np.random.default_rng(seed)
    v = rng.normal(size=a.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        u = a @ v
        w = a.T @ u
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        new_sigma = float(np.linalg.norm(a @ v))
        if abs(new_sigma - sigma) < tol:
            sigma = new_sigma
            break
        sigma = new_sigma
    return sigma


RELU_MODULUS = 1.0


def discriminator_spec_from_weights(weights: list, init_weights: list,
                                    data_norm: float,
                                    seed: int = 0) -> DiscriminatorSpec:
    """Measure one trained discriminator against its initialization.

    A spectral norm that collapsed to zero is floored at 1e-12 so the
    bound's s_i > 0 precondition holds (the bound then simply reports the
    degenerate layer's contribution through b_i^2/s_i^2).
    """
    s = tuple(max(spectral_norm(w, seed=seed), 1e-12) for w in weights)
    b = tuple(spectral_norm(w - w0, seed=seed)
              for w, w0 in zip(weights, init_weights))
    width = max(max(w.shape) for w in weights)
    return DiscriminatorSpec(spectral_norms=s, distances=b,
                             moduli=(RELU_MODULUS,) * len(weights),
                             width=int(width), data_norm=float(data_norm))


def bank_bound_report(bank: dict, init_bank: dict, cfg: DetectorConfig,
                      data_norm: float, eps: float = 1.0,
                      seed: int = 0) -> dict:
    """Spec + bound for every discriminator in an alignment bank."""
    out = {"eps": float(eps), "data_norm": float(data_norm),
           "discriminators": []}
    for stream in STREAMS:
        layers = cfg.enc_layers if stream.startswith("enc") else cfg.dec_layers
        for layer in range(layers):
            ws = discriminator_weight_matrices(bank, stream, layer)
            w0 = discriminator_weight_matrices(init_bank, stream, layer)
            spec = discriminator_spec_from_weights(ws, w0, data_norm, seed=seed)
            out["discriminators"].append({
                "stream": stream,
                "layer": layer,
                "spectral_norms": [float(x) for x in spec.spectral_norms],
                "distances": [float(x) for x in spec.distances],
                "width": spec.width,
                "bound": covering_bound(spec, eps),
            })
    return out
