"""Domain discriminators and cascaded alignment losses.

Four independent discriminator stacks (query/token crossed with
encoder/decoder) each hold one 3-layer MLP per transformer layer. All four
streams reduce to non-negative binary cross-entropies on a domain label, so
the adversarial min-max is realized by minimizing BCE while a gradient
reversal layer upstream flips the sign seen by the feature extractor. The
aggregate per stream weights token terms by 1 and query terms by 0.1 and
sums across layers, from shallow to deep.

Domain labels: the source-similar subset plays d=0 (source stand-in), the
source-dissimilar subset plays d=1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .detector import DetectorConfig, _xavier

STREAMS = ("enc_q", "enc_k", "dec_q", "dec_k")
DEFAULT_QUERY_WEIGHT = 0.1


def init_discriminator_params(in_dim: int, hidden: int, seed) -> dict[str, np.ndarray]:
    """One 3-affine-layer MLP (ReLU between layers) emitting a single logit."""
    rng = np.random.default_rng(seed)
    return {
        "l1.w": _xavier(rng, in_dim, hidden),
        "l1.b": np.zeros(hidden),
        "l2.w": _xavier(rng, hidden, hidden),
        "l2.b": np.zeros(hidden),
        "l3.w": _xavier(rng, hidden, 1),
        "l3.b": np.zeros(1),
    }


def discriminator_logits(p: dict[str, Tensor], x: Tensor) -> Tensor:
    """(..., C) embeddings -> (..., 1) domain logits."""
    h = ad.relu(ad.matmul(x, p["l1.w"]) + p["l1.b"])
    h = ad.relu(ad.matmul(h, p["l2.w"]) + p["l2.b"])
    return ad.matmul(h, p["l3.w"]) + p["l3.b"]


def domain_bce(logits, d) -> Tensor:
    """Stabilized elementwise BCE on logits: softplus(x) - x*d, always >= 0."""
    x = logits if isinstance(logits, Tensor) else ad.Tensor(logits)
    return ad.softplus(x) - x * float(d)


def _batched(state: Tensor) -> Tensor:
    if state.ndim == 2:
        return ad.reshape(state, (1,) + state.shape)
    if state.ndim != 3:
        raise ValueError(f"state must be (S,C) or (B,S,C), got {state.shape}")
    return state


def query_loss_layer(state: Tensor, d, disc: dict[str, Tensor]) -> Tensor:
    """BCE of the discriminator on the domain-query slot (slot 0), batch-mean."""
    state = _batched(state)
    slot0 = state[:, 0, :]
    return ad.reduce_mean(domain_bce(discriminator_logits(disc, slot0), d))


def token_loss_layer(state: Tensor, d, disc: dict[str, Tensor]) -> Tensor:
    """Mean BCE over every non-domain slot (tokens or object queries)."""
    state = _batched(state)
    if state.shape[1] < 2:
        raise ValueError("state has no slots beyond the domain query")
    rest = state[:, 1:, :]
    return ad.reduce_mean(domain_bce(discriminator_logits(disc, rest), d))


@dataclass
class AlignmentLosses:
    """Per-layer scalars and stream aggregates, all live tensors."""
    enc_query: list
    enc_token: list
    dec_query: list
    dec_token: list
    enc_total: Tensor
    dec_total: Tensor

    def scalars(self) -> dict[str, float]:
        out = {}
        for name, terms in (("enc_q", self.enc_query), ("enc_k", self.enc_token),
                            ("dec_q", self.dec_query), ("dec_k", self.dec_token)):
            for i, t in enumerate(terms):
                out[f"{name}.{i}"] = float(t.data)
        out["enc_total"] = float(self.enc_total.data)
        out["dec_total"] = float(self.dec_total.data)
        return out


def cascade(enc_states, dec_states, d, discs: dict, *,
            lambda_enc_q: float = DEFAULT_QUERY_WEIGHT,
            lambda_dec_q: float = DEFAULT_QUERY_WEIGHT) -> AlignmentLosses:
    """Weighted sum of per-layer query/token losses over both stacks.

    enc_states/dec_states are the per-layer outputs (embedding layer
    excluded); discs maps stream name -> list of bound discriminators, one
    per layer.
    """
    if len(enc_states) != len(discs["enc_q"]) or len(enc_states) != len(discs["enc_k"]):
        raise ValueError("encoder layer count does not match discriminator stack")
    if len(dec_states) != len(discs["dec_q"]) or len(dec_states) != len(discs["dec_k"]):
        raise ValueError("decoder layer count does not match discriminator stack")

    enc_q = [query_loss_layer(s, d, disc) for s, disc in zip(enc_states, discs["enc_q"])]
    enc_k = [token_loss_layer(s, d, disc) for s, disc in zip(enc_states, discs["enc_k"])]
    dec_q = [query_loss_layer(s, d, disc) for s, disc in zip(dec_states, discs["dec_q"])]
    dec_k = [token_loss_layer(s, d, disc) for s, disc in zip(dec_states, discs["dec_k"])]

    def total(tok, qry, lam):
        acc = None
        for t, q in zip(tok, qry):
            term = t + lam * q
            acc = term if acc is None else acc + term
        return acc if acc is not None else ad.Tensor(0.0)

    return AlignmentLosses(
        enc_query=enc_q, enc_token=enc_k, dec_query=dec_q, dec_token=dec_k,
        enc_total=total(enc_k, enc_q, lambda_enc_q),
        dec_total=total(dec_k, dec_q, lambda_dec_q),
    )


def init_alignment_bank(cfg: DetectorConfig, hidden: int, seed: int) -> dict[str, np.ndarray]:
    """Flat parameter dict for all 4 * num_layers discriminators.

    Keys look like 'enc_q.0.l1.w'. Encoder streams get one MLP per encoder
    layer, decoder streams one per decoder layer.
    """
    bank: dict[str, np.ndarray] = {}
    for si, stream in enumerate(STREAMS):
        layers = cfg.enc_layers if stream.startswith("enc") else cfg.dec_layers
        for layer in range(layers):
            p = init_discriminator_params(
                cfg.hidden_dim, hidden,
                np.random.SeedSequence([int(seed), si, layer]))
            for k, v in p.items():
                bank[f"{stream}.{layer}.{k}"] = v
    return bank


def bind_alignment_bank(tape: ad.Tape, bank: dict[str, np.ndarray],
                        cfg: DetectorConfig, trainable: bool = True) -> dict:
    """Bind the flat bank onto a tape, shaped as stream -> per-layer dicts."""
    bound = {k: tape.leaf(v, requires_grad=trainable) for k, v in bank.items()}
    out: dict = {}
    for stream in STREAMS:
        layers = cfg.enc_layers if stream.startswith("enc") else cfg.dec_layers
        out[stream] = []
        for layer in range(layers):
            prefix = f"{stream}.{layer}."
            out[stream].append({k[len(prefix):]: t for k, t in bound.items()
                                if k.startswith(prefix)})
    return out


def discriminator_weight_matrices(bank: dict[str, np.ndarray],
                                  stream: str, layer: int) -> list[np.ndarray]:
    """The three weight matrices of one discriminator, input to output order."""
    return [bank[f"{stream}.{layer}.l{i}.w"] for i in (1, 2, 3)]
