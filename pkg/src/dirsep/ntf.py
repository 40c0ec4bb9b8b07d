"""Directional nonnegative tensor factorization.

The observed distribution over frequency, time and direction is modelled as

    q(f, t, d) = sum_{s, z} q(d, s) q(f | z, s) q(t, z | s)

so every dictionary element of a source shares that source's direction
distribution.  Updates are minorization-maximization steps written as
multiplicative updates around the ratio ``rho = p / q``.

Two observation forms are supported:

* dense: an F x T x D array ``p(f, t, d)``;
* sparse: ``p(f, t)`` plus a single direction index ``d(f, t)`` per bin,
  i.e. ``p(f, t, d) = p(f, t) [d == d(f, t)]``.  The sparse update costs
  O(FTZS) per iteration with no dependence on D.

Directional NMF is the less structured baseline ``q(f, t | s) q(d, s)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    EPS,
    check_direction_indices,
    check_nonnegative,
    check_positive_int,
    check_rng,
    safe_ratio,
)
from .doa import DirectionField, bin_center
from .nmf import _init_uniform, _normalize, _posterior, kl_divergence

__all__ = [
    "NtfModel",
    "DnmfModel",
    "DenseDirectionalObservation",
    "SparseDirectionalObservation",
    "dntf_init",
    "dntf_update_dense",
    "dntf_update_sparse",
    "dnmf_init",
    "dnmf_update",
    "densify",
    "dense_kl",
    "sparse_kl",
    "posterior_mask",
    "source_direction_summary",
]

MASK_MODES = ("conditioned", "marginal")


@dataclass
class NtfModel:
    """Factors of the directional model.

    Attributes
    ----------
    directions : ndarray (D, S)
        Joint q(d, s), sums to one.
    dictionary : ndarray (F, Z, S)
        q(f | z, s), unit sum over f.
    activations : ndarray (T, Z, S)
        q(t, z | s), unit sum over (t, z) for each s.
    """

    directions: np.ndarray
    dictionary: np.ndarray
    activations: np.ndarray

    @property
    def dims(self):
        F, Z, S = self.dictionary.shape
        return {"F": F, "T": self.activations.shape[0],
                "D": self.directions.shape[0], "S": S, "Z": Z}

    @property
    def source_weights(self):
        """q(s) = sum_d q(d, s)."""
        return self.directions.sum(axis=0)

    def direction_given_source(self):
        """q(d | s), columns sum to one."""
        return self.directions / np.maximum(self.source_weights, EPS)

    def source_marginals(self):
        """q(f, t | s) as an (S, F, T) array."""
        return _source_marginals(self.dictionary, self.activations)

    def marginal(self):
        """Dense q(f, t, d), shape (F, T, D).  Allocates F*T*D floats."""
        return np.moveaxis(_direction_mix(self.directions, self.source_marginals()), 0, -1)

    def permute_sources(self, order):
        order = np.asarray(order)
        return NtfModel(self.directions[:, order], self.dictionary[:, :, order],
                        self.activations[:, :, order])

    def to_dict(self):
        dims = self.dims
        return {**dims,
                "directions": self.directions.ravel().tolist(),
                "dictionary": self.dictionary.ravel().tolist(),
                "activations": self.activations.ravel().tolist()}

    @classmethod
    def from_dict(cls, obj):
        F, T, D, S, Z = (obj[k] for k in ("F", "T", "D", "S", "Z"))
        arr = lambda key, shape: np.asarray(obj[key], dtype=np.float64).reshape(shape)
        return cls(arr("directions", (D, S)), arr("dictionary", (F, Z, S)),
                   arr("activations", (T, Z, S)))


@dataclass
class DnmfModel:
    """Directional NMF factors: ``joint`` q(f, t | s) as (F, T, S), ``directions`` q(d, s)."""

    joint: np.ndarray
    directions: np.ndarray

    def source_marginals(self):
        return np.moveaxis(self.joint, -1, 0)

    def marginal(self):
        return np.moveaxis(_direction_mix(self.directions, self.source_marginals()), 0, -1)

    def to_dict(self):
        F, T, S = self.joint.shape
        return {"F": F, "T": T, "D": self.directions.shape[0], "S": S,
                "joint": self.joint.ravel().tolist(),
                "directions": self.directions.ravel().tolist()}

    @classmethod
    def from_dict(cls, obj):
        F, T, D, S = obj["F"], obj["T"], obj["D"], obj["S"]
        return cls(np.asarray(obj["joint"], dtype=np.float64).reshape(F, T, S),
                   np.asarray(obj["directions"], dtype=np.float64).reshape(D, S))


@dataclass
class DenseDirectionalObservation:
    """``p[f, t, d]`` summing to one.

    ``bins`` maps each retained direction slot back to its original bin
    index (identity unless empty bins were dropped by :func:`densify`).
    """

    p: np.ndarray
    bins: np.ndarray = field(default=None)

    def __post_init__(self):
        self.p = check_nonnegative(self.p, "p", ndim=3)
        if self.bins is None:
            self.bins = np.arange(self.p.shape[2])
        self.bins = np.asarray(self.bins, dtype=np.intp)

    @property
    def shape(self):
        return self.p.shape


@dataclass
class SparseDirectionalObservation:
    """``p[f, t]`` with one direction index ``d[f, t]`` per bin."""

    p: np.ndarray
    d: np.ndarray
    n_directions: int

    def __post_init__(self):
        self.p = check_nonnegative(getattr(self.p, "p", self.p), "p", ndim=2)
        self.n_directions = check_positive_int(self.n_directions, "n_directions")
        self.d = check_direction_indices(getattr(self.d, "d", self.d), self.p.shape,
                                         self.n_directions)

    @classmethod
    def from_field(cls, spectrogram, field):
        if not isinstance(field, DirectionField):
            raise TypeError("field must be a DirectionField")
        return cls(spectrogram, field.d, field.n_directions)

    @property
    def shape(self):
        return self.p.shape


def densify(obs, drop_empty=False):
    """Scatter a sparse observation into an F x T x D tensor.

    With ``drop_empty`` the direction bins carrying no mass are removed and
    the remaining ones reindexed (``bins`` records the original indices).
    """
    F, T = obs.p.shape
    D = obs.n_directions
    dense = np.zeros((F, T, D))
    f_idx, t_idx = np.indices((F, T))
    dense[f_idx, t_idx, obs.d] = obs.p
    bins = np.arange(D)
    if drop_empty:
        keep = dense.sum(axis=(0, 1)) > 0
        dense, bins = dense[:, :, keep], bins[keep]
    return DenseDirectionalObservation(dense, bins)


def _source_major(a, axes):
    # contiguous copies keep matmul rounding independent of the input strides
    return np.ascontiguousarray(a.transpose(axes))


def _source_marginals(W, H):
    # (S, F, Z) @ (S, Z, T) -> (S, F, T), one matrix product per source
    return _source_major(W, (2, 0, 1)) @ _source_major(H, (2, 1, 0))


def _canonical_order(*per_source):
    """Source indices ordered by the raw bytes of their terms.

    Adding terms in this order makes sums invariant to source relabeling:
    the order follows the content, and sources with identical content
    contribute identical terms.  Costs one pass over the data, unlike an
    elementwise sort.
    """
    S = per_source[0].shape[0]
    return sorted(range(S), key=lambda s: tuple(np.ascontiguousarray(a[s]).tobytes()
                                                for a in per_source))


def _sum_sources(terms):
    """Sum over the leading source axis independently of source order."""
    if terms.shape[0] <= 2:  # two-term float addition is commutative
        return terms.sum(axis=0)
    order = _canonical_order(terms)
    out = terms[order[0]].copy()
    for s in order[1:]:
        out += terms[s]
    return out


def _gather_directions(B, d):
    """q(d(f, t), s) as a C-ordered (S, F, T) array.

    ``B.T[:, d]`` would leave the source axis innermost, which slows every
    later per-source matrix product.
    """
    return np.take(np.ascontiguousarray(B.T), d, axis=1)


def _direction_mix(B, qfts):
    """sum_s B[d, s] qfts[s] as a (D, F, T) array."""
    order = _canonical_order(B.T, qfts) if qfts.shape[0] > 2 else range(qfts.shape[0])
    order = list(order)
    out = B[:, order[0], None, None] * qfts[order[0]]
    for s in order[1:]:
        out += B[:, s, None, None] * qfts[s]
    return out


def _normalize_joint(B):
    # column sums then an exactly rounded total: invariant to source order
    total = math.fsum(B.sum(axis=0))
    return B / max(total, EPS)


def _normalized_ntf(B, W, H):
    return NtfModel(_normalize_joint(B), _normalize(W, axis=0), _normalize(H, axis=(0, 1)))


def dntf_init(F, T, D, S, Z, seed=0):
    """Random strictly positive normalized model, deterministic per ``seed``."""
    F, T, D, S, Z = (check_positive_int(v, name) for v, name in
                     zip((F, T, D, S, Z), "FTDSZ"))
    rng = check_rng(seed)
    B = _init_uniform(rng, (D, S))
    W = _init_uniform(rng, (F, Z, S))
    H = _init_uniform(rng, (T, Z, S))
    return _normalized_ntf(B, W, H)


def _check_compatible(model, F, T, D=None):
    dims = model.dims
    if (dims["F"], dims["T"]) != (F, T):
        raise ValueError(f"model is {dims['F']}x{dims['T']}, observation is {F}x{T}")
    if D is not None and dims["D"] != D:
        raise ValueError(f"model has D={dims['D']}, observation has D={D}")


def _factor_updates(g, model):
    """Multiplicative dictionary/activation updates given g(s, f, t).

    ``g[s, f, t] = sum_d rho(f, t, d) q(d, s)`` in either observation form.
    Returns unnormalized r(f, z, s) and r(t, z, s).
    """
    Wt = _source_major(model.dictionary, (2, 0, 1))  # (S, F, Z)
    Ht = _source_major(model.activations, (2, 0, 1))  # (S, T, Z)
    new_W = Wt * (g @ Ht)
    new_H = Ht * (np.ascontiguousarray(g.transpose(0, 2, 1)) @ Wt)
    return new_W.transpose(1, 2, 0), new_H.transpose(1, 2, 0)


def dntf_update_dense(obs, model):
    """One MM step on a dense F x T x D observation.

    Schedule: q(f,t|s) per source, the D x S by S x FT product for q(f,t,d),
    ``rho = p / q``, then a D x FT by FT x S product for q(d,s) and per-source
    matrix products for the dictionary and activations.  Peak extra memory is
    O(FTD + FTS + FZS + TZS).
    """
    p = obs.p if isinstance(obs, DenseDirectionalObservation) else check_nonnegative(obs, "p", ndim=3)
    F, T, D = p.shape
    _check_compatible(model, F, T, D)
    S = model.directions.shape[1]
    B = model.directions
    qfts = model.source_marginals()  # (S, F, T)
    rho = safe_ratio(np.moveaxis(p, -1, 0), _direction_mix(B, qfts))  # (D, F, T)
    new_B = B * (rho.reshape(D, F * T) @ qfts.reshape(S, F * T).T)
    g = np.tensordot(B.T, rho, axes=(1, 0))  # (S, F, T)
    new_W, new_H = _factor_updates(g, model)
    return _normalized_ntf(new_B, new_W, new_H)


def dntf_update_sparse(obs, model):
    """One MM step when every bin carries a single direction index.

    Only q(f, t, d(f, t)) is ever formed, so the update needs O(FTS + FZS + TZS)
    memory and O(FTZS) operations regardless of D.
    """
    p, d, D = obs.p, obs.d, obs.n_directions
    F, T = p.shape
    _check_compatible(model, F, T, D)
    B = model.directions
    S = B.shape[1]
    qfts = model.source_marginals()  # (S, F, T)
    B_at = _gather_directions(B, d)  # q(d(f,t), s)
    weighted = B_at * qfts
    rho = safe_ratio(p, _sum_sources(weighted))
    weighted *= rho  # now rho(f,t) q(d(f,t),s) q(f,t|s)
    flat_d = d.ravel()
    new_B = np.empty((D, S))
    for s in range(S):
        new_B[:, s] = np.bincount(flat_d, weights=weighted[s].ravel(), minlength=D)
    B_at *= rho  # g(s, f, t) = rho(f,t) q(d(f,t), s)
    new_W, new_H = _factor_updates(B_at, model)
    return _normalized_ntf(new_B, new_W, new_H)


def dense_kl(obs, model):
    """KL(p(f,t,d) || q(f,t,d)) for a dense observation (or raw array)."""
    p = getattr(obs, "p", obs)
    return kl_divergence(p, model.marginal())


def sparse_kl(obs, model):
    """KL between the densified sparse observation and the model marginal.

    Evaluated without densifying: only q(f, t, d(f, t)) is needed.
    """
    p = obs.p
    q = _sum_sources(_gather_directions(model.directions, obs.d) * model.source_marginals())
    support = p > 0
    if np.any(q[support] <= 0):
        return np.inf
    ps = p[support]
    return float(max(np.sum(ps * (np.log(ps) - np.log(q[support]))), 0.0))


def dnmf_init(F, T, D, S, seed=0):
    F, T, D, S = (check_positive_int(v, name) for v, name in zip((F, T, D, S), "FTDS"))
    rng = check_rng(seed)
    B = _init_uniform(rng, (D, S))
    J = _init_uniform(rng, (F, T, S))
    return DnmfModel(_normalize(J, axis=(0, 1)), _normalize_joint(B))


def dnmf_update(obs, model):
    """One MM step for the two-factor model q(f, t | s) q(d, s)."""
    p = obs.p if isinstance(obs, DenseDirectionalObservation) else check_nonnegative(obs, "p", ndim=3)
    F, T, D = p.shape
    S = model.directions.shape[1]
    if model.joint.shape[:2] != (F, T) or model.directions.shape[0] != D:
        raise ValueError("model and observation dimensions disagree")
    B = model.directions
    qfts = model.source_marginals()
    rho = safe_ratio(np.moveaxis(p, -1, 0), _direction_mix(B, qfts))
    new_B = B * (rho.reshape(D, F * T) @ qfts.reshape(S, F * T).T)
    new_J = qfts * np.tensordot(B.T, rho, axes=(1, 0))
    return DnmfModel(_normalize(np.moveaxis(new_J, 0, -1), axis=(0, 1)), _normalize_joint(new_B))


def posterior_mask(model, obs, mode="conditioned"):
    """Soft mask q(s | f, t) as an (S, F, T) array.

    ``conditioned`` uses the observed direction of each bin,
    ``mask ~ q(d(f,t), s) q(f,t|s)``; ``marginal`` ignores it,
    ``mask ~ q(s) q(f,t|s)``.  Bins with no model mass get 1/S.  For a
    dense observation the conditioned mask averages q(s | f, t, d) over the
    observed p(d | f, t).

    ``model`` may be an :class:`NtfModel` or :class:`DnmfModel`.  For a
    Directional NMF model fitted on a dense tensor with dropped bins, pass
    ``obs.d`` already mapped to the retained slots.
    """
    if mode not in MASK_MODES:
        raise ValueError(f"mode must be one of {MASK_MODES}, got {mode!r}")
    qfts = model.source_marginals()
    B = model.directions
    weights = B.sum(axis=0)[:, None, None] * qfts
    if mode == "marginal":
        return _posterior(weights)
    if isinstance(obs, DenseDirectionalObservation):
        return _dense_conditioned_mask(obs.p, B, qfts, weights)
    d = obs.d if hasattr(obs, "d") else np.asarray(obs)
    return _posterior(_gather_directions(B, d) * qfts)


def _dense_conditioned_mask(p, B, qfts, fallback):
    """sum_d p(d | f, t) q(s | f, t, d); bins without observed mass use ``fallback``."""
    rho = safe_ratio(np.moveaxis(p, -1, 0), _direction_mix(B, qfts))
    num = np.tensordot(B.T, rho, axes=(1, 0)) * qfts
    p_ft = p.sum(axis=-1)
    mask = _posterior(fallback)
    observed = p_ft > 0
    mask[:, observed] = _posterior(num[:, observed][:, :, None])[:, :, 0]
    return mask


def source_direction_summary(model, n_directions=None, bins=None):
    """Circular mean and concentration of q(d | s) for every source.

    Bin ``j`` is placed at its center azimuth.  Concentration is the mean
    resultant length in [0, 1]; when it is numerically zero the mean is
    undefined and reported as the bin-0 center with ``defined=False``.
    Sources are returned sorted by azimuth.

    When empty bins were dropped before fitting, ``bins`` gives the original
    index of each row of ``model.directions`` and ``n_directions`` the full
    bin count.
    """
    B = np.asarray(model.directions)
    D = n_directions or B.shape[0]
    if bins is None:
        bins = np.arange(B.shape[0])
    weights = B.sum(axis=0)
    cond = B / np.maximum(weights, EPS)
    phasors = np.exp(1j * bin_center(bins, D))
    out = []
    for s in range(B.shape[1]):
        resultant = np.sum(cond[:, s] * phasors)
        concentration = float(min(abs(resultant), 1.0))
        defined = concentration > 1e-9
        azimuth = float(np.mod(np.angle(resultant), 2 * np.pi)) if defined else float(bin_center(0, D))
        out.append({"source": s, "azimuth": azimuth, "concentration": concentration if defined else 0.0,
                    "defined": bool(defined), "weight": float(weights[s])})
    out.sort(key=lambda rec: rec["azimuth"])
    return out
