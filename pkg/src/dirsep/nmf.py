"""Probabilistic KL-NMF and supervised (fixed-dictionary) NMF.

The model is kept in normalized form: ``dictionary[f, z] = q(f|z)`` with
unit column sums, and ``activations[t, z] = q(t, z)`` summing to one
overall.  One update is a single minorization-maximization step; it never
builds an F x T x Z array.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import EPS, check_nonnegative, safe_ratio, check_positive_int, check_rng

__all__ = [
    "NmfModel",
    "SupervisedModel",
    "nmf_init",
    "nmf_update",
    "nmf_fit",
    "nmf_fit_dictionary",
    "kl_divergence",
    "supervised_init",
    "supervised_update",
    "supervised_nmf_fit",
    "supervised_mask",
]


def _as_distribution(p, ndim):
    p = getattr(p, "p", p)
    return check_nonnegative(p, "p", ndim=ndim)


def _init_uniform(rng, shape):
    # uniform(0.1, 1) keeps multiplicative updates away from near-zero starts
    return rng.uniform(0.1, 1.0, size=shape)


def _normalize(a, axis=None):
    total = a.sum(axis=axis, keepdims=axis is not None)
    return a / np.maximum(total, EPS)


@dataclass
class NmfModel:
    """``dictionary`` q(f|z) of shape (F, Z); ``activations`` q(t, z) of shape (T, Z)."""

    dictionary: np.ndarray
    activations: np.ndarray

    @property
    def shape(self):
        F, Z = self.dictionary.shape
        return F, self.activations.shape[0], Z

    def marginal(self):
        """q(f, t) = sum_z q(f|z) q(t, z)."""
        return self.dictionary @ self.activations.T

    def to_dict(self):
        F, T, Z = self.shape
        return {"F": F, "T": T, "Z": Z,
                "dictionary": self.dictionary.ravel().tolist(),
                "activations": self.activations.ravel().tolist()}

    @classmethod
    def from_dict(cls, obj):
        F, T, Z = obj["F"], obj["T"], obj["Z"]
        return cls(np.asarray(obj["dictionary"], dtype=np.float64).reshape(F, Z),
                   np.asarray(obj["activations"], dtype=np.float64).reshape(T, Z))


def nmf_init(F, T, Z, seed=0):
    """Random strictly positive normalized model, deterministic per ``seed``."""
    F = check_positive_int(F, "F")
    T = check_positive_int(T, "T")
    Z = check_positive_int(Z, "Z")
    rng = check_rng(seed)
    W = _normalize(_init_uniform(rng, (F, Z)), axis=0)
    H = _normalize(_init_uniform(rng, (T, Z)))
    return NmfModel(W, H)


def kl_divergence(p, q):
    """KL(p || q) in nats with the 0 log 0 = 0 convention.

    Returns ``inf`` when ``q`` vanishes somewhere ``p`` does not.
    """
    p = np.asarray(getattr(p, "p", p), dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] <= 0):
        return np.inf
    ps = p[support]
    return float(max(np.sum(ps * (np.log(ps) - np.log(q[support]))), 0.0))


def nmf_update(p, model):
    """One multiplicative update of ``model`` toward the F x T distribution ``p``."""
    p = _as_distribution(p, 2)
    W, H = model.dictionary, model.activations
    rho = safe_ratio(p, W @ H.T)
    new_H = H * (rho.T @ W)
    new_W = W * (rho @ H)
    return NmfModel(_normalize(new_W, axis=0), _normalize(new_H))


def nmf_fit(p, Z, n_iter=200, seed=0, tol=None, init=None):
    """Run ``n_iter`` updates from a random start.

    With ``tol`` set, stops early once the relative KL change drops below it.

    Returns
    -------
    model : NmfModel
    history : list of float
        KL divergence after every completed iteration.
    """
    p = _as_distribution(p, 2)
    n_iter = check_positive_int(n_iter, "n_iter")
    F, T = p.shape
    model = init if init is not None else nmf_init(F, T, Z, seed)
    history = []
    for _ in range(n_iter):
        model = nmf_update(p, model)
        history.append(kl_divergence(p, model.marginal()))
        if _converged(history, tol):
            break
    return model, history


def _converged(history, tol):
    if tol is None or len(history) < 2:
        return False
    prev, cur = history[-2], history[-1]
    return abs(prev - cur) <= tol * max(abs(prev), EPS)


def nmf_fit_dictionary(p_train, Z, n_iter=200, seed=0):
    """Learn q(f|z) from training data; the fitted activations are dropped."""
    model, _ = nmf_fit(p_train, Z, n_iter=n_iter, seed=seed)
    return model.dictionary


@dataclass
class SupervisedModel:
    """Fixed per-source dictionaries plus learned activations and source weights.

    Attributes
    ----------
    dictionaries : ndarray (F, Z, S)
        q(f|z,s), held fixed during fitting.
    weights : ndarray (S,)
        q(s).
    activations : ndarray (T, Z, S)
        q(t,z|s), each source slice sums to one.
    """

    dictionaries: np.ndarray
    weights: np.ndarray
    activations: np.ndarray

    @property
    def n_sources(self):
        return self.weights.shape[0]

    def source_marginals(self):
        """q(f,t|s) as an (S, F, T) array."""
        W = self.dictionaries.transpose(2, 0, 1)
        H = self.activations.transpose(2, 1, 0)
        return W @ H

    def marginal(self):
        return np.tensordot(self.weights, self.source_marginals(), axes=(0, 0))

    def to_dict(self):
        F, Z, S = self.dictionaries.shape
        return {"F": F, "T": self.activations.shape[0], "Z": Z, "S": S,
                "dictionaries": self.dictionaries.ravel().tolist(),
                "weights": self.weights.tolist(),
                "activations": self.activations.ravel().tolist()}

    @classmethod
    def from_dict(cls, obj):
        F, T, Z, S = obj["F"], obj["T"], obj["Z"], obj["S"]
        return cls(np.asarray(obj["dictionaries"], dtype=np.float64).reshape(F, Z, S),
                   np.asarray(obj["weights"], dtype=np.float64),
                   np.asarray(obj["activations"], dtype=np.float64).reshape(T, Z, S))


def _stack_dictionaries(dicts):
    if isinstance(dicts, np.ndarray) and dicts.ndim == 3:
        return check_nonnegative(dicts, "dictionaries")
    dicts = [np.asarray(d, dtype=np.float64) for d in dicts]
    shapes = {d.shape for d in dicts}
    if len({s[0] for s in shapes}) != 1:
        raise ValueError(f"dictionaries disagree on F: {sorted(shapes)}")
    if len(shapes) != 1:
        raise ValueError(f"dictionaries must share (F, Z), got {sorted(shapes)}")
    return check_nonnegative(np.stack(dicts, axis=-1), "dictionaries")


def supervised_init(dicts, T, seed=0):
    dicts = _stack_dictionaries(dicts)
    T = check_positive_int(T, "T")
    _, Z, S = dicts.shape
    rng = check_rng(seed)
    H = _normalize(_init_uniform(rng, (T, Z, S)), axis=(0, 1))
    return SupervisedModel(dicts, np.full(S, 1.0 / S), H)


def supervised_update(p, model):
    """One MM step updating q(s) and q(t,z|s) with the dictionaries fixed."""
    p = _as_distribution(p, 2)
    W = model.dictionaries
    # joint q(t,z,s) = q(s) q(t,z|s)
    joint = model.activations * model.weights
    rho = safe_ratio(p, model.marginal())
    new_joint = joint * (rho.T @ W.transpose(2, 0, 1)).transpose(1, 2, 0)
    weights = new_joint.sum(axis=(0, 1))
    activations = new_joint / np.maximum(weights, EPS)
    return SupervisedModel(W, weights / max(weights.sum(), EPS), activations)


def supervised_mask(model):
    """Posterior q(s|f,t) as an (S, F, T) array; empty bins get 1/S."""
    num = model.weights[:, None, None] * model.source_marginals()
    return _posterior(num)


def _posterior(num):
    total = num.sum(axis=0)
    S = num.shape[0]
    out = np.full_like(num, 1.0 / S)
    ok = total > 0
    out[:, ok] = num[:, ok] / total[ok]
    return out


def supervised_nmf_fit(p_mix, dicts, n_iter=200, seed=0, tol=None, return_history=False):
    """Fit activations and source weights with fixed dictionaries.

    Returns
    -------
    model : SupervisedModel
    mask : ndarray (S, F, T)
        q(s|f,t).
    history : list of float
        Only when ``return_history`` is set.
    """
    p = _as_distribution(p_mix, 2)
    dicts = _stack_dictionaries(dicts)
    if dicts.shape[0] != p.shape[0]:
        raise ValueError(f"dictionary F={dicts.shape[0]} does not match mixture F={p.shape[0]}")
    n_iter = check_positive_int(n_iter, "n_iter")
    model = supervised_init(dicts, p.shape[1], seed)
    history = []
    for _ in range(n_iter):
        model = supervised_update(p, model)
        history.append(kl_divergence(p, model.marginal()))
        if _converged(history, tol):
            break
    mask = supervised_mask(model)
    if return_history:
        return model, mask, history
    return model, mask
