"""scikit-learn compatible estimators wrapping the factorization routines.

All three estimators produce a separation mask of shape (S, F, T) from a
normalized magnitude spectrogram:

* :class:`DirectionalNTF` and :class:`DirectionalNMF` learn from the
  spectrogram plus per-bin direction indices, with no training data;
* :class:`SupervisedNMF` learns one dictionary per source from clean
  training spectrograms in ``fit`` and separates a mixture in ``transform``.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import nmf as _nmf
from . import ntf as _ntf
from ._validation import check_nonnegative, check_positive_int, check_rng

__all__ = ["DirectionalNTF", "DirectionalNMF", "SupervisedNMF", "check_observation"]


def _spectrogram_array(X):
    X = check_nonnegative(getattr(X, "p", X), "X", ndim=(2, 3))
    total = X.sum()
    if total <= 0:
        raise ValueError("X has no mass")
    return X / total


def check_observation(X, directions=None, n_directions=None):
    """Build a directional observation from estimator inputs.

    ``X`` is either an (F, T, D) tensor (``directions`` must be None) or an
    (F, T) spectrogram with ``directions`` given as an (F, T) integer array
    or a :class:`~dirsep.doa.DirectionField`.  Inputs are renormalized to
    sum to one.
    """
    X = _spectrogram_array(X)
    if X.ndim == 3:
        if directions is not None:
            raise ValueError("directions must be None for an (F, T, D) observation")
        return _ntf.DenseDirectionalObservation(X)
    if directions is None:
        raise ValueError("an (F, T) spectrogram needs per-bin directions")
    if n_directions is None:
        n_directions = getattr(directions, "n_directions", None)
    d = getattr(directions, "d", directions)
    if n_directions is None:
        n_directions = int(np.max(d)) + 1
    return _ntf.SparseDirectionalObservation(X, d, n_directions)


def _kl(obs, model):
    if isinstance(obs, _ntf.SparseDirectionalObservation):
        return _ntf.sparse_kl(obs, model)
    return _ntf.dense_kl(obs, model)


class DirectionalNTF(TransformerMixin, BaseEstimator):
    """Directional NTF source separation.

    Parameters
    ----------
    n_sources : int, default=2
    n_components : int, default=20
        Dictionary elements per source.
    n_iter : int, default=200
    mask_mode : {"conditioned", "marginal"}, default="conditioned"
    tol : float or None, default=None
        Relative KL change for early stopping; None runs all iterations.
    random_state : int, Generator or None, default=0

    Attributes
    ----------
    model_ : NtfModel
    mask_ : ndarray (n_sources, F, T)
        Posterior mask of the training observation.
    kl_history_ : list of float
    n_iter_ : int
    n_directions_ : int
    """

    def __init__(self, n_sources=2, n_components=20, n_iter=200, mask_mode="conditioned",
                 tol=None, random_state=0):
        self.n_sources = n_sources
        self.n_components = n_components
        self.n_iter = n_iter
        self.mask_mode = mask_mode
        self.tol = tol
        self.random_state = random_state

    def _check_params(self):
        check_positive_int(self.n_sources, "n_sources")
        check_positive_int(self.n_components, "n_components")
        check_positive_int(self.n_iter, "n_iter")
        if self.mask_mode not in _ntf.MASK_MODES:
            raise ValueError(f"mask_mode must be one of {_ntf.MASK_MODES}")

    def _step(self, obs, model):
        if isinstance(obs, _ntf.SparseDirectionalObservation):
            return _ntf.dntf_update_sparse(obs, model)
        return _ntf.dntf_update_dense(obs, model)

    def fit(self, X, directions=None, n_directions=None):
        """Fit the factorization to ``X`` (see :func:`check_observation`)."""
        self._check_params()
        obs = check_observation(X, directions, n_directions)
        F, T = obs.p.shape[:2]
        D = obs.n_directions if hasattr(obs, "n_directions") else obs.p.shape[2]
        model = _ntf.dntf_init(F, T, D, self.n_sources, self.n_components,
                               check_rng(self.random_state))
        history = []
        for _ in range(self.n_iter):
            model = self._step(obs, model)
            history.append(_kl(obs, model))
            if _nmf._converged(history, self.tol):
                break
        self.model_ = model
        self.kl_history_ = history
        self.n_iter_ = len(history)
        self.n_directions_ = D
        self.mask_ = _ntf.posterior_mask(model, obs, self.mask_mode)
        return self

    def fit_transform(self, X, directions=None, n_directions=None):
        return self.fit(X, directions, n_directions).mask_

    def transform(self, X, directions=None):
        """Mask for new data, re-estimating only the activations.

        The fitted dictionary and direction factors are held fixed.  When
        ``X`` has the fitted number of frames the fitted activations seed the
        iteration, so transforming the training data is a no-op refit.
        """
        check_is_fitted(self, "model_")
        obs = check_observation(X, directions, self.n_directions_)
        F, T = obs.p.shape[:2]
        base = self.model_
        if F != base.dims["F"]:
            raise ValueError(f"X has F={F}, model was fitted with F={base.dims['F']}")
        if T == base.dims["T"]:
            H = base.activations
        else:
            rng = check_rng(self.random_state)
            H = _nmf._normalize(_nmf._init_uniform(rng, (T, self.n_components, self.n_sources)),
                                axis=(0, 1))
        model = _ntf.NtfModel(base.directions, base.dictionary, H)
        for _ in range(self.n_iter):
            model = _ntf.NtfModel(base.directions, base.dictionary,
                                  self._step(obs, model).activations)
        return _ntf.posterior_mask(model, obs, self.mask_mode)

    def source_directions(self):
        """Per-source circular mean azimuth and concentration of q(d|s)."""
        check_is_fitted(self, "model_")
        return _ntf.source_direction_summary(self.model_, self.n_directions_)


class DirectionalNMF(TransformerMixin, BaseEstimator):
    """Directional NMF baseline: ``p(f,t,d) ~ sum_s q(f,t|s) q(d,s)``.

    Sparse inputs are scattered into a dense tensor; direction bins with no
    mass are dropped when ``drop_empty`` is set.
    """

    def __init__(self, n_sources=2, n_iter=200, mask_mode="conditioned", drop_empty=True,
                 tol=None, random_state=0):
        self.n_sources = n_sources
        self.n_iter = n_iter
        self.mask_mode = mask_mode
        self.drop_empty = drop_empty
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, directions=None, n_directions=None):
        check_positive_int(self.n_sources, "n_sources")
        check_positive_int(self.n_iter, "n_iter")
        obs = check_observation(X, directions, n_directions)
        if isinstance(obs, _ntf.SparseDirectionalObservation):
            sparse = obs
            dense = _ntf.densify(obs, drop_empty=self.drop_empty)
            self.n_directions_ = obs.n_directions
        else:
            sparse = None
            dense = obs
            self.n_directions_ = obs.p.shape[2]
        F, T, D = dense.p.shape
        model = _ntf.dnmf_init(F, T, D, self.n_sources, check_rng(self.random_state))
        history = []
        for _ in range(self.n_iter):
            model = _ntf.dnmf_update(dense, model)
            history.append(_nmf.kl_divergence(dense.p, model.marginal()))
            if _nmf._converged(history, self.tol):
                break
        self.model_ = model
        self.bins_ = dense.bins
        self.kl_history_ = history
        self.n_iter_ = len(history)
        if sparse is not None:
            self.mask_ = self.transform(sparse.p, sparse.d)
        else:
            self.mask_ = _ntf.posterior_mask(model, dense, self.mask_mode)
        return self

    def fit_transform(self, X, directions=None, n_directions=None):
        return self.fit(X, directions, n_directions).mask_

    def transform(self, X, directions=None):
        """Posterior mask of the fitted model for the given per-bin directions.

        The model's q(f,t|s) is tied to the fitted frames, so ``X`` must have
        the fitted (F, T) shape.  Bins whose direction was dropped at fit
        time fall back to the marginal posterior.
        """
        check_is_fitted(self, "model_")
        X = _spectrogram_array(X)
        if X.shape[:2] != self.model_.joint.shape[:2]:
            raise ValueError("DirectionalNMF can only transform data of the fitted shape")
        if X.ndim == 3:
            return _ntf.posterior_mask(self.model_, _ntf.DenseDirectionalObservation(X),
                                       self.mask_mode)
        d = np.asarray(getattr(directions, "d", directions))
        slot = np.full(self.n_directions_, -1)
        slot[self.bins_] = np.arange(len(self.bins_))
        mapped = slot[d]
        marginal = _ntf.posterior_mask(self.model_, None, "marginal")
        if self.mask_mode == "marginal":
            return marginal
        known = mapped >= 0
        cond = _ntf.posterior_mask(self.model_, np.where(known, mapped, 0), "conditioned")
        return np.where(known, cond, marginal)

    def source_directions(self):
        check_is_fitted(self, "model_")
        return _ntf.source_direction_summary(self.model_, self.n_directions_, self.bins_)


class SupervisedNMF(TransformerMixin, BaseEstimator):
    """Supervised NMF separation with per-source dictionaries.

    ``fit`` takes a list of clean training spectrograms, one per source;
    ``transform`` takes a mixture spectrogram and returns q(s|f,t).
    """

    def __init__(self, n_components=20, n_iter=200, tol=None, random_state=0):
        self.n_components = n_components
        self.n_iter = n_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        check_positive_int(self.n_components, "n_components")
        check_positive_int(self.n_iter, "n_iter")
        if len(X) < 1:
            raise ValueError("need at least one training spectrogram")
        rng = check_rng(self.random_state)
        dicts = [_nmf.nmf_fit_dictionary(_spectrogram_array(x), self.n_components,
                                         self.n_iter, rng) for x in X]
        self.dictionaries_ = _nmf._stack_dictionaries(dicts)
        return self

    def separate(self, X):
        """Return (SupervisedModel, mask, kl_history) for the mixture ``X``."""
        check_is_fitted(self, "dictionaries_")
        return _nmf.supervised_nmf_fit(_spectrogram_array(X), self.dictionaries_, self.n_iter,
                                       check_rng(self.random_state), tol=self.tol,
                                       return_history=True)

    def transform(self, X):
        return self.separate(X)[1]
