"""Scikit-learn facade over the training engine.

``DeepSomClassifier`` wraps the whole protocol (competitive phase, label
assignment, supervised passes) behind ``fit``/``predict``/``transform`` so
small problems can ride sklearn pipelines and model selection.  One
divergence from the protocol classifier: test samples whose winner carries
no label are assigned by the best response among labeled neurons instead
of an unassigned marker, because ``predict`` must label every row.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .aplearn import ApParams, assign_labels, learning_trial, warm_cache
from .dataio import Dataset, take_block
from .errors import ConfigurationError
from .pretrain import PretrainSchedule, pretrain
from .somcore import KernelParams, kernel_table
from .topology import DeepSomNetwork, LayerSpec


class DeepSomClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Competitive map network trained with supervised advance passes.

    With ``specs=None`` the network is a single ``som_rows``x``som_cols``
    module reading the whole image; pass explicit ``LayerSpec`` tuples for
    deep geometries.  ``X`` rows are flattened images; ``image_shape``
    defaults to the square root of the feature count.
    """

    def __init__(
        self,
        specs=None,
        som_rows=10,
        som_cols=10,
        image_shape=None,
        pad=0,
        seed=0,
        pretrain_iterations=2000,
        ap_passes=5,
        rho_base=0.2,
        beta=0.4,
        r=0.7,
        sigma_out=0.8,
        sigma_update=0.4,
    ):
        self.specs = specs
        self.som_rows = som_rows
        self.som_cols = som_cols
        self.image_shape = image_shape
        self.pad = pad
        self.seed = seed
        self.pretrain_iterations = pretrain_iterations
        self.ap_passes = ap_passes
        self.rho_base = rho_base
        self.beta = beta
        self.r = r
        self.sigma_out = sigma_out
        self.sigma_update = sigma_update

    def _resolved_image_shape(self, n_features: int) -> tuple:
        if self.image_shape is not None:
            shape = tuple(int(s) for s in self.image_shape)
            if len(shape) != 2 or shape[0] * shape[1] != n_features:
                raise ConfigurationError(
                    f"image_shape {self.image_shape} does not hold {n_features} features"
                )
            return shape
        side = math.isqrt(n_features)
        if side * side != n_features:
            raise ConfigurationError(
                f"{n_features} features are not a square image; pass image_shape"
            )
        return (side, side)

    def _resolved_specs(self, shape: tuple) -> tuple:
        if self.specs is not None:
            return tuple(self.specs)
        h, w = shape
        if h != w:
            raise ConfigurationError(
                f"the default single-module network needs square images, got "
                f"{h}x{w}; pass explicit specs"
            )
        side = h + 2 * self.pad
        return (
            LayerSpec(
                1,
                1,
                rf=side,
                stride=1,
                input_dim=side * side,
                som_rows=self.som_rows,
                som_cols=self.som_cols,
            ),
        )

    def _kernels(self) -> KernelParams:
        return KernelParams(sigma_out=self.sigma_out, sigma_update=self.sigma_update)

    def _ap_params(self) -> ApParams:
        return ApParams(
            rho_base=self.rho_base,
            beta=self.beta,
            r=self.r,
            sigma_update=self.sigma_update,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        class_index = np.searchsorted(self.classes_, y)
        shape = self._resolved_image_shape(X.shape[1])
        network = DeepSomNetwork.build(
            self._resolved_specs(shape), seed=self.seed, image_shape=shape, pad=self.pad
        )
        capacity = network.last_spec.som_neurons
        if len(self.classes_) > capacity:
            raise ConfigurationError(
                f"{len(self.classes_)} classes exceed the {capacity}-neuron output map"
            )
        kernels = self._kernels()
        images = np.ascontiguousarray(X, dtype=np.float64).reshape(-1, *shape)
        data = Dataset(images, class_index.astype(np.int64))

        if self.pretrain_iterations > 0:
            schedule = (
                PretrainSchedule(
                    total_iterations=self.pretrain_iterations, layer_starts=(0,)
                )
                if network.n_layers == 1
                else PretrainSchedule.staggered(network.n_layers, self.pretrain_iterations)
            )
            stream = take_block(data, len(data), self.seed, 0)
            pretrain(network, stream, schedule, kernels)

        label_map = assign_labels(network, data, kernels, len(self.classes_))
        cache = warm_cache(network, data, label_map, kernels)
        params = self._ap_params()
        for block in range(1, self.ap_passes + 1):
            stream = take_block(data, len(data), self.seed, block)
            for _ in range(len(data)):
                image, label, idx = stream.next_sample()
                learning_trial(
                    network, image, label, cache, label_map, params, kernels, idx
                )

        self.network_ = network
        self.label_map_ = label_map
        self.n_features_in_ = X.shape[1]
        self.image_shape_ = shape
        return self

    def _forward_all(self, X) -> tuple:
        check_is_fitted(self, "network_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ConfigurationError(
                f"X has {X.shape[1]} features, fit saw {self.n_features_in_}"
            )
        images = np.ascontiguousarray(X, dtype=np.float64).reshape(-1, *self.image_shape_)
        return self.network_.forward_batch(images, self._kernels())

    def predict(self, X):
        winners, responses = self._forward_all(X)
        index = self.label_map_.neuron_to_class[winners[:, 0]]
        orphans = index < 0
        if orphans.any():
            labeled = np.asarray(self.label_map_.class_to_neuron)
            best = np.argmax(responses[orphans][:, 0, labeled], axis=1)
            index[orphans] = best
        return self.classes_[index]

    def transform(self, X):
        """Last-layer output values (the winners-share-all profile)."""
        winners, _ = self._forward_all(X)
        spec = self.network_.last_spec
        table = kernel_table(spec.som_rows, spec.som_cols, self.sigma_out)
        return table[winners[:, 0]].copy()
