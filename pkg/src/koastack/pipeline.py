from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import persist
from .imaging import GrayImage, PreprocessConfig, Preprocessor


@persist.register
class GradingPipeline(ClassifierMixin, BaseEstimator):
    """Raw radiographs in, class probabilities out.

    Wraps a fitted classifier over preprocessed tensors (a CNN or a stacked
    ensemble) together with the evaluation-time preprocessing settings.
    """

    def __init__(self, preprocess=None, model=None):
        self.preprocess = preprocess
        self.model = model

    @classmethod
    def from_fitted(cls, preprocess: dict, model) -> "GradingPipeline":
        est = cls(preprocess, model)
        est.model_ = model
        est.classes_ = model.classes_
        return est

    def _preprocessor(self):
        cfg = PreprocessConfig.from_dict({**(self.preprocess or {}), "augmentation": False})
        return Preprocessor(cfg)

    def fit(self, X, y):
        self.model_ = self.model.fit(self._preprocessor().transform(X), y)
        self.classes_ = self.model_.classes_
        return self

    def transform(self, X):
        return self._preprocessor().transform(
            [x if isinstance(x, GrayImage) else GrayImage(np.asarray(x)) for x in X]
        )

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(self.transform(X))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def _persisted_params(self):
        return {"preprocess": self.preprocess, "model": None}

    def _get_state(self):
        return {"model": persist.to_doc(self.model_)}

    def _set_state(self, s):
        self.model_ = persist.from_doc(s["model"])
        self.classes_ = self.model_.classes_
