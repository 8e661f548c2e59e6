"""KPI predictors behind one estimator contract.

Four models map a feature row (context measurements followed by a one-hot
state indicator) to a predicted KPI:

* ``NN``   multilayer perceptron trained by mini-batch SGD on squared error
* ``LR``   ordinary least squares with intercept
* ``COL``  carries the currently observed KPI of the probed state forward
* ``RAND`` selection only: picks a candidate uniformly at random

All four follow the scikit-learn estimator API (``fit``, ``predict``,
``get_params``) so they can be cloned, cross-validated and pipelined.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_targets, one_hot
from .channel import NO_OFFLOAD

MODEL_FORMAT = "hetnet-kpi-model"
MODEL_VERSION = 1


# --------------------------------------------------------------------------
# contexts, samples and datasets


@dataclass(frozen=True)
class SimContext:
    """Simulation-mode context for one period.

    ``state_features[k]`` holds the per-station measurements as they read in
    state ``k`` (offered Wi-Fi load, zero for the station on LiFi, and link
    rate); ``kpi_by_state`` the collision KPI observed in this period for
    every state. States are ordered no-offload first.
    """

    state_features: tuple
    kpi_by_state: tuple

    def __post_init__(self):
        feats = tuple(np.asarray(f, dtype=float) for f in self.state_features)
        if len(feats) != len(self.kpi_by_state):
            raise ValueError("need one feature vector per state")
        if len({f.shape for f in feats}) > 1:
            raise ValueError("state feature vectors differ in length")
        object.__setattr__(self, "state_features", feats)

    @property
    def n_states(self) -> int:
        return len(self.kpi_by_state)

    @property
    def observed_kpi_index(self) -> int:
        return len(self.state_features[0])

    def features(self, state: int) -> np.ndarray:
        return np.append(self.state_features[state], self.kpi_by_state[state])

    def observed_kpi(self, state: int) -> float:
        return float(self.kpi_by_state[state])


@dataclass(frozen=True)
class Sample:
    context: object
    state: int
    target_kpi: float

    def __post_init__(self):
        if not np.isfinite(self.target_kpi):
            raise ValueError("target_kpi must be finite")
        one_hot(self.state, self.context.n_states)


@dataclass(frozen=True)
class TestCase:
    """One offload decision: present context plus the realised next-period KPIs."""

    context: SimContext
    outcome: dict  # state index -> realised KPI in the next period
    candidates: tuple  # state indices eligible for offload
    run: int = 0
    period: int = 0


def design_row(context, state: int) -> np.ndarray:
    return np.concatenate([context.features(state), one_hot(state, context.n_states)])


def design_matrix(samples):
    X = np.vstack([design_row(s.context, s.state) for s in samples])
    y = np.array([s.target_kpi for s in samples], dtype=float)
    return X, y


def sim_context(sweep: dict, candidates) -> SimContext:
    """Context of one period from its scenario sweep."""
    present = sweep[NO_OFFLOAD].per_sta
    stations = sorted(present)
    states = [NO_OFFLOAD, *candidates]
    feats = []
    for s in states:
        row = []
        for sta in stations:
            m = present[sta]
            row += [0.0 if sta == s else np.log1p(m.served_up + m.served_down), np.log(m.link_rate)]
        feats.append(np.array(row))
    return SimContext(tuple(feats), tuple(float(sweep[s].collision_kpi) for s in states))


def build_dataset(campaign, train_periods: int = 8, test_periods: int = 2):
    """Turn scenario sweeps into training samples and held-out decisions.

    ``campaign`` is a sequence of runs; each run is a dict with keys
    ``candidates`` (station ids) and ``sweeps`` (one scenario-sweep dict per
    period). A run needs ``train_periods + test_periods + 1`` periods: the
    extra period supplies the realised outcome of the last test decision.
    """
    train, test = [], []
    need = train_periods + test_periods + 1
    for r, run in enumerate(campaign):
        cands = list(run["candidates"])
        sweeps = run["sweeps"]
        if len(sweeps) < need:
            raise ValueError(f"run {r}: need {need} periods, got {len(sweeps)}")
        states = [NO_OFFLOAD, *cands]
        for t, sw in enumerate(sweeps[:need]):
            missing = [s for s in states if s not in sw]
            if missing:
                raise ValueError(f"incomplete sweep: run {r} period {t} lacks {missing}")
        contexts = [sim_context(sw, cands) for sw in sweeps[:need]]
        for t in range(train_periods):
            nxt = sweeps[t + 1]
            for i, s in enumerate(states):
                train.append(Sample(contexts[t], i, float(nxt[s].collision_kpi)))
        for t in range(train_periods, train_periods + test_periods):
            nxt = sweeps[t + 1]
            outcome = {i: float(nxt[s].collision_kpi) for i, s in enumerate(states)}
            test.append(TestCase(contexts[t], outcome, tuple(range(1, len(states))), r, t))
    return train, test


# --------------------------------------------------------------------------
# estimators


def _standardize_fit(A):
    mean = A.mean(axis=0)
    scale = A.std(axis=0)
    # a constant column has a rounding-level std; do not divide by it
    degenerate = scale <= 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(degenerate, 1.0, scale)
    return mean, scale


class NeuralKpiRegressor(RegressorMixin, BaseEstimator):
    """ReLU multilayer perceptron with a linear scalar output.

    Inputs and targets are standardised with training-set statistics. The
    loss is the mean squared error plus an optional L2 penalty
    ``weight_decay * ||W||^2 / 2`` on the weight matrices (biases are not
    penalised); parameters are updated by plain mini-batch SGD with a fixed
    learning rate. Everything random derives from
    ``random_state``, so equal data and seed give identical weights.
    """

    KIND = "NN"

    def __init__(self, hidden=(64, 64), learning_rate=1e-2, epochs=500,
                 batch_size=32, weight_decay=0.02, random_state=0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.random_state = random_state

    # network primitives work on already-standardised arrays
    def _init_params(self, n_in, rng):
        sizes = [n_in, *self.hidden, 1]
        params = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            W = rng.standard_normal((a, b)) * np.sqrt(2.0 / a)
            params.append([W, np.zeros(b)])
        return params

    @staticmethod
    def _forward(params, X):
        acts = [X]
        h = X
        for W, b in params[:-1]:
            h = np.maximum(h @ W + b, 0.0)
            acts.append(h)
        W, b = params[-1]
        return (h @ W + b).ravel(), acts

    @staticmethod
    def _loss_and_grads(params, X, y):
        out, acts = NeuralKpiRegressor._forward(params, X)
        n = len(y)
        err = out - y
        loss = float(np.mean(err**2))
        delta = (2.0 / n) * err[:, None]
        grads = [None] * len(params)
        for layer in range(len(params) - 1, -1, -1):
            W, _ = params[layer]
            grads[layer] = [acts[layer].T @ delta, delta.sum(axis=0)]
            if layer:
                delta = (delta @ W.T) * (acts[layer] > 0)
        return loss, grads

    def _sgd(self, Xs, ys, batches):
        lr, wd = self.learning_rate, float(self.weight_decay)
        for idx in batches:
            _, grads = self._loss_and_grads(self.params_, Xs[idx], ys[idx])
            for (W, b), (gW, gb) in zip(self.params_, grads):
                W -= lr * (gW + wd * W)
                b -= lr * gb

    def fit(self, X, y):
        if any(int(w) < 1 for w in self.hidden):
            raise ValueError("hidden layer widths must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        X = check_features(X)
        y = check_targets(y, len(X))
        rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = X.shape[1]
        self.x_mean_, self.x_scale_ = _standardize_fit(X)
        self.y_mean_, self.y_scale_ = _standardize_fit(y[:, None])
        self.y_mean_, self.y_scale_ = float(self.y_mean_[0]), float(self.y_scale_[0])
        self.params_ = self._init_params(X.shape[1], rng)
        Xs, ys = self._scale(X, y)
        n, bs = len(X), max(1, int(self.batch_size))
        for _ in range(int(self.epochs)):
            perm = rng.permutation(n)
            self._sgd(Xs, ys, [perm[i:i + bs] for i in range(0, n, bs)])
        self.n_updates_ = 0
        return self

    def update(self, X, y, n_recent, n_steps):
        """Continue training on a growing history.

        Each of ``n_steps`` mini-batches holds the ``n_recent`` newest rows of
        ``X`` plus rows replayed uniformly from the older history. Scaling
        constants stay frozen at their ``fit`` values.
        """
        check_is_fitted(self, "params_")
        X = check_features(X, self.n_features_in_)
        y = check_targets(y, len(X))
        rng = np.random.default_rng([int(self.random_state), 1, self.n_updates_])
        Xs, ys = self._scale(X, y)
        n = len(X)
        n_recent = min(int(n_recent), n)
        recent = np.arange(n - n_recent, n)
        n_replay = max(0, int(self.batch_size) - n_recent)
        batches = []
        for _ in range(int(n_steps)):
            replay = rng.integers(0, max(1, n - n_recent), n_replay) if n > n_recent else []
            batches.append(np.concatenate([recent, replay]).astype(int))
        self._sgd(Xs, ys, batches)
        self.n_updates_ += 1
        return self

    def _scale(self, X, y=None):
        Xs = (X - self.x_mean_) / self.x_scale_
        if y is None:
            return Xs
        return Xs, (y - self.y_mean_) / self.y_scale_

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_features(X, self.n_features_in_)
        out, _ = self._forward(self.params_, self._scale(X))
        return out * self.y_scale_ + self.y_mean_

    def _state(self):
        return {
            "x_mean": self.x_mean_.tolist(), "x_scale": self.x_scale_.tolist(),
            "y_mean": self.y_mean_, "y_scale": self.y_scale_,
            "layers": [[W.tolist(), b.tolist()] for W, b in self.params_],
            "n_updates": self.n_updates_,
        }

    def _set_state(self, state):
        self.x_mean_ = np.array(state["x_mean"])
        self.x_scale_ = np.array(state["x_scale"])
        self.y_mean_, self.y_scale_ = state["y_mean"], state["y_scale"]
        self.params_ = [[np.array(W, dtype=float).reshape(len(W), -1), np.array(b, dtype=float)]
                        for W, b in state["layers"]]
        self.n_features_in_ = len(self.x_mean_)
        self.n_updates_ = state.get("n_updates", 0)


class LinearKpiRegressor(RegressorMixin, BaseEstimator):
    """Least squares with intercept on standardised features.

    Solved with the pseudo-inverse, so rank-deficient designs (e.g. a one-hot
    block next to an intercept) get the minimum-norm solution.
    """

    KIND = "LR"

    def fit(self, X, y):
        X = check_features(X)
        y = check_targets(y, len(X))
        self.n_features_in_ = X.shape[1]
        self.x_mean_, self.x_scale_ = _standardize_fit(X)
        A = np.hstack([np.ones((len(X), 1)), (X - self.x_mean_) / self.x_scale_])
        beta = np.linalg.pinv(A) @ y
        self.intercept_ = float(beta[0])
        self.coef_ = beta[1:]
        return self

    def update(self, X, y, n_recent=None, n_steps=None):
        return self.fit(X, y)

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_features(X, self.n_features_in_)
        return self.intercept_ + ((X - self.x_mean_) / self.x_scale_) @ self.coef_

    def _state(self):
        return {"x_mean": self.x_mean_.tolist(), "x_scale": self.x_scale_.tolist(),
                "intercept": self.intercept_, "coef": self.coef_.tolist()}

    def _set_state(self, state):
        self.x_mean_ = np.array(state["x_mean"])
        self.x_scale_ = np.array(state["x_scale"])
        self.intercept_ = state["intercept"]
        self.coef_ = np.array(state["coef"])
        self.n_features_in_ = len(self.coef_)


class CurrentKpiPredictor(RegressorMixin, BaseEstimator):
    """Predicts that the next KPI equals the one observed now for that state."""

    KIND = "COL"

    def __init__(self, kpi_index=None):
        self.kpi_index = kpi_index

    def fit(self, X=None, y=None):
        if self.kpi_index is None:
            raise ValueError("COL needs contexts that carry per-state KPI observations")
        if X is not None:
            self.n_features_in_ = check_features(X).shape[1]
        return self

    def update(self, X, y, n_recent=None, n_steps=None):
        return self

    def predict(self, X):
        if self.kpi_index is None:
            raise ValueError("COL needs contexts that carry per-state KPI observations")
        X = check_features(X, getattr(self, "n_features_in_", None))
        return X[:, self.kpi_index].copy()

    def _state(self):
        return {"n_features_in": getattr(self, "n_features_in_", None)}

    def _set_state(self, state):
        if state.get("n_features_in") is not None:
            self.n_features_in_ = state["n_features_in"]


class RandomSelector(BaseEstimator):
    """Baseline that never predicts a KPI; it only draws a candidate."""

    KIND = "RAND"

    def __init__(self, random_state=0):
        self.random_state = random_state

    def fit(self, X=None, y=None):
        return self

    def update(self, X, y, n_recent=None, n_steps=None):
        return self

    def predict(self, X):
        raise TypeError("selection-only model: RAND does not predict KPIs")

    def choose(self, candidates, rng):
        return candidates[int(rng.integers(len(candidates)))]

    def _state(self):
        return {}

    def _set_state(self, state):
        pass


ESTIMATORS = {cls.KIND: cls for cls in
              (NeuralKpiRegressor, LinearKpiRegressor, CurrentKpiPredictor, RandomSelector)}


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "NN"
    nn_hidden: tuple = (64, 64)
    nn_lr: float = 1e-2
    nn_epochs: int = 500
    nn_batch: int = 32
    nn_weight_decay: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ESTIMATORS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {sorted(ESTIMATORS)}")
        object.__setattr__(self, "nn_hidden", tuple(int(w) for w in self.nn_hidden))
        if any(w < 1 for w in self.nn_hidden):
            raise ValueError("nn_hidden widths must be >= 1")
        if self.nn_lr <= 0:
            raise ValueError("nn_lr must be positive")
        if self.nn_weight_decay < 0:
            raise ValueError("nn_weight_decay must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["nn_hidden"] = list(self.nn_hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown model spec key(s): {sorted(unknown)}")
        return cls(**d)


def make_estimator(spec: ModelSpec, kpi_index=None):
    if spec.kind == "NN":
        return NeuralKpiRegressor(hidden=spec.nn_hidden, learning_rate=spec.nn_lr,
                                  epochs=spec.nn_epochs, batch_size=spec.nn_batch,
                                  weight_decay=spec.nn_weight_decay,
                                  random_state=spec.seed)
    if spec.kind == "LR":
        return LinearKpiRegressor()
    if spec.kind == "COL":
        return CurrentKpiPredictor(kpi_index=kpi_index)
    return RandomSelector(random_state=spec.seed)


def train(spec: ModelSpec, samples):
    """Fit the model described by ``spec`` on a sequence of :class:`Sample`."""
    samples = list(samples)
    if spec.kind in ("COL", "RAND"):
        kpi_index = None
        if samples:
            kpi_index = getattr(samples[0].context, "observed_kpi_index", None)
        model = make_estimator(spec, kpi_index)
        if spec.kind == "COL":
            return model.fit(design_matrix(samples)[0] if samples else None)
        return model.fit()
    if not samples:
        raise ValueError(f"{spec.kind} needs a non-empty training set")
    X, y = design_matrix(samples)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite features or targets")
    return make_estimator(spec).fit(X, y)


# --------------------------------------------------------------------------
# prediction and selection


def predict_kpi(model, context, state: int) -> float:
    if isinstance(model, RandomSelector):
        raise TypeError("selection-only model: RAND does not predict KPIs")
    if isinstance(model, CurrentKpiPredictor) and hasattr(context, "observed_kpi"):
        one_hot(state, context.n_states)
        return context.observed_kpi(state)
    return float(model.predict(design_row(context, state)[None, :])[0])


def predict_many(model, context, states) -> np.ndarray:
    X = np.vstack([design_row(context, s) for s in states])
    return np.asarray(model.predict(X), dtype=float)


def select_offload(model, context, candidates, objective="minimize", seed=None):
    """Best candidate by predicted KPI; ties go to the earliest candidate.

    RAND ignores the context and draws uniformly. ``seed`` may be an int or a
    ``numpy.random.Generator``.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidates to choose from")
    if isinstance(model, RandomSelector):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return model.choose(candidates, rng)
    preds = predict_many(model, context, candidates)
    if objective == "minimize":
        return candidates[int(np.argmin(preds))]
    if objective == "maximize":
        return candidates[int(np.argmax(preds))]
    raise ValueError("objective must be 'minimize' or 'maximize'")


# --------------------------------------------------------------------------
# gradient check


def gradient_check(spec: ModelSpec, sample_batch, step: float = 1e-5, params=None,
                   return_details: bool = False):
    """Max relative error between backprop and central finite differences.

    ``sample_batch`` is either a sequence of :class:`Sample` or an ``(X, y)``
    pair; it is fed to the network as is (no standardisation). The network
    is freshly initialised from ``spec.seed`` unless ``params`` is given.

    A coordinate whose +-step perturbation flips some ReLU on or off
    straddles a kink, where the loss has no derivative for the difference
    quotient to estimate; such coordinates are skipped. With
    ``return_details`` the result is ``(max_error, n_checked, n_skipped)``.
    """
    if isinstance(sample_batch, tuple):
        X, y = (np.asarray(a, dtype=float) for a in sample_batch)
    else:
        X, y = design_matrix(sample_batch)
    net = make_estimator(spec)
    if params is None:
        params = net._init_params(X.shape[1], np.random.default_rng(spec.seed))
    _, grads = NeuralKpiRegressor._loss_and_grads(params, X, y)
    worst, checked, skipped = 0.0, 0, 0
    for (W, b), (gW, gb) in zip(params, grads):
        for arr, g in ((W, gW), (b, gb)):
            flat, gflat = arr.reshape(-1), g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                lp, ap = NeuralKpiRegressor._forward(params, X)
                flat[i] = orig - step
                lm, am = NeuralKpiRegressor._forward(params, X)
                flat[i] = orig
                if any(np.any((a > 0) != (b_ > 0)) for a, b_ in zip(ap[1:], am[1:])):
                    skipped += 1
                    continue
                num = (np.mean((lp - y) ** 2) - np.mean((lm - y) ** 2)) / (2 * step)
                denom = max(abs(num) + abs(gflat[i]), 1e-8)
                worst = max(worst, abs(num - gflat[i]) / denom)
                checked += 1
    if return_details:
        return worst, checked, skipped
    return worst


# --------------------------------------------------------------------------
# persistence


def model_to_dict(model, spec: ModelSpec | None = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.KIND,
        "params": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in model.get_params().items()},
        "spec": spec.to_dict() if spec else None,
        "state": model._state() if model.KIND in ("COL", "RAND") or _fitted(model) else None,
    }


def _fitted(model):
    try:
        check_is_fitted(model)
        return True
    except Exception:
        return False


def model_from_dict(doc: dict):
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a hetnet model document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model document version {doc.get('version')}")
    cls = ESTIMATORS[doc["kind"]]
    params = dict(doc["params"])
    if "hidden" in params:
        params["hidden"] = tuple(params["hidden"])
    model = cls(**params)
    if doc.get("state") is not None:
        model._set_state(doc["state"])
    return model


def save_model(model, path, spec: ModelSpec | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, spec), indent=1))


def load_model(path):
    return model_from_dict(json.loads(Path(path).read_text()))
