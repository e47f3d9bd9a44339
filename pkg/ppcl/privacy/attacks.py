"""
White-box membership inference against the models each scenario produces.

What an attacker can observe depends on the scenario:

* **CTFE** - every layer: output, loss, label, the gradient of the loss with respect to every layer's
  weights and the hidden activations of the feature extractor.
* **SFE** - output, loss, label, the classifier's weight gradient and the shared feature extractor's
  activations (the extractor was trained on public data, so its gradients carry nothing private).
* **LTFE** - output, loss, label and the classifier's weight gradient restricted to the columns that
  read the attacker's own embedding; the other party's extractor is out of reach.

Per-sample features are grouped by component (:class:`AttackFeatures`). The attack network gives every
component its own one-hidden-layer encoder (width 64, ReLU), concatenates the encodings and feeds a
``128 -> 64 -> 1`` head with a sigmoid output. It is trained with binary cross-entropy and Adam on
standardised ``float32`` features.

Example:

    .. code-block:: python

        from ppcl.privacy.attacks import run_privacy_experiment

        result = run_privacy_experiment('sfe', splits, seeds=(0, 1))
        result.auc_frame()

"""
from dataclasses import dataclass, field
import math
import numpy as np
import pandas as pd
from sklearn.metrics import roc_auc_score, roc_curve
from sklearn.preprocessing import StandardScaler

from ..learning.datasets import LabeledDataset, select_share_subset
from ..learning.tensor_nn import (PLAINTEXT, CompositeModel, Model, ModelConfig, TrainConfig, forward, init_weights,
                                  one_hot, train_epochs)
from ..utils.constants import ATTACK_DEFAULTS, Method

COMPONENTS = {
    Method.CTFE: ('output', 'loss', 'label', 'grad_classifier', 'act_fe1', 'act_fe2', 'act_fe3',
                  'grad_fe1', 'grad_fe2', 'grad_fe3'),
    Method.SFE: ('output', 'loss', 'label', 'grad_classifier', 'act_fe1', 'act_fe2', 'act_fe3'),
    Method.LTFE: ('output', 'loss', 'label', 'grad_classifier'),
}


@dataclass(frozen=True)
class AttackerAccess:
    """
    Components an attacker observes in one scenario.

    Attributes:
        method (Method): CTFE, SFE or LTFE.
        components (tuple[str]): Observable components, in feature order.
        attacker (int): Attacking party; for LTFE it selects the attacker's own embedding columns.
    """
    method: Method
    components: tuple
    attacker: int = 0

    @classmethod
    def for_method(cls, method, attacker: int = 0) -> 'AttackerAccess':
        method = Method(getattr(method, 'value', method))
        if method not in COMPONENTS:
            raise KeyError(f"No attacker access defined for method '{method.value}'.")
        return cls(method, COMPONENTS[method], attacker)


@dataclass(eq=False)
class AttackFeatures:
    """Per-sample observables, one ``n x width`` matrix per component."""
    components: dict
    access: AttackerAccess

    def layout(self) -> list[tuple[str, int]]:
        return [(name, self.components[name].shape[1]) for name in self.access.components]

    def flat(self) -> np.ndarray:
        return np.hstack([self.components[name] for name in self.access.components]).astype(np.float32)

    def __len__(self) -> int:
        return next(iter(self.components.values())).shape[0]


def _layer_terms(layers: list, X: np.ndarray, Y: np.ndarray):
    """Output, per-sample loss, layer inputs and per-sample output-side deltas of a plaintext stack."""
    model = Model(list(layers), fe_layers=0)
    out, cache = forward(model, X, PLAINTEXT)
    n_classes = out.shape[1]
    delta = (out - Y) * cache.masks[-1] * (2.0 / n_classes)
    deltas = [None] * len(layers)
    for idx in range(len(layers) - 1, -1, -1):
        deltas[idx] = delta
        if idx > 0:
            delta = PLAINTEXT.backprop(delta, layers[idx].W, cache.masks[idx - 1])
    return out, np.mean((out - Y) ** 2, axis=1), cache.inputs, deltas


def _per_sample_grad(delta: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    return np.einsum('ni,nj->nij', delta, inputs, dtype=np.float32, casting='same_kind').reshape(delta.shape[0], -1)


def build_features(target, X: np.ndarray, y: np.ndarray, access: AttackerAccess) -> AttackFeatures:
    """
    Observable components of ``target`` on labelled samples.

    Args:
        target (Model | CompositeModel): CTFE targets are full networks; SFE and LTFE targets are
            composites of extractors and a classifier.
        X (np.ndarray): Samples.
        y (np.ndarray): Integer labels.
        access (AttackerAccess): Observable components.

    Returns:
        AttackFeatures: Deterministic features, one row per sample.
    """
    X = np.asarray(X, dtype=np.float64)
    if isinstance(target, CompositeModel):
        activations = []
        embeddings = []
        for extractor in target.extractors:
            out, cache = forward(extractor, X, PLAINTEXT)
            embeddings.append(out)
            activations.append(cache.inputs[1:] + [out])
        classifier_layers = target.classifier.layers
        n_classes = target.classifier.layer_sizes[-1]
        Y = one_hot(y, n_classes)
        output, loss, inputs, deltas = _layer_terms(classifier_layers, np.hstack(embeddings), Y)
        fe_acts = activations[0]
        fe_grads = []
    else:
        n_classes = target.layer_sizes[-1]
        Y = one_hot(y, n_classes)
        output, loss, all_inputs, all_deltas = _layer_terms(target.layers, X, Y)
        fe = target.fe_layers
        fe_acts = all_inputs[1:fe + 1]
        fe_grads = [_per_sample_grad(all_deltas[i], all_inputs[i]) for i in range(fe)]
        inputs, deltas = all_inputs[fe:], all_deltas[fe:]

    grads_cls = []
    for idx, (delta, layer_input) in enumerate(zip(deltas, inputs)):
        if idx == 0 and access.method == Method.LTFE:
            width = layer_input.shape[1] // len(target.extractors)
            start = access.attacker * width
            layer_input = layer_input[:, start:start + width]
        grads_cls.append(_per_sample_grad(delta, layer_input))

    available = {'output': output.astype(np.float32),
                 'loss': loss[:, None].astype(np.float32),
                 'label': Y.astype(np.float32),
                 'grad_classifier': np.hstack(grads_cls)}
    for i, act in enumerate(fe_acts):
        available[f'act_fe{i + 1}'] = act.astype(np.float32)
    for i, grad in enumerate(fe_grads):
        available[f'grad_fe{i + 1}'] = grad
    missing = [name for name in access.components if name not in available]
    if missing:
        raise ValueError(f"Target does not expose components {missing} required by {access.method.value} access.")
    return AttackFeatures({name: available[name] for name in access.components}, access)


@dataclass
class AttackConfig:
    """Attack-network hyperparameters."""
    encoder_width: int = ATTACK_DEFAULTS['encoder_width']
    head_sizes: tuple = ATTACK_DEFAULTS['head_sizes']
    lr: float = ATTACK_DEFAULTS['lr']
    epochs: int = ATTACK_DEFAULTS['epochs']
    batch_size: int = ATTACK_DEFAULTS['batch_size']
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return {'encoder_width': self.encoder_width, 'head_sizes': list(self.head_sizes), 'lr': self.lr,
                'epochs': self.epochs, 'batch_size': self.batch_size}


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


class AttackModel:
    """
    Component-encoder membership classifier.

    Args:
        layout (list[tuple[str, int]]): Component names and widths, in feature order.
        config (AttackConfig): Hyperparameters.
        seed (int): Initialization and shuffling seed.
    """

    def __init__(self, layout: list, config: AttackConfig = None, seed: int = 0):
        self.layout = list(layout)
        self.config = config or AttackConfig()
        self.rng = np.random.default_rng(seed)
        self.scaler = StandardScaler()
        width = self.config.encoder_width
        self.params = []
        for _, dim in self.layout:
            self.params += [_glorot(self.rng, dim, width), np.zeros(width, dtype=np.float32)]
        sizes = [width * len(self.layout)] + list(self.config.head_sizes) + [1]
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.params += [_glorot(self.rng, fan_in, fan_out), np.zeros(fan_out, dtype=np.float32)]
        self._moments = [(np.zeros_like(p), np.zeros_like(p)) for p in self.params]
        self._step = 0
        self.history = []

    @property
    def _n_enc(self) -> int:
        return len(self.layout)

    def _slices(self):
        start = 0
        for _, dim in self.layout:
            yield slice(start, start + dim)
            start += dim

    def _forward(self, X: np.ndarray):
        encodings, enc_pre = [], []
        for idx, cols in enumerate(self._slices()):
            pre = X[:, cols] @ self.params[2 * idx] + self.params[2 * idx + 1]
            enc_pre.append(pre)
            encodings.append(np.maximum(pre, 0.0))
        h = np.hstack(encodings)
        head_inputs, head_pre = [], []
        n_head = (len(self.params) - 2 * self._n_enc) // 2
        for j in range(n_head):
            W, b = self.params[2 * (self._n_enc + j)], self.params[2 * (self._n_enc + j) + 1]
            head_inputs.append(h)
            pre = h @ W + b
            head_pre.append(pre)
            h = np.maximum(pre, 0.0) if j < n_head - 1 else pre
        prob = 1.0 / (1.0 + np.exp(-np.clip(h[:, 0], -30.0, 30.0)))
        return prob, (enc_pre, head_inputs, head_pre)

    def _gradients(self, X: np.ndarray, target: np.ndarray):
        prob, (enc_pre, head_inputs, head_pre) = self._forward(X)
        grads = [None] * len(self.params)
        delta = ((prob - target) / len(target))[:, None].astype(np.float32)
        n_head = len(head_inputs)
        for j in range(n_head - 1, -1, -1):
            k = 2 * (self._n_enc + j)
            grads[k] = head_inputs[j].T @ delta
            grads[k + 1] = delta.sum(axis=0)
            delta = (delta @ self.params[k].T)
            if j > 0:
                delta = delta * (head_pre[j - 1] > 0)
        width = self.config.encoder_width
        for idx, cols in enumerate(self._slices()):
            d_enc = delta[:, idx * width:(idx + 1) * width] * (enc_pre[idx] > 0)
            grads[2 * idx] = X[:, cols].T @ d_enc
            grads[2 * idx + 1] = d_enc.sum(axis=0)
        eps = 1e-7
        loss = -np.mean(target * np.log(prob + eps) + (1 - target) * np.log(1 - prob + eps))
        return grads, float(loss)

    def _adam(self, grads):
        cfg = self.config
        self._step += 1
        for i, grad in enumerate(grads):
            m, v = self._moments[i]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * grad
            v *= cfg.beta2
            v += (1 - cfg.beta2) * grad * grad
            m_hat = m / (1 - cfg.beta1 ** self._step)
            v_hat = v / (1 - cfg.beta2 ** self._step)
            self.params[i] -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(np.float32)

    def fit(self, X: np.ndarray, target: np.ndarray, verbose: bool = False) -> 'AttackModel':
        """Trains on features ``X`` with membership labels ``target`` (1 member, 0 non-member)."""
        X = self.scaler.fit_transform(np.asarray(X, dtype=np.float32)).astype(np.float32)
        target = np.asarray(target, dtype=np.float32)
        for epoch in range(self.config.epochs):
            order = self.rng.permutation(len(target))
            losses = []
            for start in range(0, len(order), self.config.batch_size):
                rows = order[start:start + self.config.batch_size]
                grads, loss = self._gradients(X[rows], target[rows])
                self._adam(grads)
                losses.append(loss * len(rows))
            self.history.append(sum(losses) / len(target))
            if verbose and (epoch + 1) % 10 == 0:
                print(f"(Info): Attack epoch {epoch + 1}/{self.config.epochs}, BCE {self.history[-1]:.4f}.")
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Membership probability per sample."""
        X = self.scaler.transform(np.asarray(X, dtype=np.float32)).astype(np.float32)
        return self._forward(X)[0]


def train_attack(members: AttackFeatures, nonmembers: AttackFeatures, seed: int = 0, config: AttackConfig = None,
                 verbose: bool = False) -> AttackModel:
    """
    Trains the attack network on class-balanced member and non-member features.

    The larger set is subsampled to the size of the smaller one.

    Raises:
        ValueError: If either set is empty or the layouts differ.
    """
    if len(members) == 0 or len(nonmembers) == 0:
        raise ValueError("Attack training needs at least one member and one non-member sample.")
    if members.layout() != nonmembers.layout():
        raise ValueError("Member and non-member features have different layouts.")
    rng = np.random.default_rng([seed, 0xA7])
    n = min(len(members), len(nonmembers))
    X_in = members.flat()[np.sort(rng.choice(len(members), n, replace=False))]
    X_out = nonmembers.flat()[np.sort(rng.choice(len(nonmembers), n, replace=False))]
    X = np.vstack([X_in, X_out])
    target = np.concatenate([np.ones(n), np.zeros(n)])
    return AttackModel(members.layout(), config, seed).fit(X, target, verbose)


@dataclass(eq=False)
class AttackReport:
    """
    Membership probabilities and their ROC, AUC and histograms.

    Attributes:
        member_scores, nonmember_scores (np.ndarray): Membership probabilities.
        fpr, tpr, thresholds (np.ndarray): ROC curve.
        auc (float): Area under the ROC curve.
        bin_edges (np.ndarray): Histogram edges on ``[0, 1]``.
        member_hist, nonmember_hist (np.ndarray): Histogram counts.
    """
    member_scores: np.ndarray
    nonmember_scores: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    bin_edges: np.ndarray
    member_hist: np.ndarray
    nonmember_hist: np.ndarray
    label: str = ''

    @classmethod
    def from_scores(cls, member_scores, nonmember_scores, bins: int = ATTACK_DEFAULTS['hist_bins'],
                    label: str = '') -> 'AttackReport':
        """
        Raises:
            ValueError: If either score set is empty.
        """
        member_scores = np.asarray(member_scores, dtype=np.float64)
        nonmember_scores = np.asarray(nonmember_scores, dtype=np.float64)
        if member_scores.size == 0 or nonmember_scores.size == 0:
            raise ValueError("Both member and non-member scores are needed.")
        truth = np.concatenate([np.ones(member_scores.size), np.zeros(nonmember_scores.size)])
        scores = np.concatenate([member_scores, nonmember_scores])
        fpr, tpr, thresholds = roc_curve(truth, scores)
        edges = np.linspace(0.0, 1.0, bins + 1)
        member_hist, _ = np.histogram(np.clip(member_scores, 0.0, 1.0), bins=edges)
        nonmember_hist, _ = np.histogram(np.clip(nonmember_scores, 0.0, 1.0), bins=edges)
        return cls(member_scores, nonmember_scores, fpr, tpr, np.minimum(thresholds, 1.0),
                   float(roc_auc_score(truth, scores)), edges, member_hist, nonmember_hist, label)

    def to_roc_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'label': self.label, 'threshold': self.thresholds, 'tpr': self.tpr, 'fpr': self.fpr})

    def to_hist_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'label': self.label, 'bin_low': self.bin_edges[:-1], 'bin_high': self.bin_edges[1:],
                             'member_count': self.member_hist, 'nonmember_count': self.nonmember_hist})


def auc_from_histograms(member_hist, nonmember_hist) -> float:
    """AUC of binned scores: pairs in the same bin count as ties (one half)."""
    member_hist = np.asarray(member_hist, dtype=np.float64)
    nonmember_hist = np.asarray(nonmember_hist, dtype=np.float64)
    below = np.concatenate([[0.0], np.cumsum(nonmember_hist)[:-1]])
    wins = np.sum(member_hist * (below + 0.5 * nonmember_hist))
    return float(wins / (member_hist.sum() * nonmember_hist.sum()))


def evaluate_attack(model: AttackModel, members: AttackFeatures, nonmembers: AttackFeatures,
                    label: str = '') -> AttackReport:
    """Scores held-out members and non-members."""
    return AttackReport.from_scores(model.predict_proba(members.flat()), model.predict_proba(nonmembers.flat()),
                                    label=label)


def train_target(method, global_split: LabeledDataset, members: LabeledDataset, model_config: ModelConfig,
                 train_config: TrainConfig, seed: int = 0):
    """
    Target of the attack experiment; the attacking party (index 0) owns no private data.

    * CTFE: the full network trained on the victim's member samples.
    * SFE: an extractor trained on the public partition, a classifier trained on member embeddings.
    * LTFE: the attacker's extractor trained on the public partition, the victim's extractor trained on
      the members, the attacker's classifier trained on both embeddings of the members.
    """
    method = Method(getattr(method, 'value', method))
    seeds = np.random.SeedSequence([seed, 0x7A]).generate_state(4)

    def _train(config, X, Y, tag):
        model = init_weights(config, int(seeds[tag]))
        train_epochs(model, X, Y, train_config, PLAINTEXT, np.random.default_rng([seed, tag]))
        return model

    Y = members.onehot()
    if method == Method.CTFE:
        return _train(model_config, members.X, Y, 0)
    public = _train(model_config, global_split.X, global_split.onehot(), 1).feature_extractor()
    if method == Method.SFE:
        classifier = _train(model_config.classifier_config(), public.predict_proba(members.X), Y, 2)
        return CompositeModel([public], classifier)
    if method == Method.LTFE:
        victim = _train(model_config, members.X, Y, 3).feature_extractor()
        composite = CompositeModel([public, victim], None)
        classifier = _train(model_config.classifier_config(2 * model_config.q), composite.embed(members.X), Y, 2)
        return CompositeModel([public, victim], classifier)
    raise KeyError(f"No privacy experiment for method '{method.value}'.")


@dataclass(eq=False)
class PrivacyResult:
    """Attack reports of one method, per seed."""
    method: Method
    reports: dict = field(default_factory=dict)

    @property
    def mean_auc(self) -> float:
        return float(np.mean([r.auc for r in self.reports.values()]))

    def auc_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{'method': self.method.value, 'seed': seed, 'auc': report.auc}
                             for seed, report in self.reports.items()])


def run_privacy_experiment(method, splits: dict[str, LabeledDataset], seeds=(0,), target_epochs: int = None,
                           model_config: ModelConfig = None, train_config: TrainConfig = None,
                           attack_config: AttackConfig = None, max_per_class: int = 250,
                           verbose: bool = False) -> PrivacyResult:
    """
    Membership inference against one scenario's target, repeated per seed.

    Half of ``party2`` (stratified) are members the target is trained on; the other half are
    non-members. Each set is split in two: one half trains the attack network, the other evaluates it.

    Args:
        method (Method | str): CTFE, SFE or LTFE.
        splits (dict): Partitions with ``global`` and ``party2``.
        seeds (Sequence[int]): One full experiment per seed.
        target_epochs (int, optional): Overrides the target's training epochs (0 gives an untrained target).
        model_config (ModelConfig, optional): Target shape. Defaults to the input width of the data.
        train_config (TrainConfig, optional): Target hyperparameters.
        attack_config (AttackConfig, optional): Attack-network hyperparameters.
        max_per_class (int): Caps members and non-members per seed.
        verbose (bool): Print progress.

    Returns:
        PrivacyResult: Per-seed reports.
    """
    method = Method(getattr(method, 'value', method))
    access = AttackerAccess.for_method(method)
    victim_data = splits['party2']
    model_config = model_config or ModelConfig((victim_data.n_features, 64, 64, 64, victim_data.n_classes))
    train_config = train_config or TrainConfig()
    if target_epochs is not None:
        train_config = TrainConfig(train_config.lr, train_config.l2, target_epochs, train_config.batch_size,
                                   train_config.seed)
    result = PrivacyResult(method)
    for seed in seeds:
        members = select_share_subset(victim_data, 0.5, int(seed))
        outside = np.flatnonzero(~np.isin(victim_data.indices, members.indices))
        nonmembers = victim_data.subset(outside, 'nonmembers')
        target = train_target(method, splits['global'], members, model_config, train_config, int(seed))

        rng = np.random.default_rng([int(seed), 0xF0])
        n = min(len(members), len(nonmembers), max_per_class)
        member_rows = rng.permutation(len(members))[:n]
        nonmember_rows = rng.permutation(len(nonmembers))[:n]
        half = n // 2
        feats = {}
        for tag, data, rows in (('in', members, member_rows), ('out', nonmembers, nonmember_rows)):
            feats[tag + '_train'] = build_features(target, data.X[rows[:half]], data.y[rows[:half]], access)
            feats[tag + '_eval'] = build_features(target, data.X[rows[half:]], data.y[rows[half:]], access)
        attack = train_attack(feats['in_train'], feats['out_train'], int(seed), attack_config, verbose)
        result.reports[int(seed)] = evaluate_attack(attack, feats['in_eval'], feats['out_eval'],
                                                    label=f"{method.value}_seed{seed}")
        if verbose:
            print(f"(Info): {method.value} attack seed {seed}: AUC {result.reports[int(seed)].auc:.3f}.")
    return result
