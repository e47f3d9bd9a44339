"""
Orchestration of the four collaborative training scenarios between two parties and the dealer.

* **NC** (no cooperation): each party trains its own network on its own data.
* **CTFE** (collaborative training of the feature extractor): each party trains the full network on its
  own data, then continues training it on the subset the other party shares.
* **SFE** (shared feature extractor): a network trained on the public ``global`` partition provides a
  frozen feature extractor; each party trains only a classifier on the embeddings of its own data and
  of the other party's shared subset.
* **LTFE** (locally trained feature extractors): each party trains its own extractor on its own data;
  every classifier input is the concatenation of both parties' embeddings of the sample, ordered by
  party index.

Phases on a party's own data run in plaintext. Phases touching the other party's data run under
secure computation when ``ScenarioConfig.secure`` is set; otherwise the same math runs in plaintext,
so a non-secure run is the plaintext program the secure run approximates. Secure phases share one
:class:`ppcl.mpc.session.MPCSession` per scenario; its randomness is planned with
:func:`ppcl.mpc.dealer.plan_budget` and generated before any data share exists.

Traffic and time are booked per stage, e.g. ``party1/local_train``, ``party1/secure_train``,
``party2/feature_extractor``, ``party2/classifier_secure``.

Example:

    .. code-block:: python

        from ppcl.learning.datasets import prepare_splits
        from ppcl.learning.protocols import ScenarioConfig, run_scenario

        splits = prepare_splits('synthetic', seed=0, scale=0.05)
        result = run_scenario(ScenarioConfig(method='ltfe'), splits)
        metrics, traffic, timing = result.to_frames()

"""
from contextlib import contextmanager, nullcontext
from dataclasses import dataclass, field
import time
import warnings
import numpy as np
import pandas as pd

from .datasets import LabeledDataset, select_share_subset, starved_labels
from .tensor_nn import (PLAINTEXT, CompositeModel, Model, ModelConfig, SecureBackend, TrainConfig, evaluate, forward,
                        forward_batched, init_weights, mixed_batch_sizes, reveal_model, share_model, stack_features,
                        train_epochs, train_epochs_mixed)
from ..mpc.dealer import RandomnessBudget, epoch_batch_sizes, plan_budget, plan_forward
from ..mpc.ring_fixed import FixedPointCodec
from ..mpc.session import MPCSession
from ..mpc.shares import concat_shared
from ..mpc.transport import TrafficStats
from ..utils.constants import SWEEP_FRACTIONS, TRAINING_DEFAULTS, Method

PARTY_NAMES = ('party1', 'party2')


@dataclass
class ScenarioConfig:
    """
    One training scenario.

    Attributes:
        method (Method): NC, CTFE, SFE or LTFE.
        share_fraction (float): Fraction of its data each party shares (ignored by NC).
        secure (bool): Run phases on the other party's data under secure computation.
        mixed (bool): Train own and shared samples jointly with equal risk weights instead of
            sequentially.
        randomness_mode (str): ``'offline'`` or ``'on_demand'`` dealer.
        transport (str): ``'inprocess'`` or ``'tcp'``.
        train (TrainConfig): SGD hyperparameters (applied to every phase).
        model (ModelConfig): Network shape.
        codec (FixedPointCodec): Fixed-point codec of the secure phases.
        seed (int): Scenario seed.
        party_seeds (tuple[int], optional): Per-party seeds; derived from ``seed`` when absent.
        record_transcripts (bool): Keep every received frame for auditing.
        verbose (bool): Print progress.
    """
    method: Method = Method.LTFE
    share_fraction: float = TRAINING_DEFAULTS['share_fraction']
    secure: bool = False
    mixed: bool = False
    randomness_mode: str = 'offline'
    transport: str = 'inprocess'
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)
    seed: int = 0
    party_seeds: tuple = None
    record_transcripts: bool = False
    verbose: bool = False

    def __post_init__(self):
        self.method = Method(getattr(self.method, 'value', self.method))
        if not 0.0 <= self.share_fraction <= 1.0:
            raise ValueError(f"share_fraction must be in [0, 1], got {self.share_fraction}.")

    def party_seed(self, party: int) -> int:
        if self.party_seeds is not None:
            return int(self.party_seeds[party])
        return int(np.random.SeedSequence([self.seed, party + 1]).generate_state(1)[0])

    def to_dict(self) -> dict:
        return {'method': self.method.value, 'share_fraction': self.share_fraction, 'secure': self.secure,
                'mixed': self.mixed, 'randomness_mode': self.randomness_mode, 'transport': self.transport,
                'train': self.train.to_dict(), 'model': self.model.to_dict(), 'codec': self.codec.to_dict(),
                'seed': self.seed, 'party_seeds': list(self.party_seeds) if self.party_seeds is not None else None}


@dataclass(eq=False)
class ScenarioResult:
    """
    Outcome of one scenario.

    Attributes:
        method (Method): Scenario.
        models (dict): Final plaintext model of each party (``Model`` or ``CompositeModel``).
        reports (dict[str, EvaluationReport]): Test-set metrics of each party.
        traffic (TrafficStats): Traffic of the secure phases (``None`` for plaintext runs).
        timings (list[dict]): ``stage``, ``phase``, ``millis`` per stage.
        shared (dict[str, LabeledDataset]): Subset each party contributed.
        planned (RandomnessBudget): Randomness generated for the secure phases.
        consumed (RandomnessBudget): Randomness used by the secure phases.
    """
    method: Method
    models: dict
    reports: dict
    traffic: TrafficStats = None
    timings: list = field(default_factory=list)
    shared: dict = field(default_factory=dict)
    planned: RandomnessBudget = field(default_factory=RandomnessBudget)
    consumed: RandomnessBudget = field(default_factory=RandomnessBudget)
    transcript_digest: str = ''

    def metrics_records(self) -> list[dict]:
        records = []
        for party, report in self.reports.items():
            records.extend(report.to_records(self.method.value, party))
        return records

    def to_frames(self) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
        """Metrics, traffic and timing tables."""
        traffic = pd.DataFrame(self.traffic.to_records() if self.traffic is not None else [],
                               columns=['stage', 'phase', 'party', 'bytes_out', 'bytes_in', 'rounds', 'millis'])
        traffic.insert(0, 'method', self.method.value)
        timing = pd.DataFrame(self.timings, columns=['stage', 'phase', 'millis'])
        timing.insert(0, 'method', self.method.value)
        return pd.DataFrame(self.metrics_records()), traffic, timing

    def secure_millis(self) -> float:
        return sum(r['millis'] for r in self.timings if r['phase'] == 'SECURE_TRAIN')

    def local_millis(self) -> float:
        return sum(r['millis'] for r in self.timings if r['phase'] == 'LOCAL_TRAIN')


class _Run:
    """State shared by the phases of one scenario run."""

    def __init__(self, config: ScenarioConfig, splits: dict[str, LabeledDataset]):
        for name in ('party1', 'party2', 'test'):
            if name not in splits:
                raise KeyError(f"Scenario needs a '{name}' partition.")
        self.config = config
        self.splits = splits
        self.data = [splits[name] for name in PARTY_NAMES]
        self.timings = []
        self.session = None
        self.backend = PLAINTEXT
        self.shared = [self._shared_subset(party) for party in range(2)]
        if config.secure and config.method != Method.NC:
            self.session = MPCSession(2, config.codec, config.seed, config.randomness_mode, config.transport,
                                      config.record_transcripts, config.verbose)
            self.backend = SecureBackend(self.session)

    def _shared_subset(self, party: int) -> LabeledDataset:
        if self.config.method == Method.NC:
            return self.data[party].subset(np.zeros(0, dtype=np.int64), f"{PARTY_NAMES[party]}_shared")
        seed = int(np.random.SeedSequence([self.config.party_seed(party), 0x5A]).generate_state(1)[0])
        return select_share_subset(self.data[party], self.config.share_fraction, seed)

    def rng(self, party: int, *keys) -> np.random.Generator:
        return np.random.default_rng([self.config.party_seed(party), *keys])

    def init_seed(self, party: int, tag: int) -> int:
        return int(np.random.SeedSequence([self.config.party_seed(party), tag]).generate_state(1)[0])

    @contextmanager
    def stage(self, name: str, local: bool):
        if self.config.verbose:
            print(f"(Info): Stage {name} ({'local' if local else 'secure' if self.session else 'plaintext'}).")
        in_network = self.session.network.in_stage(name, local) if self.session is not None else nullcontext()
        start = time.perf_counter()
        with in_network:
            yield
        self.timings.append({'stage': name, 'phase': 'LOCAL_TRAIN' if local else 'SECURE_TRAIN',
                             'millis': 1000.0 * (time.perf_counter() - start)})

    def prepare(self, budget: RandomnessBudget):
        if self.session is not None:
            self.session.prepare(budget)

    def train_secure_scope(self, model: Model, owner: int, X_other, Y_other, rng, X_own=None, Y_own=None) -> Model:
        """
        Trains ``owner``'s model on the other party's rows (and, in mixed mode, its own rows) in the
        secure scope. Inputs are plaintext arrays, or shared tensors already held by the session.
        """
        cfg = self.config
        if self.session is None:
            if cfg.mixed:
                train_epochs_mixed(model, X_own, Y_own, X_other, Y_other, cfg.train, PLAINTEXT, rng, cfg.verbose)
            else:
                train_epochs(model, X_other, Y_other, cfg.train, PLAINTEXT, rng, cfg.verbose)
            return model
        shared_model = share_model(model, self.session, owner)
        if cfg.mixed:
            train_epochs_mixed(shared_model, X_own, Y_own, X_other, Y_other, cfg.train, self.backend, rng, cfg.verbose)
        else:
            train_epochs(shared_model, X_other, Y_other, cfg.train, self.backend, rng, cfg.verbose)
        return reveal_model(shared_model, self.session, owner)

    def share(self, values, owner: int):
        return values if self.session is None else self.session.share_input(values, owner)

    def step_sizes(self, n_own: int, n_other: int) -> list[int]:
        if n_other == 0:
            return []
        if self.config.mixed:
            return [own + other for own, other in mixed_batch_sizes(n_own, n_other, self.config.train.batch_size)]
        return epoch_batch_sizes(n_other, self.config.train.batch_size)

    def finish(self, models: dict) -> ScenarioResult:
        reports = {name: evaluate(model, self.splits['test']) for name, model in models.items()}
        result = ScenarioResult(self.config.method, models, reports, timings=self.timings,
                                shared=dict(zip(PARTY_NAMES, self.shared)))
        if self.session is not None:
            assert self.session.budget_matches(), "Secure phases did not consume exactly the planned randomness."
            result.traffic = self.session.stats
            result.planned = self.session.planned
            result.consumed = self.session.consumed
            result.transcript_digest = self.session.network.transcript_digest()
            self.session.close()
        return result


def _train_local(run: _Run, party: int, config: ModelConfig, X, Y, tag: int, stage: str) -> Model:
    model = init_weights(config, run.init_seed(party, tag))
    with run.stage(f"{PARTY_NAMES[party]}/{stage}", local=True):
        train_epochs(model, X, Y, run.config.train, PLAINTEXT, run.rng(party, tag), run.config.verbose)
    return model


def run_nc(config: ScenarioConfig, splits: dict[str, LabeledDataset]) -> ScenarioResult:
    """Each party trains its own network on its own data, in plaintext."""
    run = _Run(config, splits)
    models = {}
    for party, data in enumerate(run.data):
        models[PARTY_NAMES[party]] = _train_local(run, party, config.model, data.X, data.onehot(), 1, 'local_train')
    return run.finish(models)


def run_ctfe(config: ScenarioConfig, splits: dict[str, LabeledDataset]) -> ScenarioResult:
    """
    Full-network training on own data, then on the other party's shared subset.

    In secure mode the subset is shared by its owner, the model by the training party, and the trained
    model is revealed to the training party only. With ``mixed`` set, the network is trained once on
    own and shared rows jointly.

    Raises:
        ProtocolError: If the secure phase runs out of planned randomness.
    """
    run = _Run(config, splits)
    cfg = config
    budget = RandomnessBudget()
    for party in range(2):
        other = run.shared[1 - party]
        budget = budget + plan_budget(cfg.model, 0, cfg.train.epochs, Method.CTFE,
                                      batch_sizes=run.step_sizes(len(run.data[party]), len(other)))
    run.prepare(budget)

    models = {}
    for party, data in enumerate(run.data):
        other = run.shared[1 - party]
        if cfg.mixed and len(other):
            model = init_weights(cfg.model, run.init_seed(party, 1))
        else:
            model = _train_local(run, party, cfg.model, data.X, data.onehot(), 1, 'local_train')
        if len(other) == 0:
            warnings.warn(f"{PARTY_NAMES[1 - party]} shares no samples; {PARTY_NAMES[party]} skips the "
                          f"collaborative phase.", stacklevel=2)
            models[PARTY_NAMES[party]] = model
            continue
        with run.stage(f"{PARTY_NAMES[party]}/secure_train", local=False):
            X_other, Y_other = run.share(other.X, 1 - party), run.share(other.onehot(), 1 - party)
            X_own = Y_own = None
            if cfg.mixed:
                X_own, Y_own = run.share(data.X, party), run.share(data.onehot(), party)
            model = run.train_secure_scope(model, party, X_other, Y_other, run.rng(party, 2), X_own, Y_own)
        models[PARTY_NAMES[party]] = model
    return run.finish(models)


def run_sfe(config: ScenarioConfig, splits: dict[str, LabeledDataset]) -> ScenarioResult:
    """
    Classifier-only collaboration on top of a feature extractor trained on the public partition.

    Raises:
        KeyError: If ``splits`` has no ``global`` partition.
    """
    if 'global' not in splits:
        raise KeyError("SFE needs a 'global' partition to train the shared feature extractor.")
    run = _Run(config, splits)
    cfg = config
    classifier_cfg = cfg.model.classifier_config()
    budget = RandomnessBudget()
    for party in range(2):
        budget = budget + plan_budget(cfg.model, 0, cfg.train.epochs, Method.SFE,
                                      batch_sizes=run.step_sizes(len(run.data[party]), len(run.shared[1 - party])))
    run.prepare(budget)

    public = splits['global']
    shared_net = init_weights(cfg.model, int(np.random.SeedSequence([cfg.seed, 0x6]).generate_state(1)[0]))
    with run.stage('global/shared_train', local=True):
        train_epochs(shared_net, public.X, public.onehot(), cfg.train, PLAINTEXT, np.random.default_rng([cfg.seed, 6]),
                     cfg.verbose)
    extractor = shared_net.feature_extractor()

    embeddings = []
    for party, data in enumerate(run.data):
        with run.stage(f"{PARTY_NAMES[party]}/feature_extractor", local=True):
            embeddings.append((extractor.predict_proba(data.X), extractor.predict_proba(run.shared[party].X)
                               if len(run.shared[party]) else np.zeros((0, cfg.model.q))))

    models = {}
    for party, data in enumerate(run.data):
        other = run.shared[1 - party]
        own_embeddings = embeddings[party][0]
        if cfg.mixed and len(other):
            classifier = init_weights(classifier_cfg, run.init_seed(party, 3))
        else:
            classifier = _train_local(run, party, classifier_cfg, own_embeddings, data.onehot(), 3, 'classifier_local')
        if len(other):
            with run.stage(f"{PARTY_NAMES[party]}/classifier_secure", local=False):
                E_other = run.share(embeddings[1 - party][1], 1 - party)
                Y_other = run.share(other.onehot(), 1 - party)
                E_own = Y_own = None
                if cfg.mixed:
                    E_own, Y_own = run.share(own_embeddings, party), run.share(data.onehot(), party)
                classifier = run.train_secure_scope(classifier, party, E_other, Y_other, run.rng(party, 4), E_own, Y_own)
        models[PARTY_NAMES[party]] = CompositeModel([extractor], classifier)
    return run.finish(models)


def _secure_embed(run: _Run, extractor: Model, extractor_owner: int, X_shared):
    """Embeddings of shared rows under a shared copy of ``extractor_owner``'s extractor."""
    shared_extractor = share_model(extractor, run.session, extractor_owner)
    return forward_batched(shared_extractor, X_shared, run.backend, run.config.train.batch_size)


def run_ltfe(config: ScenarioConfig, splits: dict[str, LabeledDataset]) -> ScenarioResult:
    """
    Classifier collaboration over the concatenated embeddings of both parties' own extractors.

    Own samples: the foreign extractor's embeddings are computed under secure computation and revealed
    to the sample owner, who then trains the classifier on ``[f_1(x); f_2(x)]`` in plaintext. Shared
    subset: the trainer's extractor is applied to the other party's shared rows under secure computation,
    concatenated with the embeddings the owner shares, and the classifier is trained securely.
    """
    run = _Run(config, splits)
    cfg = config
    batch = cfg.train.batch_size
    classifier_cfg = cfg.model.classifier_config(2 * cfg.model.q)
    budget = RandomnessBudget()
    for party in range(2):
        n_own, n_other = len(run.data[party]), len(run.shared[1 - party])
        inference = epoch_batch_sizes(n_own, batch) + (epoch_batch_sizes(n_other, batch) if n_other else [])
        steps = run.step_sizes(n_own, n_other) if n_other else []
        budget = budget + plan_budget(cfg.model, 0, cfg.train.epochs, Method.LTFE, batch_sizes=steps,
                                      inference_batch_sizes=inference)
    run.prepare(budget)

    extractors = []
    for party, data in enumerate(run.data):
        net = _train_local(run, party, cfg.model, data.X, data.onehot(), 1, 'feature_extractor')
        extractors.append(net.feature_extractor())

    models = {}
    for party, data in enumerate(run.data):
        foreign = 1 - party
        with run.stage(f"{PARTY_NAMES[party]}/foreign_embeddings", local=False):
            if run.session is None:
                foreign_embeddings = extractors[foreign].predict_proba(data.X)
            else:
                X_shared = run.session.share_input(data.X, party)
                foreign_embeddings = run.session.reveal(_secure_embed(run, extractors[foreign], foreign, X_shared), party)
        parts = [None, None]
        parts[party], parts[foreign] = extractors[party].predict_proba(data.X), foreign_embeddings
        own_features = stack_features(parts)

        other = run.shared[foreign]
        if cfg.mixed and len(other):
            classifier = init_weights(classifier_cfg, run.init_seed(party, 3))
        else:
            classifier = _train_local(run, party, classifier_cfg, own_features, data.onehot(), 3, 'classifier_local')
        if len(other):
            with run.stage(f"{PARTY_NAMES[party]}/classifier_secure", local=False):
                owner_embeddings = extractors[foreign].predict_proba(other.X)
                parts = [None, None]
                if run.session is None:
                    parts[party], parts[foreign] = extractors[party].predict_proba(other.X), owner_embeddings
                    features = stack_features(parts)
                else:
                    X_shared = run.session.share_input(other.X, foreign)
                    parts[party] = _secure_embed(run, extractors[party], party, X_shared)
                    parts[foreign] = run.session.share_input(owner_embeddings, foreign)
                    features = concat_shared(parts, axis=-1)
                Y_other = run.share(other.onehot(), foreign)
                F_own = Y_own = None
                if cfg.mixed:
                    F_own, Y_own = run.share(own_features, party), run.share(data.onehot(), party)
                classifier = run.train_secure_scope(classifier, party, features, Y_other, run.rng(party, 4),
                                                    F_own, Y_own)
        models[PARTY_NAMES[party]] = CompositeModel(list(extractors), classifier)
    return run.finish(models)


_RUNNERS = {Method.NC: run_nc, Method.CTFE: run_ctfe, Method.SFE: run_sfe, Method.LTFE: run_ltfe}


def run_scenario(config: ScenarioConfig, splits: dict[str, LabeledDataset]) -> ScenarioResult:
    """Dispatches to the runner of ``config.method``."""
    return _RUNNERS[config.method](config, splits)


def plan_secure_inference(extractor_sizes, classifier_sizes, hidden, output, n_rows: int,
                          batch_size: int = 32) -> RandomnessBudget:
    """Randomness for :func:`ltfe_secure_infer`: one foreign extractor pass and one classifier pass per batch."""
    budget = RandomnessBudget()
    fe_layers = len(extractor_sizes) - 1
    cl_layers = len(classifier_sizes) - 1
    for rows in epoch_batch_sizes(n_rows, batch_size):
        plan_forward(extractor_sizes, [hidden] * fe_layers, rows, budget)
        plan_forward(classifier_sizes, [hidden] * (cl_layers - 1) + [output], rows, budget)
    return budget


def ltfe_secure_infer(owner: int, X: np.ndarray, extractors: list, classifier: Model, session: MPCSession = None,
                      batch_size: int = 32, seed: int = 0) -> np.ndarray:
    """
    Private prediction for samples held by ``owner``.

    The owner computes its own embedding locally and shares it; the foreign embedding is computed under
    secure computation on the shared sample with the foreign extractor shared by its owner; the owner's
    classifier is evaluated on the shared concatenation and only the owner learns the output.

    Args:
        owner (int): Sample owner (0 or 1).
        X (np.ndarray): Samples of the owner.
        extractors (list[Model]): Extractor of every party, by party index.
        classifier (Model): The owner's classifier (input width ``2 * q``).
        session (MPCSession, optional): Fresh session; created when absent.
        batch_size (int): Rows per secure batch.
        seed (int): Seed of a created session.

    Returns:
        np.ndarray: Predicted labels, known to the owner only.
    """
    foreign = 1 - owner
    X = np.asarray(X, dtype=np.float64)
    own_session = session is None
    session = session or MPCSession(2, seed=seed)
    hidden = extractors[foreign].activations[0].value
    output = classifier.activations[-1].value
    session.prepare(plan_secure_inference(extractors[foreign].layer_sizes, classifier.layer_sizes, hidden, output,
                                          len(X), batch_size))
    backend = SecureBackend(session)
    predictions = []
    with session.network.in_stage(f"{PARTY_NAMES[owner]}/inference"):
        shared_extractor = share_model(extractors[foreign], session, foreign)
        shared_classifier = share_model(classifier, session, owner)
        for start in range(0, len(X), batch_size):
            rows = X[start:start + batch_size]
            parts = [None, None]
            parts[owner] = session.share_input(extractors[owner].predict_proba(rows), owner)
            parts[foreign] = forward(shared_extractor, session.share_input(rows, owner), backend)[0]
            scores = forward(shared_classifier, concat_shared(parts, axis=-1), backend)[0]
            predictions.append(np.argmax(session.reveal(scores, owner), axis=1))
    if own_session:
        session.close()
    return np.concatenate(predictions) if predictions else np.zeros(0, dtype=np.int64)


def sweep_share_fraction(config: ScenarioConfig, splits: dict[str, LabeledDataset], fractions=SWEEP_FRACTIONS,
                         seeds=(0,), starved: dict = None) -> pd.DataFrame:
    """
    Runs ``config.method`` at every share fraction and seed.

    Args:
        starved (dict): Labels each party is short of, keyed by party name. Defaults to
            :func:`ppcl.learning.datasets.starved_labels` of the skewed 10-class splits.

    Returns:
        pd.DataFrame: One row per (fraction, seed, party, label) with accuracy, precision, recall, f1 and
        a boolean ``starved`` column marking the labels the sharing is meant to help with.
    """
    starved = starved_labels() if starved is None else starved
    frames = []
    for seed in seeds:
        for fraction in fractions:
            point = ScenarioConfig(**{**config.__dict__, 'share_fraction': float(fraction), 'seed': int(seed)})
            if config.verbose:
                print(f"(Info): Sweep point fraction={fraction}, seed={seed}.")
            frame = pd.DataFrame(run_scenario(point, splits).metrics_records())
            frame.insert(0, 'seed', seed)
            frame.insert(0, 'fraction', float(fraction))
            frame['starved'] = [int(label) in starved.get(party, ())
                                for party, label in zip(frame['party'], frame['label'])]
            frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def cooperation_benefit(sweep: pd.DataFrame, metric: str = 'f1') -> pd.DataFrame:
    """
    Mean of ``metric`` over the starved labels of both parties at every share fraction.

    Args:
        sweep (pd.DataFrame): Output of :func:`sweep_share_fraction`.
        metric (str): Column to average.

    Returns:
        pd.DataFrame: Columns ``fraction``, ``metric``, ``mean``, ``std`` and ``gain`` (mean minus the mean at
        the smallest fraction), sorted by fraction.
    """
    rows = sweep[sweep['starved']]
    if rows.empty:
        raise ValueError("Sweep has no starved rows to summarise.")
    # std over seeds of the per-seed mean
    per_seed = rows.groupby(['fraction', 'seed'])[metric].mean().groupby(level='fraction')
    summary = pd.DataFrame({'mean': per_seed.mean(), 'std': per_seed.std(ddof=0)}).reset_index()
    summary.insert(1, 'metric', metric)
    summary = summary.sort_values('fraction', ignore_index=True)
    summary['gain'] = summary['mean'] - summary['mean'].iloc[0]
    return summary


def estimate_cost(arch, n: int, p: int, t: int, method) -> int:
    """
    Multiply-accumulate count of the secure part of a scenario.

    With ``Q, n1, n2, q, K`` the layer widths:

    * CTFE: ``n p t (Q n1 + n1 n2 + n2 q + q K)``
    * SFE: ``n p t (q K)``
    * LTFE: ``n p t (Q n1 + n1 n2 + n2 q + (p + 1) q K)``
    * NC: 0

    Deeper or shallower networks generalise the sums to all extractor and classifier layers.

    Args:
        arch (ModelConfig): Network layout; ``fe_layers`` splits extractor from classifier.
        n (int): Training epochs.
        p (int): Number of parties.
        t (int): Training samples each party shares.
        method (Method): Scenario.

    Returns:
        int: The count; linear in each of ``n``, ``t`` and (apart from the LTFE head term) ``p``.

    Example:

        .. code-block:: python

            from ppcl.learning.tensor_nn import ModelConfig

            estimate_cost(ModelConfig(), n=1, p=2, t=200, method='sfe')   # 2 * 200 * 64 * 10

    """
    method = Method(getattr(method, 'value', method))
    sizes = list(arch.layer_sizes)
    fe = sum(a * b for a, b in zip(sizes[:arch.fe_layers], sizes[1:arch.fe_layers + 1]))
    head = sum(a * b for a, b in zip(sizes[arch.fe_layers:-1], sizes[arch.fe_layers + 1:]))
    scale = n * p * t
    if method == Method.CTFE:
        return scale * (fe + head)
    if method == Method.SFE:
        return scale * head
    if method == Method.LTFE:
        return scale * (fe + (p + 1) * head)
    return 0
