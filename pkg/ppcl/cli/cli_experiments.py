"""
Command-line interface for running collaborative-learning experiments.

The user must provide:
    * The sub-command. Options: 'gen-data', 'train', 'attack', 'bench' or 'report'.
    * Directory to which the outputs are written (or, for 'report', the directory to aggregate).
    * Optionally a JSON configuration file; command-line flags override its values, and its values
      override the built-in defaults (30% shared data, 10 epochs, learning rate 0.1, L2 weight 0.0002,
      fixed-point base 10 with 5 fractional digits).

Every command writes a ``manifest.json`` holding the configuration, its SHA-256, the seeds and the
package versions. The manifest says ``"status": "incomplete"`` until the command has written all of
its outputs.

Examples:
    .. code-block:: bash

        ppcl gen-data --dataset mnist --data-dir /data/mnist -o runs/mnist
        ppcl train --method ltfe --dataset synthetic --scale 0.05 -o runs/ltfe
        ppcl train --method sfe --secure --scale 0.01 --epochs 1 -o runs/sfe_secure
        ppcl attack --methods ctfe sfe ltfe --seeds 0 1 2 3 4 -o runs/attack
        ppcl report runs

See Also:
    * :mod:`ppcl.learning.protocols` - scenario runners.
    * :mod:`ppcl.privacy.attacks` - membership-inference experiment.

"""
import argparse
from dataclasses import dataclass, field, fields
import os
import time

import numpy as np
import pandas as pd

from ..learning.datasets import (DATASETS, IDXFormatError, SplitAllocationError, prepare_splits, split_manifest,
                                 starved_labels)
from ..learning.protocols import (ScenarioConfig, cooperation_benefit, estimate_cost, run_scenario,
                                  sweep_share_fraction)
from ..learning.tensor_nn import CompositeModel, ModelConfig, TrainConfig, save_checkpoint
from ..mpc.ring_fixed import FixedPointCodec
from ..mpc.transport import ProtocolError, TransportError
from ..privacy.attacks import AttackConfig, run_privacy_experiment
from ..utils.constants import DATA_DIR_ENV, FCN_LAYER_SIZES, FRAUD_LAYER_SIZES, TRAINING_DEFAULTS, Method
from ..utils.io_utils import RunManifest, safe_load_meta, write_dict_to_json, write_frame

_EXPERIMENTS_EXAMPLES_ = (r"""
Examples:
  - Materialize the MNIST partitions:
    ppcl gen-data --dataset mnist --data-dir /path/to/mnist -o runs/mnist
  - Train LTFE in plaintext on a scaled synthetic benchmark:
    ppcl train --method ltfe --scale 0.05 -o runs/ltfe
  - Train SFE under secure computation, one epoch:
    ppcl train --method sfe --secure --scale 0.01 --epochs 1 -o runs/sfe_secure
  - Share-fraction sweep over three seeds:
    ppcl train --method ctfe --sweep --seeds 0 1 2 --scale 0.05 -o runs/sweep
  - Membership inference against every scenario:
    ppcl attack --methods ctfe sfe ltfe --seeds 0 1 2 3 4 --scale 0.05 -o runs/attack
  - Secure versus plaintext timing:
    ppcl bench --methods ctfe sfe ltfe --scale 0.01 --epochs 1 -o runs/bench
  - Mean and standard deviation over runs:
    ppcl report runs
""")

_SECURE_DEFAULT_SCALE = 0.1


@dataclass
class ExperimentConfig:
    """
    Everything one CLI command needs; every default matches the reference experimental setup.

    Attributes:
        dataset (str): ``'mnist'``, ``'synthetic'`` or ``'fraud'``.
        data_dir (str, optional): Data directory (``PPCL_DATA_DIR`` when absent).
        seeds (tuple[int]): Seeds; one split and one scenario per seed.
        scale (float, optional): Partition shrink factor; ``0.1`` for secure runs and ``1.0`` otherwise
            when absent.
        output_dir (str): Output directory.
        method (str): Scenario trained by ``train``.
        methods (tuple[str]): Scenarios attacked by ``attack`` and timed by ``bench``.
        share_fraction (float): Fraction of each party's data that is shared.
        secure (bool): Train the other party's data under secure computation.
        mixed (bool): Equal-weight mixed batches instead of sequential training.
        randomness_mode (str): ``'offline'`` or ``'on_demand'``.
        transport (str): ``'inprocess'`` or ``'tcp'``.
        sweep (bool): ``train`` runs every share fraction of the sweep.
        train (TrainConfig): SGD hyperparameters.
        model (ModelConfig, optional): Network shape; chosen from the dataset when absent.
        codec (FixedPointCodec): Fixed-point codec.
        attack (AttackConfig): Attack-network hyperparameters.
        target_epochs (int, optional): Epochs of attack targets; ``train.epochs`` when absent.
        max_per_class (int): Cap on members and non-members per attack seed.
        verbose (bool): Print progress.
    """
    dataset: str = 'synthetic'
    data_dir: str = None
    seeds: tuple = (0,)
    scale: float = None
    output_dir: str = 'ppcl_output'
    method: str = Method.LTFE.value
    methods: tuple = (Method.CTFE.value, Method.SFE.value, Method.LTFE.value)
    share_fraction: float = TRAINING_DEFAULTS['share_fraction']
    secure: bool = False
    mixed: bool = False
    randomness_mode: str = 'offline'
    transport: str = 'inprocess'
    sweep: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = None
    codec: FixedPointCodec = field(default_factory=FixedPointCodec)
    attack: AttackConfig = field(default_factory=AttackConfig)
    target_epochs: int = None
    max_per_class: int = 250
    verbose: bool = False

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"Unknown dataset '{self.dataset}'. Use one of {DATASETS}.")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("At least one seed is needed.")
        for name in [self.method, *self.methods]:
            Method(name)
        self.methods = tuple(self.methods)
        if self.scale is not None and not 0.0 < self.scale <= 1.0:
            raise ValueError(f"scale must be in (0, 1], got {self.scale}.")
        if not 0.0 <= self.share_fraction <= 1.0:
            raise ValueError(f"share_fraction must be in [0, 1], got {self.share_fraction}.")
        if self.randomness_mode not in ('offline', 'on_demand'):
            raise ValueError(f"randomness_mode must be 'offline' or 'on_demand', got '{self.randomness_mode}'.")
        if self.transport not in ('inprocess', 'tcp'):
            raise ValueError(f"transport must be 'inprocess' or 'tcp', got '{self.transport}'.")
        if self.target_epochs is not None and self.target_epochs < 0:
            raise ValueError(f"target_epochs must be >= 0, got {self.target_epochs}.")

    @property
    def resolved_scale(self) -> float:
        if self.scale is not None:
            return self.scale
        return _SECURE_DEFAULT_SCALE if self.secure else 1.0

    @property
    def model_config(self) -> ModelConfig:
        if self.model is not None:
            return self.model
        return ModelConfig(FRAUD_LAYER_SIZES if self.dataset == 'fraud' else FCN_LAYER_SIZES)

    def scenario(self, method: str = None, seed: int = None, secure: bool = None) -> ScenarioConfig:
        return ScenarioConfig(method=method or self.method, share_fraction=self.share_fraction,
                              secure=self.secure if secure is None else secure, mixed=self.mixed,
                              randomness_mode=self.randomness_mode, transport=self.transport, train=self.train,
                              model=self.model_config, codec=self.codec,
                              seed=self.seeds[0] if seed is None else seed, verbose=self.verbose)

    def to_dict(self) -> dict:
        return {'dataset': self.dataset, 'data_dir': self.data_dir, 'seeds': list(self.seeds), 'scale': self.scale,
                'output_dir': self.output_dir, 'method': self.method, 'methods': list(self.methods),
                'share_fraction': self.share_fraction, 'secure': self.secure, 'mixed': self.mixed,
                'randomness_mode': self.randomness_mode, 'transport': self.transport, 'sweep': self.sweep,
                'train': self.train.to_dict(), 'model': self.model.to_dict() if self.model is not None else None,
                'codec': self.codec.to_dict(), 'attack': self.attack.to_dict(),
                'target_epochs': self.target_epochs, 'max_per_class': self.max_per_class, 'verbose': self.verbose}

    @classmethod
    def from_dict(cls, data: dict) -> 'ExperimentConfig':
        """
        Validated configuration from a JSON-style dictionary.

        Raises:
            KeyError: On unknown keys, including unknown keys of nested sections.
            TypeError: On values of the wrong type.
            ValueError: On out-of-range values.
        """
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise KeyError(f"Unknown configuration keys: {unknown}.")
        values = dict(data)
        for key, kind in (('seeds', (list, tuple)), ('methods', (list, tuple))):
            if key in values and not isinstance(values[key], kind):
                raise TypeError(f"'{key}' must be a list, got {type(values[key]).__name__}.")
        for key in ('secure', 'mixed', 'sweep', 'verbose'):
            if key in values and not isinstance(values[key], bool):
                raise TypeError(f"'{key}' must be true or false, got {values[key]!r}.")
        for key in ('scale', 'share_fraction'):
            if values.get(key) is not None and not isinstance(values[key], (int, float)):
                raise TypeError(f"'{key}' must be a number, got {values[key]!r}.")
        nested = {'train': TrainConfig, 'model': ModelConfig, 'codec': FixedPointCodec, 'attack': AttackConfig}
        for key, section in nested.items():
            if values.get(key) is None or isinstance(values[key], section):
                continue
            if not isinstance(values[key], dict):
                raise TypeError(f"'{key}' must be an object, got {type(values[key]).__name__}.")
            section_keys = {f.name for f in fields(section)}
            bad = sorted(set(values[key]) - section_keys)
            if bad:
                raise KeyError(f"Unknown keys in '{key}': {bad}.")
            section_values = dict(values[key])
            if key == 'attack' and 'head_sizes' in section_values:
                section_values['head_sizes'] = tuple(section_values['head_sizes'])
            values[key] = section(**section_values)
        return cls(**values)


def load_config(path: str = None, overrides: dict = None) -> ExperimentConfig:
    """
    Defaults, then the JSON file at ``path``, then ``overrides`` (nested sections are merged key by key).

    Raises:
        FileNotFoundError: If ``path`` does not exist.
    """
    data = safe_load_meta(path) if path else {}
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            data[key] = {**(data.get(key) or {}), **value}
        else:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def _splits(config: ExperimentConfig, seed: int) -> dict:
    return prepare_splits(config.dataset, seed=seed, scale=config.resolved_scale,
                          data_dir=config.data_dir, verbose=config.verbose)


def _start(config: ExperimentConfig, command: str) -> RunManifest:
    os.makedirs(config.output_dir, exist_ok=True)
    return RunManifest(config.output_dir, command, config.to_dict(), config.seeds).start()


def _write(manifest: RunManifest, frame: pd.DataFrame, filename: str, verbose: bool):
    write_frame(frame, os.path.join(os.path.dirname(manifest.path), filename), verbose)
    manifest.add_output(filename)


def cmd_gen_data(config: ExperimentConfig) -> dict:
    """
    Materializes the partitions of every seed and writes ``splits.json`` (sizes and label histograms).

    Returns:
        dict: Split manifest per seed.

    Raises:
        SplitAllocationError: If the requested sizes and skews cannot be met.
    """
    manifest = _start(config, 'gen-data')
    record = {str(seed): split_manifest(_splits(config, seed)) for seed in config.seeds}
    write_dict_to_json(record, os.path.join(config.output_dir, 'splits.json'))
    manifest.add_output('splits.json')
    manifest.finish()
    if config.verbose:
        print(f"(Info): Split manifest written to {config.output_dir}.")
    return record


def _save_models(models: dict, out_dir: str, manifest: RunManifest):
    for party, model in models.items():
        if isinstance(model, CompositeModel):
            parts = {f"{party}_extractor{i + 1}": extractor for i, extractor in enumerate(model.extractors)}
            parts[f"{party}_classifier"] = model.classifier
        else:
            parts = {party: model}
        for name, part in parts.items():
            save_checkpoint(part, os.path.join(out_dir, f"{name}.ckpt"))
            manifest.add_output(f"{name}.ckpt")


def cmd_train(config: ExperimentConfig) -> pd.DataFrame:
    """
    Runs ``config.method`` (every seed, or every sweep point) and writes its reports and checkpoints.

    Outputs ``metrics.csv`` and ``timing.csv``; secure runs of a cooperative method also write
    ``traffic.csv``. A sweep writes ``metrics.csv`` for every fraction and ``benefit.csv``, the mean F1 on
    the labels each party is short of. Checkpoints are written for the first seed of a non-sweep run.

    Returns:
        pd.DataFrame: Metrics of every seed.
    """
    manifest = _start(config, 'train')
    if config.sweep:
        metrics = sweep_share_fraction(config.scenario(), _splits(config, config.seeds[0]), seeds=config.seeds,
                                       starved=starved_labels(config.dataset))
        _write(manifest, metrics, 'metrics.csv', config.verbose)
        _write(manifest, cooperation_benefit(metrics), 'benefit.csv', config.verbose)
        manifest.finish()
        return metrics
    metric_frames, traffic_frames, timing_frames, digests = [], [], [], {}
    for seed in config.seeds:
        result = run_scenario(config.scenario(seed=seed), _splits(config, seed))
        metrics, traffic, timing = result.to_frames()
        for frame in (metrics, traffic, timing):
            frame.insert(0, 'seed', seed)
        metric_frames.append(metrics)
        traffic_frames.append(traffic)
        timing_frames.append(timing)
        digests[str(seed)] = result.transcript_digest
        if seed == config.seeds[0]:
            _save_models(result.models, config.output_dir, manifest)
    metrics = pd.concat(metric_frames, ignore_index=True)
    _write(manifest, metrics, 'metrics.csv', config.verbose)
    _write(manifest, pd.concat(timing_frames, ignore_index=True), 'timing.csv', config.verbose)
    if config.secure and Method(config.method) != Method.NC:
        _write(manifest, pd.concat(traffic_frames, ignore_index=True), 'traffic.csv', config.verbose)
    manifest.finish(transcript_digests=digests)
    return metrics


def cmd_attack(config: ExperimentConfig) -> pd.DataFrame:
    """
    Membership inference against every method of ``config.methods``; writes ``roc.csv``, ``hist.csv``
    and ``auc.csv``.

    Returns:
        pd.DataFrame: AUC per method and seed.
    """
    manifest = _start(config, 'attack')
    splits = _splits(config, config.seeds[0])
    roc, hist, auc = [], [], []
    for method in config.methods:
        result = run_privacy_experiment(method, splits, seeds=config.seeds, target_epochs=config.target_epochs,
                                        model_config=config.model_config, train_config=config.train,
                                        attack_config=config.attack, max_per_class=config.max_per_class,
                                        verbose=config.verbose)
        for seed, report in result.reports.items():
            for frames, frame in ((roc, report.to_roc_frame()), (hist, report.to_hist_frame())):
                frame.insert(0, 'seed', seed)
                frame.insert(0, 'method', result.method.value)
                frames.append(frame)
        auc.append(result.auc_frame())
    auc = pd.concat(auc, ignore_index=True)
    _write(manifest, pd.concat(roc, ignore_index=True).drop(columns='label'), 'roc.csv', config.verbose)
    _write(manifest, pd.concat(hist, ignore_index=True).drop(columns='label'), 'hist.csv', config.verbose)
    _write(manifest, auc, 'auc.csv', config.verbose)
    manifest.finish()
    return auc


def _timed_run(scenario: ScenarioConfig, splits: dict):
    start = time.perf_counter()
    result = run_scenario(scenario, splits)
    return result, time.perf_counter() - start


def cmd_bench(config: ExperimentConfig) -> pd.DataFrame:
    """
    Times every method of ``config.methods`` under secure computation and in plaintext.

    ``bench.csv`` holds, per method, both wall times, their ratio, the secure bytes and rounds, and
    the multiply-accumulate estimate of the secure part.

    Returns:
        pd.DataFrame: The benchmark table.
    """
    manifest = _start(config, 'bench')
    seed = config.seeds[0]
    splits = prepare_splits(config.dataset, seed=seed, scale=config.scale or _SECURE_DEFAULT_SCALE,
                            data_dir=config.data_dir, verbose=config.verbose)
    rows = []
    for method in config.methods:
        secure, secure_s = _timed_run(config.scenario(method, seed, secure=True), splits)
        _, plain_s = _timed_run(config.scenario(method, seed, secure=False), splits)
        n_shared = max((len(part) for part in secure.shared.values()), default=0)
        rows.append({'method': method,
                     'time_secure_s': secure_s,
                     'time_plain_s': plain_s,
                     'time_ratio': secure_s / plain_s if plain_s > 0 else np.inf,
                     'secure_phase_s': secure.secure_millis() / 1000.0,
                     'secure_bytes': secure.traffic.total_bytes() if secure.traffic is not None else 0,
                     'secure_rounds': secure.traffic.rounds(0) if secure.traffic is not None else 0,
                     'estimated_macs': estimate_cost(config.model_config, config.train.epochs, 2, n_shared, method)})
        if config.verbose:
            print(f"(Info): {method}: secure {secure_s:.2f} s, plaintext {plain_s:.2f} s.")
    bench = pd.DataFrame(rows)
    _write(manifest, bench, 'bench.csv', config.verbose)
    manifest.finish()
    return bench


def _collect(directory: str, filename: str) -> pd.DataFrame:
    frames = []
    for root, _, files in sorted(os.walk(directory)):
        if filename in files:
            frame = pd.read_csv(os.path.join(root, filename))
            frame.insert(0, 'run', os.path.relpath(root, directory))
            frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def cmd_report(directory: str, verbose: bool = False) -> pd.DataFrame:
    """
    Mean and standard deviation over seeds of every ``metrics.csv`` and ``auc.csv`` under ``directory``;
    written to ``summary.csv`` in ``directory``.

    Raises:
        FileNotFoundError: If the directory does not exist or holds no reports.
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"Report directory {directory} not found.")
    summaries = []
    metrics = _collect(directory, 'metrics.csv')
    if not metrics.empty:
        keys = [key for key in ('method', 'fraction', 'party', 'label') if key in metrics.columns]
        long = metrics.melt(id_vars=keys, value_vars=['accuracy', 'precision', 'recall', 'f1'], var_name='metric')
        grouped = long.groupby(keys + ['metric'], dropna=False)['value']
        summaries.append(grouped.agg(['mean', 'std', 'count']).reset_index())
    auc = _collect(directory, 'auc.csv')
    if not auc.empty:
        auc_summary = auc.groupby('method')['auc'].agg(['mean', 'std', 'count']).reset_index()
        auc_summary.insert(1, 'metric', 'auc')
        summaries.append(auc_summary)
    if not summaries:
        raise FileNotFoundError(f"No metrics.csv or auc.csv found under {directory}.")
    summary = pd.concat(summaries, ignore_index=True)
    write_frame(summary, os.path.join(directory, 'summary.csv'), verbose)
    return summary


def _add_common_args(parser: argparse.ArgumentParser) -> None:
    """
    Adds the arguments shared by every experiment sub-command to ``parser``.

    Flags default to ``None`` so that only flags given on the command line override the
    configuration file.
    """
    parser.add_argument('-c', '--config', required=False, help='JSON experiment configuration.', type=str)
    parser.add_argument('-o', '--output-dir', required=False, help='Output directory.', type=str)
    parser.add_argument('--dataset', required=False, choices=DATASETS, help='Benchmark dataset.')
    parser.add_argument('--data-dir', required=False, type=str,
                        help=f'Directory with MNIST IDX files or fraud.csv (overrides ${DATA_DIR_ENV}).')
    parser.add_argument('--seed', required=False, type=int, help='Single seed.')
    parser.add_argument('--seeds', required=False, type=int, nargs='+', help='Several seeds.')
    parser.add_argument('--scale', required=False, type=float, help='Shrink factor of every partition.')
    parser.add_argument('--epochs', required=False, type=int, help='Training epochs of every phase.')
    parser.add_argument('-v', '--verbose', action='store_true',
                        help='Print processing information during computation.', required=False)


def _generate_args() -> argparse.ArgumentParser:
    """
    Generates the argument parser of :func:`main`.

    Returns:
        parser (argparse.ArgumentParser): Parser with one sub-parser per command.
    """
    parser = argparse.ArgumentParser(prog='ppcl',
                                     description='Command line interface for privacy-preserving collaborative '
                                                 'learning experiments.',
                                     epilog=_EXPERIMENTS_EXAMPLES_, formatter_class=argparse.RawTextHelpFormatter)

    subparsers = parser.add_subparsers(dest="command", help="Sub-command help.")

    parser_gen = subparsers.add_parser('gen-data', help='Materialize the partitions and write their manifest.')
    _add_common_args(parser_gen)

    methods = [m.value for m in Method]
    parser_train = subparsers.add_parser('train', help='Train one scenario and write its reports.')
    _add_common_args(parser_train)
    parser_train.add_argument('-m', '--method', required=False, choices=methods, help='Scenario to train.')
    parser_train.add_argument('--secure', action='store_true', default=None,
                              help="Train on the other party's data under secure computation.")
    parser_train.add_argument('--share-fraction', required=False, type=float,
                              help='Fraction of each party\'s data that is shared.')
    parser_train.add_argument('--mixed', action='store_true', default=None,
                              help='Mix own and shared samples in every batch with equal weights.')
    parser_train.add_argument('--sweep', action='store_true', default=None,
                              help='Run every share fraction of the sweep.')

    parser_attack = subparsers.add_parser('attack', help='Membership inference against trained scenarios.')
    _add_common_args(parser_attack)
    parser_attack.add_argument('--methods', required=False, nargs='+', choices=methods[1:],
                               help='Scenarios to attack.')
    parser_attack.add_argument('--target-epochs', required=False, type=int,
                               help='Training epochs of the attacked models (0 for untrained).')

    parser_bench = subparsers.add_parser('bench', help='Time secure against plaintext training.')
    _add_common_args(parser_bench)
    parser_bench.add_argument('--methods', required=False, nargs='+', choices=methods[1:],
                              help='Scenarios to time.')

    parser_report = subparsers.add_parser('report', help='Aggregate runs into mean and standard deviation.')
    parser_report.add_argument('directory', help='Directory holding runs.', type=str)
    parser_report.add_argument('-v', '--verbose', action='store_true',
                               help='Print processing information.', required=False)

    return parser


def _overrides(args: argparse.Namespace) -> dict:
    """Configuration keys set on the command line."""
    flags = {'output_dir': 'output_dir', 'dataset': 'dataset', 'data_dir': 'data_dir', 'scale': 'scale',
             'method': 'method', 'secure': 'secure', 'share_fraction': 'share_fraction', 'mixed': 'mixed',
             'sweep': 'sweep', 'methods': 'methods', 'target_epochs': 'target_epochs'}
    overrides = {key: getattr(args, flag) for flag, key in flags.items() if getattr(args, flag, None) is not None}
    if args.seeds is not None:
        overrides['seeds'] = list(args.seeds)
    elif args.seed is not None:
        overrides['seeds'] = [args.seed]
    if args.epochs is not None:
        overrides['train'] = {'epochs': args.epochs}
    if args.verbose:
        overrides['verbose'] = True
    return overrides


_COMMANDS = {'gen_data': cmd_gen_data, 'train': cmd_train, 'attack': cmd_attack, 'bench': cmd_bench}


def main(argv=None):
    """
    Experiments command line interface
    """
    experiments_parser = _generate_args()
    args = experiments_parser.parse_args(argv)

    if args.command is None:
        experiments_parser.print_help()
        raise SystemExit('Exiting without command')

    command = str(args.command).replace('-', '_')

    if args.verbose:
        print(f"(Info): Running {command}.")

    try:
        if command == 'report':
            cmd_report(args.directory, args.verbose)
        else:
            _COMMANDS[command](load_config(args.config, _overrides(args)))
    except (ProtocolError, TransportError, IDXFormatError, SplitAllocationError, KeyError, TypeError, ValueError,
            FileNotFoundError) as err:
        print(f"(Error): {command} failed: {err}")
        raise SystemExit(1) from err


if __name__ == "__main__":
    main()
