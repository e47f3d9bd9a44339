"""
Reading and writing run outputs: JSON configurations and manifests, CSV reports.

"""
import hashlib
import importlib.metadata
import json
import os
import platform

import pandas as pd


def write_dict_to_json(meta_data_dict: dict, out_path: str):
    """
    Save a dictionary as an indented JSON file.

    Args:
        meta_data_dict (dict): Dictionary to be saved to file.
        out_path (str): Path of the JSON file.
    """
    with open(out_path, 'w', encoding='utf-8') as copy_file:
        json.dump(meta_data_dict, copy_file, indent=4)


def safe_load_meta(input_metadata_file: str) -> dict:
    """
    Function to load a generic JSON file (run configurations, manifests, split manifests).

    Args:
        input_metadata_file (str): File to be read.

    Returns:
        metadata (dict): The file's contents.

    Raises:
        FileNotFoundError: If the file does not exist.
    """
    if not os.path.exists(input_metadata_file):
        raise FileNotFoundError(f"Metadata file {input_metadata_file} not found. Does it have a "
                                "different path?")

    with open(input_metadata_file, 'r', encoding='utf-8') as meta_file:
        metadata = json.load(meta_file)
    return metadata


def write_frame(frame: pd.DataFrame, out_path: str, verbose: bool = False) -> str:
    """Writes ``frame`` as comma-separated text without the index; returns ``out_path``."""
    frame.to_csv(out_path, index=False, float_format='%.10g')
    if verbose:
        print(f"(Info): Wrote {len(frame)} rows to {out_path}.")
    return out_path


def config_digest(config: dict) -> str:
    """SHA-256 of the canonical (sorted-key, compact) JSON form of ``config``."""
    canonical = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def package_versions(packages=('ppcl', 'numpy', 'numba', 'scipy', 'pandas', 'scikit-learn')) -> dict:
    versions = {'python': platform.python_version()}
    for name in packages:
        try:
            versions[name] = importlib.metadata.version(name)
        except importlib.metadata.PackageNotFoundError:
            versions[name] = 'unknown'
    return versions


class RunManifest:
    """
    ``manifest.json`` of one CLI run.

    The manifest is written with ``"status": "incomplete"`` when the run starts and rewritten with
    ``"complete"`` once every output exists, so an interrupted run is recognisable on disk.

    Example:

        .. code-block:: python

            manifest = RunManifest(out_dir, 'train', config.to_dict(), seeds=[0])
            manifest.start()
            manifest.add_output('metrics.csv')
            manifest.finish()

    """

    def __init__(self, out_dir: str, command: str, config: dict, seeds=()):
        self.path = os.path.join(out_dir, 'manifest.json')
        self.record = {'command': command,
                       'status': 'incomplete',
                       'config_sha256': config_digest(config),
                       'config': config,
                       'seeds': [int(s) for s in seeds],
                       'versions': package_versions(),
                       'outputs': []}

    def start(self) -> 'RunManifest':
        write_dict_to_json(self.record, self.path)
        return self

    def add_output(self, filename: str):
        if filename not in self.record['outputs']:
            self.record['outputs'].append(filename)

    def finish(self, **extra):
        self.record.update(extra)
        self.record['status'] = 'complete'
        write_dict_to_json(self.record, self.path)
