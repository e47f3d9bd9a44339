"""This module contains the constants used throughout the library.

Experimental defaults (split sizes, label skew, hyperparameters, fraud counts) reproduce the
collaborative-learning benchmark setup; the skew ratio and batch size are not published there and are
fixed here.
"""
from enum import Enum


class Method(str, Enum):
    """Training scenarios."""
    NC = 'nc'
    CTFE = 'ctfe'
    SFE = 'sfe'
    LTFE = 'ltfe'


PARTITIONS = ('global', 'party1', 'party2', 'test')

MNIST_SPLIT_SIZES = {
    'global': 12600,
    'party1': 23700,
    'party2': 23700,
    'test': 10000,
}

SYNTHETIC_SPLIT_SIZES = {
    'global': 20000,
    'party1': 20000,
    'party2': 20000,
    'test': 20000,
}

FAVOURED_LABELS = {
    'global': (3, 4, 5),
    'party1': (0, 1, 2),
    'party2': (7, 8, 9),
    'test': (),
}

SKEW_RATIO = 3.0

FRAUD_LABEL_COUNTS = {
    'global': (1000, 100),
    'party1': (1000, 50),
    'party2': (1000, 242),
    'test': (1000, 100),
}

# Columns of the public fraud export that carry no signal (seconds since the first transaction).
FRAUD_DROP_COLUMNS = ('Time',)
FRAUD_FILE = 'fraud.csv'

MNIST_FILES = {
    'train_images': 'train-images-idx3-ubyte',
    'train_labels': 'train-labels-idx1-ubyte',
    'test_images': 't10k-images-idx3-ubyte',
    'test_labels': 't10k-labels-idx1-ubyte',
}

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

FCN_LAYER_SIZES = (784, 64, 64, 64, 10)
FRAUD_LAYER_SIZES = (29, 64, 64, 64, 2)

TRAINING_DEFAULTS = {
    'lr': 0.1,
    'l2': 0.0002,
    'epochs': 10,
    'batch_size': 32,
    'share_fraction': 0.3,
}

ATTACK_DEFAULTS = {
    'encoder_width': 64,
    'head_sizes': (128, 64),
    'lr': 0.001,
    'epochs': 50,
    'batch_size': 64,
    'hist_bins': 20,
}

SWEEP_FRACTIONS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

DATA_DIR_ENV = 'PPCL_DATA_DIR'
