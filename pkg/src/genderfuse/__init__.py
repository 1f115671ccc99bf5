"""Gender prediction from tweets via an embedding-fusion text CNN.

The package is organized around eight cooperating modules:

* :mod:`genderfuse.corpus`    -- data model, JSONL / PAN-XML ingestion, fold splits
* :mod:`genderfuse.textpipe`  -- tweet normalization, tokenization, POS tagging
* :mod:`genderfuse.tensor`    -- numpy autograd core, Adam, gradient checking
* :mod:`genderfuse.model`     -- the CNN / CNN_char / CNN_char_pos architectures
* :mod:`genderfuse.train`     -- k-fold cross-validation and voting ensembles
* :mod:`genderfuse.baseline`  -- TF-IDF + linear (logistic / hinge) baselines
* :mod:`genderfuse.stats`     -- odds ratios, chi-square tests, Bonferroni
* :mod:`genderfuse.synth`     -- synthetic corpora for end-to-end verification

``genderfuse.cli`` exposes the whole pipeline as a command-line tool.
"""

from .errors import (
    BaselineError,
    CheckpointError,
    ConfigError,
    CorpusError,
    GenderfuseError,
    ShapeError,
    StatsError,
    TextPipeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineError",
    "CheckpointError",
    "ConfigError",
    "CorpusError",
    "GenderfuseError",
    "ShapeError",
    "StatsError",
    "TextPipeError",
    "TrainingError",
    "__version__",
]
