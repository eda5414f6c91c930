"""Consensus scoring for crowdsourced immunohistochemistry annotation.

Subpackages and modules:

* :mod:`crowdscore.core` - ordinal classes, bins, judgments
* :mod:`crowdscore.qc` - quiz gate, trust, task scheduling
* :mod:`crowdscore.aggregate` - CV, CT, wCV, wCT, nuclei medians, patient rollup
* :mod:`crowdscore.metrics` - agreement and reliability statistics
* :mod:`crowdscore.sensitivity` - agreement versus crowd size
* :mod:`crowdscore.sim` - seeded crowd simulator
* :mod:`crowdscore.app` - file I/O, pipeline, figures, HTTP service, CLI
"""

__version__ = "0.1.0"
