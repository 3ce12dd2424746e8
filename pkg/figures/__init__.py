"""
Figure-reproduction sweeps.

Each figure has its own module with its sweep configuration.
"""

import logging

from .fig1a import NonMonotonicFigure
from .fig1b import PhaseTransitionFigure
from .fig2a import CovarianceAlignmentFigure
from .fig2b import AlignmentExtremesFigure
from .fig2c import MultiStepFigure
from .fig_noise import NoisyZeroInitFigure
from records import check_writable, write_records

logger = logging.getLogger(__name__)

# Figure registry - maps figure ids to figure classes
FIGURES = {
    'fig1a': NonMonotonicFigure,
    'fig1b': PhaseTransitionFigure,
    'fig2a': CovarianceAlignmentFigure,
    'fig2b': AlignmentExtremesFigure,
    'fig2c': MultiStepFigure,
    'fig_noise': NoisyZeroInitFigure,
}


def get_figure(figure_id):
    """
    Get the sweep for a figure.

    Args:
        figure_id: Figure id (e.g., 'fig1a', 'fig2b')

    Returns:
        Figure instance

    Raises:
        KeyError: If the id is not registered
    """
    if figure_id not in FIGURES:
        raise KeyError(f"Unknown figure '{figure_id}', expected one of {', '.join(FIGURES)}")
    return FIGURES[figure_id]()


def run_figure(figure_id, scale=1.0, trials=2000, seed=0, out_path=None, fmt='csv', threads=1):
    """
    Run a figure sweep and write its records.

    Args:
        figure_id: Registered figure id
        scale: Factor in (0, 1] for n, d and k (each at least 8)
        trials: Monte-Carlo trials per sweep point
        seed: Base seed, echoed in every record
        out_path: Destination file (None returns the text only)
        fmt: 'csv' or 'json'
        threads: Worker threads per estimate (0 = one per CPU)

    Returns:
        list of SweepRecord
    """
    figure = get_figure(figure_id)
    check_writable(out_path)
    records = []
    try:
        figure.run(scale=scale, trials=trials, seed=seed, threads=threads, records=records)
    except Exception:
        if records and out_path is not None:
            write_records(records, out_path, fmt)
            logger.warning("%s aborted after %d record(s); partial output written to %s", figure_id, len(records), out_path)
        raise
    write_records(records, out_path, fmt)
    return records
