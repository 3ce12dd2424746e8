"""
Base class for figure-reproduction sweeps.
All figures should inherit from this class.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from errors import DomainError
from montecarlo import TrialConfig, estimate_ttt_loss, run_theory
from records import SweepRecord

logger = logging.getLogger(__name__)

# Smallest dimension a scaled-down sweep may use
MIN_SCALED_DIM = 8


@dataclass(frozen=True)
class SweepPoint:
    """One configuration of a sweep, before it is simulated."""
    value: float
    label: str
    cfg: TrialConfig


def scaled(count, scale):
    """Shrink a full-scale dimension by scale, never below MIN_SCALED_DIM."""
    return max(MIN_SCALED_DIM, int(round(count * scale)))


def k_grid(n, points=17):
    """k from 0 to 4n in equal increments (rounded to whole rows)."""
    return sorted({int(round(k)) for k in np.linspace(0, 4 * n, points)})


class BaseFigure:
    """Base class for figure sweeps"""

    def __init__(self):
        self.figure_id = "base"
        self.title = "Base figure"
        self.sweep_var = "gamma"

    def get_config(self):
        """
        Get the full-scale configuration of the figure.

        Returns:
            dict: Figure configuration
        """
        return {
            'figure_id': self.figure_id,
            'title': self.title,
            'sweep_var': self.sweep_var,
        }

    def sweep_points(self, scale, trials, seed):
        """
        Build every configuration of the sweep.
        Should be overridden by figure-specific classes.

        Args:
            scale: Factor in (0, 1] applied to n, d and k
            trials: Monte-Carlo trials per point
            seed: Base seed shared by every point

        Returns:
            list of SweepPoint
        """
        raise NotImplementedError("Subclasses must implement sweep_points()")

    def theory_loss(self, point):
        """Predicted loss after TTT for a sweep point."""
        return run_theory(point.cfg).predicted_final_loss

    def make_record(self, point, loss_theory, mean, std_error):
        """SweepRecord with losses normalised by ‖β_TT‖²."""
        cfg = point.cfg
        norm = cfg.task.beta_norm_sq
        return SweepRecord(
            sweep_var=self.sweep_var,
            value=float(point.value),
            loss_theory=float(loss_theory / norm),
            loss_mc_mean=float(mean / norm),
            loss_mc_stderr=float(std_error / norm),
            init=point.label,
            n=cfg.n,
            d=cfg.d,
            k=cfg.k,
            sigma=cfg.task.sigma,
            seed=cfg.base_seed,
        )

    def run(self, scale=1.0, trials=2000, seed=0, threads=1, records=None):
        """
        Simulate every sweep point.

        Args:
            records: Optional list that finished records are appended to as
                the sweep goes, so a caller keeps them if a later point fails

        Returns:
            list of SweepRecord, in sweep order
        """
        if not 0 < scale <= 1:
            raise DomainError(f"scale must lie in (0, 1], got {scale!r}")
        points = self.sweep_points(scale, trials, seed)
        logger.info("%s: %d sweep point(s) at scale %g, %d trials each", self.figure_id, len(points), scale, trials)

        records = [] if records is None else records
        for i, point in enumerate(points, start=1):
            start_time = time.time()
            estimate = estimate_ttt_loss(point.cfg, threads=threads)
            records.append(self.make_record(point, self.theory_loss(point), estimate.mean, estimate.std_error))
            logger.info(
                "[%d/%d] %s=%.4g %s done in %.2fs",
                i, len(points), self.sweep_var, point.value, point.label, time.time() - start_time,
            )
        return records
