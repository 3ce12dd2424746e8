"""
Multi-step TTT with decaying step sizes
"""

import logging

import numpy as np

from closed_form import population_loss
from errors import DomainError
from figures.base_figure import BaseFigure, SweepPoint, scaled
from model import CovarianceModel, TaskInstance
from montecarlo import INIT_PRETRAINED, POLICY_THEORY_ISO, TrialConfig, estimate_ttt_trajectory, initial_weights

logger = logging.getLogger(__name__)


class MultiStepFigure(BaseFigure):
    """
    Loss after each of `steps` gradient steps, starting from the initially
    optimal single-step size and shrinking it by `decay` after every step.
    """

    def __init__(self, decays=(1.0, 0.75, 0.5, 0.25), steps=10):
        super().__init__()
        self.figure_id = "fig2c"
        self.title = "Single vs. multiple TTT steps for several step-size decays"
        self.sweep_var = "step"
        self.n = 50
        self.d = 100
        self.k_per_d = 50
        self.decays = tuple(decays)
        self.steps = steps

    def get_config(self):
        config = super().get_config()
        config.update({
            'n': self.n,
            'd': self.d,
            'k': self.k_per_d * self.d,
            'steps': self.steps,
            'decays': list(self.decays),
            'beta': 'ones(d)',
            'covariances': 'identity',
            'sigma': 0.0,
        })
        return config

    def sweep_points(self, scale, trials, seed):
        n, d = scaled(self.n, scale), scaled(self.d, scale)
        cov = CovarianceModel.isotropic(d)
        task = TaskInstance(np.ones(d))
        points = []
        for decay in self.decays:
            cfg = TrialConfig(cov=cov, task=task, n=n, k=self.k_per_d * d, init=INIT_PRETRAINED,
                              eta_policy=POLICY_THEORY_ISO, steps=self.steps, decay=decay,
                              trials=trials, base_seed=seed)
            points.append(SweepPoint(decay, f"pretrained_decay_{decay:g}", cfg))
        return points

    def run(self, scale=1.0, trials=2000, seed=0, threads=1, records=None):
        """
        One record per (decay, step count), step 0 being the initial weights.

        loss_theory is the exact initial loss at step 0 and the single-step
        prediction for every later step.
        """
        if not 0 < scale <= 1:
            raise DomainError(f"scale must lie in (0, 1], got {scale!r}")
        records = [] if records is None else records
        for point in self.sweep_points(scale, trials, seed):
            cfg = point.cfg
            initial = population_loss(initial_weights(cfg), cfg.cov, cfg.task, cfg.n).total
            single_step = self.theory_loss(point)
            trajectory = estimate_ttt_trajectory(cfg, threads=threads)
            for step, estimate in enumerate(trajectory):
                theory = initial if step == 0 else single_step
                step_point = SweepPoint(step, point.label, cfg)
                records.append(self.make_record(step_point, theory, estimate.mean, estimate.std_error))
            logger.info("%s: decay %g done", self.figure_id, point.value)
        return records
