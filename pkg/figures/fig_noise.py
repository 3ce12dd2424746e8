"""
Zero-initialised TTT with noisy labels
"""

import numpy as np

from figures.base_figure import BaseFigure, SweepPoint, k_grid, scaled
from model import CovarianceModel, TaskInstance
from montecarlo import INIT_ZERO, POLICY_THEORY_ZERO, TrialConfig


class NoisyZeroInitFigure(BaseFigure):
    """Loss after TTT from W = 0 against γ, one curve per label-noise level (‖β‖ = 1)"""

    def __init__(self, sigmas=(0.0, 0.5, 1.0)):
        super().__init__()
        self.figure_id = "fig_noise"
        self.title = "Zero-init TTT under label noise"
        self.sweep_var = "gamma"
        self.n = 100
        self.d = 200
        self.sigmas = tuple(sigmas)

    def get_config(self):
        config = super().get_config()
        config.update({
            'n': self.n,
            'd': self.d,
            'k_range': [0, 4 * self.n],
            'sigmas': list(self.sigmas),
            'beta': 'ones(d) / sqrt(d)',
            'covariances': 'identity',
        })
        return config

    def sweep_points(self, scale, trials, seed):
        n, d = scaled(self.n, scale), scaled(self.d, scale)
        cov = CovarianceModel.isotropic(d)
        points = []
        for sigma in self.sigmas:
            task = TaskInstance(np.ones(d) / np.sqrt(d), sigma)
            for k in k_grid(n):
                cfg = TrialConfig(cov=cov, task=task, n=n, k=k, init=INIT_ZERO, eta_policy=POLICY_THEORY_ZERO,
                                  trials=trials, base_seed=seed)
                points.append(SweepPoint(k / d, f"zero_sigma_{sigma:g}", cfg))
        return points
