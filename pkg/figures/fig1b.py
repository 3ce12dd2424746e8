"""
Pretrained vs. zero initialisation as γ = k/d grows (isotropic model)
"""

import numpy as np

from figures.base_figure import BaseFigure, SweepPoint, k_grid, scaled
from model import CovarianceModel, TaskInstance
from montecarlo import INIT_PRETRAINED, INIT_ZERO, POLICY_THEORY_ISO, POLICY_THEORY_ZERO, TrialConfig


class PhaseTransitionFigure(BaseFigure):
    """Loss after TTT against γ for the optimal pretrained W* and for W = 0"""

    def __init__(self):
        super().__init__()
        self.figure_id = "fig1b"
        self.title = "Preferable initialization switches as k grows"
        self.sweep_var = "gamma"
        self.n = 200
        self.d = 400

    def get_config(self):
        config = super().get_config()
        config.update({
            'n': self.n,
            'd': self.d,
            'k_range': [0, 4 * self.n],
            'inits': [INIT_PRETRAINED, INIT_ZERO],
            'sigma': 0.0,
            'beta': 'ones(d)',
            'covariances': 'identity',
        })
        return config

    def sweep_points(self, scale, trials, seed):
        n, d = scaled(self.n, scale), scaled(self.d, scale)
        cov = CovarianceModel.isotropic(d)
        task = TaskInstance(np.ones(d))
        points = []
        for init, policy in ((INIT_PRETRAINED, POLICY_THEORY_ISO), (INIT_ZERO, POLICY_THEORY_ZERO)):
            for k in k_grid(n):
                cfg = TrialConfig(cov=cov, task=task, n=n, k=k, init=init, eta_policy=policy,
                                  trials=trials, base_seed=seed)
                points.append(SweepPoint(k / d, init, cfg))
        return points
