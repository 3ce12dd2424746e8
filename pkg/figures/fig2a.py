"""
Two anisotropic task covariances vs. zero initialisation
"""

import numpy as np

from figures.base_figure import BaseFigure, SweepPoint, k_grid, scaled
from model import CovarianceModel, TaskInstance
from montecarlo import INIT_PRETRAINED, INIT_ZERO, POLICY_THEORY_GENERAL, POLICY_THEORY_ZERO, TrialConfig


class CovarianceAlignmentFigure(BaseFigure):
    """
    Pretrained W* for Σβ₁ = diag(I, 0.5·I) and its swap Σβ₂, against W = 0.

    The test task is β = [1; 0.5·1], so Σβ₁ is the better aligned prior.
    """

    def __init__(self):
        super().__init__()
        self.figure_id = "fig2a"
        self.title = "Loss after TTT for pretrained weights from two task covariances"
        self.sweep_var = "gamma"
        self.n = 300
        self.d = 600

    def get_config(self):
        config = super().get_config()
        config.update({
            'n': self.n,
            'd': self.d,
            'k_range': [0, 4 * self.n],
            'task_cov_1': 'diag(I, 0.5 I) over two halves of d',
            'task_cov_2': 'diag(0.5 I, I) over two halves of d',
            'beta': '[ones; 0.5 ones] over two halves of d',
            'sigma': 0.0,
        })
        return config

    def sweep_points(self, scale, trials, seed):
        n, d = scaled(self.n, scale), scaled(self.d, scale)
        half = d // 2
        first = np.arange(d) < half
        task = TaskInstance(np.where(first, 1.0, 0.5))
        curves = (
            ("pretrained_cov1", INIT_PRETRAINED, POLICY_THEORY_GENERAL, np.where(first, 1.0, 0.5)),
            ("pretrained_cov2", INIT_PRETRAINED, POLICY_THEORY_GENERAL, np.where(first, 0.5, 1.0)),
            ("zero", INIT_ZERO, POLICY_THEORY_ZERO, np.where(first, 1.0, 0.5)),
        )
        points = []
        for label, init, policy, task_eigs in curves:
            cov = CovarianceModel.diagonal(np.ones(d), task_eigs)
            for k in k_grid(n):
                cfg = TrialConfig(cov=cov, task=task, n=n, k=k, init=init, eta_policy=policy,
                                  trials=trials, base_seed=seed)
                points.append(SweepPoint(k / d, label, cfg))
        return points
