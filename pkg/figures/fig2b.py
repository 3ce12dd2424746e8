"""
Best- and worst-aligned task priors vs. zero initialisation
"""

import numpy as np

from figures.base_figure import BaseFigure, SweepPoint, k_grid, scaled
from model import CovarianceModel, TaskInstance
from montecarlo import INIT_PRETRAINED, INIT_ZERO, POLICY_THEORY_GENERAL, POLICY_THEORY_ZERO, TrialConfig


class AlignmentExtremesFigure(BaseFigure):
    """
    β = e₁ against Σβ = diag(1, 0, ..., 0) (best aligned) and
    Σβ = diag(0, 1, ..., 1) (worst aligned, βᵀΣββ = 0).
    """

    def __init__(self):
        super().__init__()
        self.figure_id = "fig2b"
        self.title = "Loss after TTT for best/worst aligned pretrained weights"
        self.sweep_var = "gamma"
        self.n = 250
        self.d = 500

    def get_config(self):
        config = super().get_config()
        config.update({
            'n': self.n,
            'd': self.d,
            'k_range': [0, 4 * self.n],
            'task_cov_best': 'diag(1, 0...)',
            'task_cov_worst': 'diag(0, 1...)',
            'beta': 'e1',
            'sigma': 0.0,
        })
        return config

    def sweep_points(self, scale, trials, seed):
        n, d = scaled(self.n, scale), scaled(self.d, scale)
        e1 = np.zeros(d)
        e1[0] = 1.0
        task = TaskInstance(e1)
        curves = (
            ("best_aligned", INIT_PRETRAINED, POLICY_THEORY_GENERAL, e1),
            ("worst_aligned", INIT_PRETRAINED, POLICY_THEORY_GENERAL, 1.0 - e1),
            ("zero", INIT_ZERO, POLICY_THEORY_ZERO, e1),
        )
        points = []
        for label, init, policy, task_eigs in curves:
            cov = CovarianceModel.diagonal(np.ones(d), task_eigs)
            for k in k_grid(n):
                cfg = TrialConfig(cov=cov, task=task, n=n, k=k, init=init, eta_policy=policy,
                                  trials=trials, base_seed=seed)
                points.append(SweepPoint(k / d, label, cfg))
        return points
