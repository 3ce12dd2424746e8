"""
Non-monotonicity in α = n/d

Pretrained isotropic weights, one optimal TTT step, loss against α for a
few fixed γ = k/d.
"""

import numpy as np

from figures.base_figure import MIN_SCALED_DIM, BaseFigure, SweepPoint, scaled
from model import CovarianceModel, TaskInstance
from montecarlo import INIT_PRETRAINED, POLICY_THEORY_ISO, TrialConfig


class NonMonotonicFigure(BaseFigure):
    """Loss after TTT against α, one curve per γ"""

    def __init__(self, gammas=(1.0, 2.0, 100.0)):
        super().__init__()
        self.figure_id = "fig1a"
        self.title = "Non-monotonic loss after TTT in alpha = n/d"
        self.sweep_var = "alpha"
        self.n = 300
        self.alphas = np.round(np.arange(0.1, 4.0 + 1e-9, 0.1), 10)
        self.gammas = tuple(gammas)

    def get_config(self):
        config = super().get_config()
        config.update({
            'n': self.n,
            'alpha_min': float(self.alphas[0]),
            'alpha_max': float(self.alphas[-1]),
            'alpha_step': 0.1,
            'gammas': list(self.gammas),
            'sigma': 0.0,
            'beta': 'ones(d)',
            'covariances': 'identity',
        })
        return config

    def sweep_points(self, scale, trials, seed):
        n = scaled(self.n, scale)
        points = []
        for gamma in self.gammas:
            seen = set()
            for alpha in self.alphas:
                d = max(MIN_SCALED_DIM, int(round(n / alpha)))
                if d in seen:
                    continue
                seen.add(d)
                cfg = TrialConfig(
                    cov=CovarianceModel.isotropic(d),
                    task=TaskInstance(np.ones(d)),
                    n=n,
                    k=int(round(gamma * d)),
                    init=INIT_PRETRAINED,
                    eta_policy=POLICY_THEORY_ISO,
                    trials=trials,
                    base_seed=seed,
                )
                points.append(SweepPoint(n / d, f"pretrained_gamma_{gamma:g}", cfg))
        return points
