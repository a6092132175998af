"""Desk-scale autonomous racing with an evidential world model.

Subpackages:
    sim        -- deterministic 2D racing simulator (numba-accelerated kernels)
    expert     -- scripted demonstrator with recovery-noise injection
    store      -- on-disk episode dataset with collision back-labeling
    evidential -- NIG regression and evidence-based classification losses
    world_model-- action-conditioned recurrent predictor with uncertainties
    policy     -- Gaussian control policy: imitation + model-based refinement
    runner     -- training orchestration, evaluation metrics, experiments
    teleop     -- websocket bridge for the browser cockpit
"""

__version__ = "0.1.0"
