"""Business logic services for prune-lab.

Import the service modules directly (``from app.services import model_service``);
this package does not import them eagerly because the models package depends on
``app.services.exceptions``.
"""

__all__ = [
    "model_service",
    "task_service",
    "metrics_service",
    "pruning_service",
    "sensitivity_service",
    "sweep_service",
    "allocation_service",
    "run_service",
    "report_service",
]
