"""Factories wiring repositories into services for the command handlers."""

from pathlib import Path

from quasirand.models.models import SolverConfig
from quasirand.repositories.repositories import ObservedDataRepository, ResultRepository
from quasirand.services.services import (
    EstimationService,
    NumericalStudyService,
    SimulationService,
    VerificationService,
)
from quasirand.services.theory import cov_Iz_exact


# Repository dependencies
def get_result_repository(out: Path) -> ResultRepository:
    """
    Get a ResultRepository writing under ``out``.

    Args:
        out: Output directory, created when missing

    Returns:
        A ResultRepository instance
    """
    return ResultRepository(base_path=out)


def get_observed_data_repository(convenience: Path, reference: Path) -> ObservedDataRepository:
    """
    Get an ObservedDataRepository for a pair of input files.

    Args:
        convenience: Convenience-sample CSV
        reference: Reference-sample CSV

    Returns:
        An ObservedDataRepository instance
    """
    return ObservedDataRepository(convenience_path=convenience, reference_path=reference)


# Service dependencies
def get_estimation_service(convenience: Path, reference: Path, out: Path | None = None) -> EstimationService:
    """
    Get an EstimationService instance.

    Args:
        convenience: Convenience-sample CSV
        reference: Reference-sample CSV
        out: Optional output directory for estimate.json

    Returns:
        An EstimationService instance
    """
    return EstimationService(
        data_repo=get_observed_data_repository(convenience, reference),
        result_repo=get_result_repository(out) if out is not None else None,
        solver=SolverConfig.from_settings(),
    )


def get_simulation_service(out: Path) -> SimulationService:
    """
    Get a SimulationService instance.

    Args:
        out: Output directory for the CSV files

    Returns:
        A SimulationService instance
    """
    return SimulationService(result_repo=get_result_repository(out), solver=SolverConfig.from_settings())


def get_numerical_study_service(out: Path | None) -> NumericalStudyService:
    """
    Get a NumericalStudyService instance.

    Args:
        out: Output directory for numstudy.csv, or None to skip writing

    Returns:
        A NumericalStudyService instance
    """
    return NumericalStudyService(result_repo=get_result_repository(out) if out is not None else None)


def get_verification_service(n_max: int, seed: int = 0) -> VerificationService:
    """
    Get a VerificationService checking the closed-form indicator covariance.

    Args:
        n_max: Largest population size enumerated by brute force
        seed: Seed of the random gradient-check instances

    Returns:
        A VerificationService instance
    """
    return VerificationService(exact_fn=cov_Iz_exact, n_max=n_max, seed=seed)
