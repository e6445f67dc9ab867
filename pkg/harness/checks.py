"""Randomized oracle checks over exactly computable worlds (the `oracle-check` subcommand)."""

from logging import getLogger
from typing import List

import numpy as np
from pydantic import BaseModel, Field

from core.rng import derive_seed, stream
from oracle.enumeration import enumerate_crossfold_expectation, plug_in_bias, population_risk
from oracle.world import (
    DiscreteWorld,
    approximate_identification_check,
    check_id_equiv,
    mixed_bias_check,
    random_world,
    riesz_and_nuisances,
)

logger = getLogger(__name__)

ID_WORLDS = 1000
UNBIASED_TOL = 1e-12
PLUG_IN_TOL = 1e-10
BOUND_TOL = 1e-10


class CheckResult(BaseModel):
    name: str
    cases: int = 0
    failures: int = 0
    worst: float = Field(0.0, description="largest violation (or gap) seen")

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, violation: float, tol: float) -> None:
        self.cases += 1
        self.worst = max(self.worst, violation)
        if violation > tol:
            self.failures += 1


class CheckReport(BaseModel):
    worlds: int
    id_worlds: int
    seed: int
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


def _small_world(seed: int, i: int, **kwargs: bool) -> DiscreteWorld:
    rng = stream(seed, i)
    return random_world(derive_seed(seed, i), K=int(rng.integers(1, 4)), M=int(rng.integers(2, 4)), **kwargs)


def check_crossfold_unbiasedness(worlds: int, seed: int, functions: int = 20) -> List[CheckResult]:
    """E[cross-fold risk] = R(h) and E[plug-in risk] = R(h) + plug-in bias, over small enumerable worlds."""
    crossfold = CheckResult(name="crossfold-unbiased")
    plug_in = CheckResult(name="plug-in-bias")
    for i in range(worlds):
        w = _small_world(seed, i)
        rng = stream(seed, i, 1)
        n_per_fold = int(rng.integers(1, 3))
        for _ in range(functions):
            h = rng.normal(size=w.M)
            expected = enumerate_crossfold_expectation(w, h, n_per_fold)
            risk = population_risk(w, h)
            crossfold.record(abs(expected.crossfold - risk), UNBIASED_TOL)
            plug_in.record(abs(expected.plug_in - risk - plug_in_bias(w, h, 2 * n_per_fold)), PLUG_IN_TOL)
    return [crossfold, plug_in]


def check_identification_equivalence(worlds: int, seed: int) -> CheckResult:
    """rank(T') == rank(T'T), half of the worlds with a duplicated arm."""
    result = CheckResult(name="id-equiv")
    for i in range(worlds):
        rng = stream(seed, i, 2)
        w = random_world(derive_seed(seed, i, 2), K=int(rng.integers(1, 6)), M=int(rng.integers(1, 9)), duplicate_arms=bool(i % 2))
        result.record(0.0 if check_id_equiv(w) else 1.0, 0.5)
    return result


def check_mixed_bias(worlds: int, seed: int, perturbations: int = 100) -> CheckResult:
    """|E psi(h, xi) - theta*| <= ||T(xi - xi_K)|| ||T(h - h_K)|| on identified worlds."""
    result = CheckResult(name="mixed-bias")
    for i in range(worlds):
        w = _small_world(seed, i, novel_in_span=True)
        nuisances = riesz_and_nuisances(w)
        if nuisances.xi is None:
            continue
        rng = stream(seed, i, 3)
        for _ in range(perturbations):
            h = nuisances.h_dagger + rng.normal(size=w.M)
            xi = nuisances.xi + rng.normal(size=w.M)
            lhs, rhs = mixed_bias_check(w, h, xi)
            result.record(lhs - rhs, BOUND_TOL)
    return result


def check_approximate_identification(worlds: int, seed: int) -> CheckResult:
    """|E psi(h_dagger, q_K) - theta*| <= eps_K * delta_K on worlds that need not be identified."""
    result = CheckResult(name="approximate-id")
    for i in range(worlds):
        w = _small_world(seed, i)
        lhs, rhs = approximate_identification_check(w)
        result.record(lhs - rhs, BOUND_TOL)
    return result


def run_checks(worlds: int, seed: int = 0, id_worlds: int = ID_WORLDS) -> CheckReport:
    """Every exact-world check; identification equivalence runs on `id_worlds` worlds, the others on `worlds`."""
    checks = [
        *check_crossfold_unbiasedness(worlds, seed),
        check_identification_equivalence(id_worlds, seed),
        check_mixed_bias(worlds, seed),
        check_approximate_identification(worlds, seed),
    ]
    for check in checks:
        log = logger.info if check.passed else logger.error
        log(f"{check.name}: {check.cases} cases, {check.failures} failures, worst {check.worst:.3g}")
    return CheckReport(worlds=worlds, id_worlds=id_worlds, seed=seed, checks=checks)
