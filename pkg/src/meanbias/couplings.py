"""Shared-randomness couplings between processes.

``coupled_dominance_run`` drives three Two-Thinning runs from one stream of
sample pairs and checks, every round, that the run started from all-``f``
loads dominates the one started empty and equals Mean-Thinning shifted by
``f``.  ``onechoice_embedding_run`` splits each good round of a process into a
uniform allocation with probability ``k4`` and a residual allocation
otherwise, which embeds a One-Choice process inside it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .core import ContractViolation, LoadState, exact_fraction, floor_gap, gap
from .processes import ProcessSpec, bin_probabilities
from .rng import RandomSource, derive_seed, make_bit_generator


@dataclass(frozen=True)
class CouplingReport:
    f: int
    n: int
    m: int
    seed: int
    rounds_checked: int
    violation: dict | None
    max_empty_start: int
    max_shifted_start: int
    max_mean_thinning: int

    @property
    def ok(self) -> bool:
        return self.violation is None

    def as_dict(self) -> dict:
        return {**asdict(self), "ok": self.ok}


def coupled_dominance_run(f: int, n: int, m: int, seed: int, pure: bool = False) -> CouplingReport:
    """Run the three coupled processes for ``m`` rounds and report the first violation.

    All three use the same sample pair ``(j1, j2)`` each round:

    * threshold ``t/n + f`` from empty loads,
    * threshold ``t/n + f`` from loads all equal to ``f``,
    * Mean-Thinning from empty loads.

    Checked every round: the second run dominates the first bin by bin, the
    second equals the third plus ``f`` exactly, and the first run's maximum
    is at most the third's plus ``f``.
    """
    if f < 0 or n < 1 or m < 0:
        raise ContractViolation("need f >= 0, n >= 1 and m >= 0")
    out = kernels.coupled_run(n, m, f, make_bit_generator(seed), pure=pure)
    return CouplingReport(
        f=f,
        n=n,
        m=m,
        seed=seed,
        rounds_checked=out["rounds"],
        violation=out["violation"],
        max_empty_start=out["max_a"],
        max_shifted_start=out["max_b"],
        max_mean_thinning=out["max_c"],
    )


@dataclass(frozen=True)
class EmbeddingReport:
    process: str
    n: int
    m: int
    seed: int
    epsilon: Fraction
    k4: Fraction
    good_rounds: int
    embedded: int
    residual_deficit: int
    onechoice_max: int
    lam: float
    lemma_bound: float
    final_gap: Fraction
    final_floor_gap: int

    @property
    def bound_met(self) -> bool:
        """Whether the embedded One-Choice maximum reached ``(lam + sqrt(lam)/10) * ln n``."""
        return self.onechoice_max >= self.lemma_bound

    def as_dict(self) -> dict:
        d = asdict(self)
        d["bound_met"] = self.bound_met
        return d


def onechoice_embedding_run(
    spec: ProcessSpec, n: int, m: int, seed: int, epsilon, k4
) -> EmbeddingReport:
    """Run ``spec`` for ``m`` rounds with the One-Choice embedding in good rounds.

    A round is good when the mean quantile lies in ``[epsilon, 1 - epsilon]``.
    In a good round a ``Ber(k4)`` coin decides between a uniform bin (counted
    as an embedded One-Choice ball) and a bin drawn from the residual vector
    ``(p - k4/n) / (1 - k4)``; other rounds are ordinary process steps.
    Either way the marginal allocation law is the process's own.

    ``residual_deficit`` counts good rounds in which some ``p_i < k4/n``,
    i.e. the process did not actually satisfy the lower-bound condition there.
    """
    epsilon, k4 = exact_fraction(epsilon), exact_fraction(k4)
    if not 0 < epsilon < Fraction(1, 2):
        raise ContractViolation("epsilon must lie in (0, 1/2)")
    if not 0 < k4 <= 1:
        raise ContractViolation("k4 must lie in (0, 1]")
    lo, hi = math.ceil(epsilon * n), math.floor((1 - epsilon) * n)
    params = kernels.KernelParams.from_spec(spec, n)
    sim = kernels.simulator(np.zeros(n, dtype=np.int64), 0, 0, 0, params, make_bit_generator(seed))
    coupling = RandomSource(derive_seed(seed, 0))
    k4_float = float(k4)
    rule = spec.weight_rule
    ones = np.zeros(n, dtype=np.int64)
    good = embedded = deficit = 0
    for _ in range(m):
        if not lo <= sim.overloaded <= hi:
            sim.advance(1)
            continue
        good += 1
        if coupling.coin(k4):
            i = coupling.below(n)
            embedded += 1
            ones[i] += 1
        else:
            p = bin_probabilities(spec, sim.loads(), sim.total_weight, sim.round)
            residual = p - k4_float / n
            if residual.min() < -1e-12:
                deficit += 1
            residual = np.clip(residual, 0.0, None)
            cdf = np.cumsum(residual)
            i = min(int(np.searchsorted(cdf, coupling.uniform() * cdf[-1], side="right")), n - 1)
        underloaded = int(sim.loads()[i]) * n < sim.total_weight
        sim.allocate(i, rule.weight(underloaded))

    final = LoadState(tuple(int(x) for x in sim.loads()), sim.total_weight, sim.round)
    lam = embedded / (n * math.log(n)) if n > 1 else 0.0
    return EmbeddingReport(
        process=spec.text,
        n=n,
        m=m,
        seed=seed,
        epsilon=epsilon,
        k4=k4,
        good_rounds=good,
        embedded=embedded,
        residual_deficit=deficit,
        onechoice_max=int(ones.max()) if n else 0,
        lam=lam,
        lemma_bound=(lam + math.sqrt(lam) / 10) * math.log(n) if n > 1 else 0.0,
        final_gap=gap(final),
        final_floor_gap=floor_gap(final),
    )
