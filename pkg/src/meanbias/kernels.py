"""Backend selection for the simulation kernel.

The compiled extension is used when it imports; setting ``MEANBIAS_PURE=1``
forces the pure-Python implementation.  Both expose ``Simulator`` and
``coupled_run`` with identical semantics.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from . import _pykernels
from .processes import Kind, ProcessSpec
from .rng import coin_threshold

_FORCE_PURE = os.environ.get("MEANBIAS_PURE", "").strip() not in ("", "0")

compiled = None
if not _FORCE_PURE:
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

backend = compiled if compiled is not None else _pykernels
BACKEND_NAME = "compiled" if compiled is not None else "python"

_KIND_CODES = {
    Kind.ONE_CHOICE: _pykernels.ONE,
    Kind.TWINNING: _pykernels.ONE,
    Kind.TWO_CHOICE: _pykernels.TWO,
    Kind.ONE_PLUS_BETA: _pykernels.BETA,
    Kind.MEAN_THINNING: _pykernels.MEAN,
    Kind.RELATIVE_THRESHOLD: _pykernels.RT,
    Kind.TWO_THINNING: _pykernels.ROUND_RT,
    Kind.K_RELATIVE_THRESHOLD: _pykernels.KRT,
    Kind.QUANTILE: _pykernels.QUANTILE,
    Kind.ONE_PLUS_ZETA: _pykernels.ZETA,
}


@dataclass(frozen=True)
class KernelParams:
    """A process specification lowered to plain integers for one ``n``."""

    kind: int
    coin_threshold: int
    offsets: tuple[int, ...]
    w_plus: int
    w_minus: int
    rank: int

    @classmethod
    def from_spec(cls, spec: ProcessSpec, n: int) -> KernelParams:
        coin = 0
        if spec.kind is Kind.ONE_PLUS_BETA:
            coin = coin_threshold(spec.beta)
        elif spec.kind is Kind.ONE_PLUS_ZETA:
            coin = coin_threshold(spec.zeta)
        rank = spec.quantile_rank(n) if spec.kind is Kind.QUANTILE else 0
        kind = _pykernels.QUANTILE_LOAD if spec.by_load else _KIND_CODES[spec.kind]
        return cls(
            kind=kind,
            coin_threshold=coin,
            offsets=tuple(spec.scaled_offsets(n)),
            w_plus=spec.weight_rule.w_plus,
            w_minus=spec.weight_rule.w_minus,
            rank=rank,
        )


def simulator(loads, total_weight, round, samples, params, bit_generator, good_lo=1, good_hi=0, pure=False):
    impl = _pykernels if pure else backend
    return impl.Simulator(loads, total_weight, round, samples, params, bit_generator, good_lo, good_hi)


def coupled_run(n: int, m: int, f: int, bit_generator, pure: bool = False) -> dict:
    impl = _pykernels if pure else backend
    return impl.coupled_run(n, m, f, bit_generator)
