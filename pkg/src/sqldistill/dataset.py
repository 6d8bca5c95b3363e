"""Final dataset assembly: mix accepted synthetic records with bootstrap data.

A small trusted bootstrap set is blended into the synthetic output to
counter generator bias and model collapse; the fraction is configurable
(default 0.1) because no canonical ratio exists.
"""

from __future__ import annotations

import random

from .errors import EmptyInputError, InvariantError
from .types import SftRecord, SftSource

DEFAULT_MIX_RATIO = 0.1


def choose_bootstrap_count(n_synthetic: int, n_bootstrap: int, mix_ratio: float) -> int:
    """Number of bootstrap records so their output fraction ~= mix_ratio (+/- 1 record)."""
    if mix_ratio >= 1.0:
        return n_bootstrap
    target = round(mix_ratio * n_synthetic / (1.0 - mix_ratio))
    return min(n_bootstrap, target)


def assemble_sft_dataset(
    accepted: list[SftRecord],
    bootstrap: list[SftRecord],
    mix_ratio: float = DEFAULT_MIX_RATIO,
    seed: int = 0,
) -> list[SftRecord]:
    """Interleave synthetic records with bootstrap records, seeded and reproducible.

    The output holds every accepted synthetic record plus a bootstrap
    subset sized so the bootstrap fraction approximates mix_ratio; order
    is a seeded shuffle, identical across runs with the same seed.
    """
    if not 0 < mix_ratio <= 1:
        raise InvariantError(f"mix_ratio must be in (0, 1], got {mix_ratio}")
    if not accepted:
        raise EmptyInputError("no accepted synthetic records to assemble")
    for record in accepted:
        if record.source is not SftSource.SYNTHETIC:
            raise InvariantError("accepted records must carry source=synthetic")
    for record in bootstrap:
        if record.source is not SftSource.BOOTSTRAP:
            raise InvariantError("bootstrap records must carry source=bootstrap")

    rng = random.Random(seed)
    count = choose_bootstrap_count(len(accepted), len(bootstrap), mix_ratio)
    pool = list(bootstrap)
    rng.shuffle(pool)
    combined = list(accepted) + pool[:count]
    rng.shuffle(combined)
    return combined
