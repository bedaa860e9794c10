"""Deterministic fan-out of one master seed into named sub-seeds.

Every random choice in the pipeline (splitting, parameter init, batch
shuffling, oversampling, institution selection) draws from its own
sub-seed derived here, so toggling one stage never perturbs another and
runs reproduce bit-for-bit across processes and platforms.

Derivation: SHA-256 over the decimal master seed followed by each path
component prefixed with "/", taking the first 8 digest bytes as a
little-endian unsigned 64-bit integer.
"""

import hashlib


def derive_seed(master: int, *path: object) -> int:
    """Return the 64-bit sub-seed for ``path`` under ``master``.

    Components may be strings or integers; e.g.
    ``derive_seed(7, "round", 3, "institution", "AAA", "shuffle")``.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode("ascii"))
    for part in path:
        h.update(b"/")
        h.update(str(part).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")
