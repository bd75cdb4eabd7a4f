"""Small shared helpers: canonical JSON, hashing, RNG state capture, atomic writes."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from typing import Any

import numpy as np


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and full float precision.

    repr-based float formatting round-trips exactly, so two structurally
    equal objects always produce identical bytes (used for hashing and
    for bit-reproducible output files).
    """
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def stable_hash(obj: Any) -> str:
    return sha256_hex(canonical_json(obj))


def new_rng(seed) -> np.random.Generator:
    """Fresh PCG64 generator; seed may be an int or a tuple of ints (stream split)."""
    return np.random.default_rng(np.random.PCG64(seed))


def rng_state(gen: np.random.Generator) -> dict:
    """JSON-safe snapshot of a PCG64 generator (128-bit ints as hex strings)."""
    st = gen.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": format(st["state"]["state"], "x"),
        "inc": format(st["state"]["inc"], "x"),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def restore_rng(snapshot: dict) -> np.random.Generator:
    if snapshot.get("bit_generator") != "PCG64":
        raise ValueError(f"unsupported bit generator: {snapshot.get('bit_generator')}")
    bg = np.random.PCG64(0)
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(snapshot["state"], 16), "inc": int(snapshot["inc"], 16)},
        "has_uint32": int(snapshot["has_uint32"]),
        "uinteger": int(snapshot["uinteger"]),
    }
    return np.random.Generator(bg)


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write via temp file + rename so readers never see partial content."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sign_test_pvalue(wins: int, losses: int) -> float:
    """One-sided exact sign test: P(X >= wins) for X ~ Binomial(wins+losses, 1/2).

    Ties are expected to be discarded by the caller.
    """
    from scipy.stats import binomtest

    n = wins + losses
    if n == 0:
        return 1.0
    return float(binomtest(wins, n, 0.5, alternative="greater").pvalue)
