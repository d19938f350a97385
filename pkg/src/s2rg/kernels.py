"""Selects the episode kernel backend at import time.

The compiled extension is used when it was built; setting ``S2RG_PURE_PYTHON=1``
forces the pure-Python implementation.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_force_python = os.environ.get("S2RG_PURE_PYTHON", "") not in ("", "0")
BACKEND = "compiled" if _compiled is not None and not _force_python else "python"
block_episode = BACKENDS[BACKEND].block_episode

POLICY_MLP = _kernels_py.POLICY_MLP
POLICY_PD = _kernels_py.POLICY_PD


def get(name: str):
    """Return the ``block_episode`` function of a named backend."""
    try:
        return BACKENDS[name].block_episode
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
