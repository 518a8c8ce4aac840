# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.


"""Unit tests config."""

import os

# Serial kernels only.
os.environ.setdefault("MODEPOOL_NUMBA_PARALLEL", "0")
