# Copyright 2026 The nbsep Authors
# License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
"""Narrow-band multichannel speech separation (C++ core)."""

from ._nbsep import (  # noqa: F401
    count_parameters,
    fpit,
    istft,
    separate,
    si_sdr,
    simulate,
    stft,
)
