# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
import os

# Has to run before numpy is imported.
_num_threads = os.environ.get("PILOTGEN_NUM_THREADS")
if _num_threads:
    for _name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_name, _num_threads)
