# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
import sys

from .core import main

if __name__ == "__main__":
    sys.exit(main())
