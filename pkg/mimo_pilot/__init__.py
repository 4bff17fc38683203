# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
__version__ = "0.1.0"
