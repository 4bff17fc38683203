# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
from .mimo_model import SystemConfig  # noqa F401
from .trainer import TrainConfig  # noqa F401
from .trainer import train  # noqa F401
