# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
print("MIMO pilot design tools")
msg = "Please select a tool to run with command:"
print(
    f"{msg}"
    f"\n{' '*int(len(msg)/2)}"
    f"Baseline, training, sweeps, sample export. (python -m pilotgen)"
    f"\n{' '*int(len(msg)/2)}"
    f"Numerical property checks. {' '*13} (python -m pilotcheck)"
)
