# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np
from pyparsing import ParseResults
from pyparsing import lineno

from .config_grammar import ConfigGrammar
from .core import QUIET
from .core import ConfigError
from .core import Diagnostics
from .core import PilotlibError
from .mimo_model import SystemConfig
from .mimo_model import exponential_covariances
from .mimo_model import iid_covariances
from .sic_estimator import SIC_ORDER_INDEX
from .sic_estimator import SIC_ORDER_SNR
from .trainer import TrainConfig

TRUE_VALUES = ("1", "true", "yes", "on")
FALSE_VALUES = ("0", "false", "no", "off")


def _int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"'{text}' is not an integer")
    return int(value)


def _float(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(f"'{text}' is not a finite number")
    return value


def _bool(text: str) -> bool:
    if text.lower() in TRUE_VALUES:
        return True
    if text.lower() in FALSE_VALUES:
        return False
    raise ValueError(f"'{text}' is not a boolean (use true or false)")


def _list(convert: Callable[[str], Any]) -> Callable[[str], Tuple[Any, ...]]:
    def parse(text: str) -> Tuple[Any, ...]:
        items = [item.strip() for item in text.split(",")]
        if not all(items):
            raise ValueError(f"'{text}' is not a comma-separated list")
        return tuple(convert(item) for item in items)

    return parse


def _sic_order(text: str):
    if text in (SIC_ORDER_SNR, SIC_ORDER_INDEX):
        return text
    # 1-based user indices in the file, 0-based internally
    return tuple(k - 1 for k in _list(_int)(text))


# section -> key -> (converter, required)
SCHEMA: Dict[str, Dict[str, Tuple[Callable[[str], Any], bool]]] = {
    "system": {
        "users": (_int, True),
        "bs_antennas": (_int, True),
        "user_antennas": (_list(_int), True),
        "pilot_length": (_int, True),
        "power_budgets": (_list(_float), False),
        "noise_variance": (_float, False),
        "correlation": (_float, False),
    },
    "training": {
        "step_size": (_float, False),
        "batch_size": (_int, False),
        "train_samples": (_int, False),
        "test_samples": (_int, False),
        "epochs": (_int, False),
        "train_snr_db": (_float, False),
        "snr_offsets_db": (_list(_float), False),
        "hidden_layers": (_int, False),
        "hidden_width": (_int, False),
        "pilot_init": (str, False),
        "use_sic": (_bool, False),
        "sic_order": (_sic_order, False),
        "divergence_factor": (_float, False),
        "eval_batch_size": (_int, False),
    },
    "baseline": {
        "monte_carlo_samples": (_int, False),
        "snr_list_db": (_list(_float), False),
    },
    "run": {
        "seed": (_int, False),
        "strict_budgets": (_bool, False),
        "fair_baseline": (_bool, False),
        "cross_snr": (_bool, False),
    },
}

# [run] keys live on TrainConfig as well
RUN_KEYS = ("seed", "strict_budgets", "fair_baseline", "cross_snr")


@dataclass
class Entry:
    value: Any
    line: int


@dataclass
class ExperimentConfig:
    """Everything one configuration file describes. `system` is the base system before the SNR model."""

    system: SystemConfig
    train: TrainConfig
    correlation: float = 0.0
    monte_carlo_samples: int = 10**5
    snr_list_db: Tuple[float, ...] = field(default_factory=tuple)
    path: Optional[str] = None

    def covariances(self, system: Optional[SystemConfig] = None) -> List[np.ndarray]:
        system = system or self.system
        if self.correlation == 0.0:
            return iid_covariances(system)
        return exponential_covariances(system, self.correlation)

    def snr_points(self) -> Tuple[float, ...]:
        return self.snr_list_db or (self.train.train_snr_db,)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        snr_list_db: Optional[Tuple[float, ...]] = None,
        strict_budgets: bool = False,
        fair_baseline: bool = False,
    ) -> "ExperimentConfig":
        """Command-line flags win over the file. Boolean flags can only switch modes on."""
        train = self.train
        if seed is not None:
            train = replace(train, seed=seed)
        if strict_budgets:
            train = replace(train, strict_budgets=True)
        if fair_baseline:
            train = replace(train, fair_baseline=True)
        return replace(self, train=train, snr_list_db=tuple(snr_list_db) if snr_list_db else self.snr_list_db)

    def as_dict(self) -> dict:
        return {
            "system": self.system.as_dict(),
            "train": self.train.as_dict(),
            "correlation": self.correlation,
            "monte_carlo_samples": self.monte_carlo_samples,
            "snr_list_db": list(self.snr_list_db),
        }


class ConfigParser:
    """
    Collects the sections and assignments reported by the grammar's parse actions and turns them into
    an ExperimentConfig.
    """

    def __init__(self, path: str, diagnostics: Diagnostics = QUIET) -> None:
        self.path = path
        self.diagnostics = diagnostics
        self.grammar = ConfigGrammar(self)
        self.sections: Dict[str, Dict[str, Entry]] = {}
        self.section_lines: Dict[str, int] = {}
        self.current: Optional[str] = None

    ############################
    # Parse Actions
    ############################
    def parse_section(self, s: str, loc: int, parsed_section: ParseResults) -> None:
        name = parsed_section[0]
        line = lineno(loc, s)
        if name not in SCHEMA:
            raise ConfigError(self.path, line, f"unknown section [{name}], expected one of {', '.join(SCHEMA)}")
        if name in self.sections:
            raise ConfigError(self.path, line, f"section [{name}] appears twice")
        self.sections[name] = {}
        self.section_lines[name] = line
        self.current = name

    def parse_assignment(self, s: str, loc: int, parsed_assignment: ParseResults) -> None:
        key = parsed_assignment[0]
        text = parsed_assignment[1].strip()
        line = lineno(loc, s)
        if self.current is None:
            raise ConfigError(self.path, line, f"'{key}' is set outside of any section")
        schema = SCHEMA[self.current]
        if key not in schema:
            self.diagnostics.warn(f"ignoring unknown key '{key}' in section [{self.current}]", self.path, line)
            return
        if key in self.sections[self.current]:
            raise ConfigError(self.path, line, f"'{key}' is set twice in section [{self.current}]")
        if not text:
            raise ConfigError(self.path, line, f"'{key}' has no value")
        convert, _ = schema[key]
        try:
            value = convert(text)
        except ValueError as e:
            raise ConfigError(self.path, line, f"invalid value for '{key}': {e}")
        self.sections[self.current][key] = Entry(value, line)

    ############################
    # Conversion
    ############################
    def _line_of(self, section: str, key: Optional[str] = None) -> Optional[int]:
        entries = self.sections.get(section, {})
        if key is not None and key in entries:
            return entries[key].line
        return self.section_lines.get(section)

    def _values(self, section: str) -> Dict[str, Any]:
        return {key: entry.value for key, entry in self.sections.get(section, {}).items()}

    def _broadcast(self, values: Dict[str, Any], key: str, K: int) -> Optional[Tuple[Any, ...]]:
        if key not in values:
            return None
        items = values[key]
        if len(items) == 1:
            return items * K
        if len(items) != K:
            raise ConfigError(self.path, self._line_of("system", key), f"'{key}' needs 1 or {K} entries, got {len(items)}")
        return items

    def build(self) -> ExperimentConfig:
        if "system" not in self.sections:
            raise ConfigError(self.path, None, "missing [system] section")
        system_values = self._values("system")
        for key, (_, required) in SCHEMA["system"].items():
            if required and key not in system_values:
                raise ConfigError(self.path, self._line_of("system"), f"missing required key '{key}' in [system]")

        K = system_values["users"]
        try:
            system = SystemConfig(
                K=K,
                N=system_values["bs_antennas"],
                antennas_per_user=self._broadcast(system_values, "user_antennas", K),
                L=system_values["pilot_length"],
                power_budgets=self._broadcast(system_values, "power_budgets", K) or (1.0,) * K,
                noise_variance=system_values.get("noise_variance", 1.0),
            )
        except PilotlibError as e:
            raise ConfigError(self.path, self._line_of("system"), str(e))
        correlation = system_values.get("correlation", 0.0)
        if not 0.0 <= correlation < 1.0:
            raise ConfigError(self.path, self._line_of("system", "correlation"), "correlation must lie in [0, 1)")

        train_values = self._values("training")
        train_values.update(self._values("run"))
        try:
            train = TrainConfig(**train_values)
            train.offsets(K)
            if not isinstance(train.sic_order, str) and sorted(train.sic_order) != list(range(K)):
                raise ValueError(f"sic_order must list every user 1..{K} exactly once")
        except (PilotlibError, ValueError) as e:
            raise ConfigError(self.path, self._line_of("training"), str(e))

        baseline_values = self._values("baseline")
        monte_carlo_samples = baseline_values.get("monte_carlo_samples", 10**5)
        if monte_carlo_samples < 1:
            raise ConfigError(
                self.path, self._line_of("baseline", "monte_carlo_samples"), "monte_carlo_samples must be positive"
            )
        return ExperimentConfig(
            system=system,
            train=train,
            correlation=correlation,
            monte_carlo_samples=monte_carlo_samples,
            snr_list_db=baseline_values.get("snr_list_db", ()),
            path=self.path,
        )

    def parse(self) -> ExperimentConfig:
        self.grammar(self.path)
        return self.build()


def load_config(path: str, diagnostics: Diagnostics = QUIET) -> ExperimentConfig:
    return ConfigParser(path, diagnostics).parse()
