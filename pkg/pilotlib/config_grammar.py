# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
from typing import TYPE_CHECKING

from pyparsing import LineEnd
from pyparsing import ParseException
from pyparsing import ParseResults
from pyparsing import Regex
from pyparsing import Suppress
from pyparsing import Word
from pyparsing import ZeroOrMore
from pyparsing import alphanums
from pyparsing import alphas

from .core import ConfigError

if TYPE_CHECKING:
    from .config_parser import ConfigParser


class ConfigGrammar:
    """
    Grammar of the experiment configuration files: "[section]" headers followed by "key = value" lines.
    Parse actions live in the ConfigParser class, so the grammar only describes the syntax.
    """

    def __init__(self, parser: "ConfigParser") -> None:
        self.init_grammar(parser)

    def init_grammar(self, parser: "ConfigParser") -> None:
        name = Word(alphas, alphanums + "_")
        line_end = Suppress(LineEnd())

        # [system]
        section = (Suppress("[") + name + Suppress("]") + line_end).set_parse_action(parser.parse_section)

        # key = value; the value is the rest of the line (possibly empty) and is interpreted by the parser
        value = Regex(r"[^\n]*").leave_whitespace()
        assignment = (name + Suppress("=") + value + line_end).set_parse_action(parser.parse_assignment)

        self.root = ZeroOrMore(section | assignment)

    def preprocess_file(self, path: str) -> str:
        """
        Removes full-line and inline "#" comments and trailing whitespace. Lines are kept (blank) so that
        line numbers in diagnostics match the original file.
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except OSError as e:
            raise ConfigError(path, None, f"cannot read config file: {e.strerror}")
        except UnicodeDecodeError as e:
            raise ConfigError(path, None, f"config file is not UTF-8 text: {e}")

        content = ""
        for line in lines:
            line = line.split("#", 1)[0].replace("\t", "    ").rstrip()
            content += line + "\n"
        return content

    def __call__(self, path: str) -> ParseResults:
        content = self.preprocess_file(path)
        if not content or content.isspace():
            return ParseResults([])
        try:
            return self.root.parse_string(content, parse_all=True)
        except ParseException as e:
            raise ConfigError(path, e.lineno, f"syntax error near '{e.line.strip()}'")
