#!/usr/bin/env python
# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
import csv
import json
import os
import subprocess
import sys
import tempfile
import textwrap
import unittest

import numpy as np

from pilotlib.checkpoint import checkpoint_manifest
from pilotlib.checkpoint import load_checkpoint
from pilotlib.export import read_samples_binary

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))
CONFIGS = os.path.join(REPO_ROOT, "test", "pilotlib", "configs")


class PilotgenBaseTestCase(unittest.TestCase):
    def setUp(self):
        self.out = tempfile.mkdtemp(prefix="test_pilotgen_")

    def invoke_pilotgen(self, *args, config="tiny.cfg", out=None):
        call_args = [sys.executable, "-m", "pilotgen", "--quiet", *args]
        if config is not None:
            call_args += ["--config", config if os.path.isabs(config) else os.path.join(CONFIGS, config)]
        call_args += ["--out", out or self.out]
        print(f"Running: {call_args}")
        return subprocess.run(call_args, capture_output=True, text=True, cwd=REPO_ROOT)

    def write_config(self, text):
        with tempfile.NamedTemporaryFile(mode="w", prefix="test_pilotgen_", suffix=".cfg", delete=False) as f:
            self.addCleanup(os.remove, f.name)
            f.write(textwrap.dedent(text))
        return f.name

    def read_csv(self, name, out=None):
        with open(os.path.join(out or self.out, name), encoding="utf-8") as f:
            first = f.readline()
            return first.rstrip("\n"), list(csv.reader(f))

    def manifest_line(self, out=None):
        with open(os.path.join(out or self.out, "manifest.json"), encoding="utf-8") as f:
            return "# manifest=" + json.load(f)["digest"]


class TestBaseline(PilotgenBaseTestCase):
    def test_missing_config(self):
        result = self.invoke_pilotgen("baseline", config=os.path.join(self.out, "missing.cfg"))
        self.assertEqual(result.returncode, 2)
        self.assertIn("missing.cfg", result.stderr)

    def test_no_output_without_valid_config(self):
        out = os.path.join(self.out, "new")
        result = self.invoke_pilotgen("baseline", config=os.path.join(self.out, "missing.cfg"), out=out)
        self.assertEqual(result.returncode, 2)
        self.assertFalse(os.path.exists(out))
        invalid = self.write_config(
            """
            [system]
            users = 0
            """
        )
        result = self.invoke_pilotgen("train", config=invalid, out=out)
        self.assertEqual(result.returncode, 2)
        self.assertFalse(os.path.exists(out))

    def test_strict_budgets_flag_names(self):
        for flag in ("--strict-paper", "--strict-budgets"):
            out = tempfile.mkdtemp(prefix="test_pilotgen_")
            result = self.invoke_pilotgen("baseline", flag, "--snr-list", "5", out=out)
            self.assertEqual(result.returncode, 0, result.stderr)
            with open(os.path.join(out, "manifest.json"), encoding="utf-8") as f:
                self.assertTrue(json.load(f)["flags"]["strict_budgets"])

    def test_invalid_config(self):
        path = self.write_config(
            """
            [system]
            users = 2
            bs_antennas = -1
            """
        )
        result = self.invoke_pilotgen("baseline", config=path)
        self.assertEqual(result.returncode, 2)
        self.assertIn(path + ":", result.stderr)

    def test_table(self):
        result = self.invoke_pilotgen("baseline")
        self.assertEqual(result.returncode, 0, result.stderr)
        first, rows = self.read_csv("baseline.csv")
        self.assertEqual(first, self.manifest_line())
        self.assertEqual(rows[0], ["snr_db", "mse_closed_form", "mse_monte_carlo", "normalized_flag", "samples"])
        self.assertEqual([(row[0], row[3]) for row in rows[1:]], [("5", "0"), ("5", "1"), ("25", "0"), ("25", "1")])

    def test_orthogonal_pilots_diagonal_formula(self):
        # a single user with X = sqrt(p/2) [I, I] has orthogonal pilot rows
        path = self.write_config(
            """
            [system]
            users = 1
            bs_antennas = 2
            user_antennas = 2
            pilot_length = 4

            [baseline]
            monte_carlo_samples = 1000
            """
        )
        result = self.invoke_pilotgen("baseline", "--snr-list", "10", config=path)
        self.assertEqual(result.returncode, 0, result.stderr)
        _, rows = self.read_csv("baseline.csv")
        sigma2 = 1.0 / (10.0 * 4)
        # every column of S carries energy p as written and p / 2 once normalized
        literal = 4 / (1 + 1.0 / sigma2)
        fair = 4 / (1 + 0.5 / sigma2)
        self.assertAlmostEqual(float(rows[1][1]) / literal, 1.0, places=7)
        self.assertAlmostEqual(float(rows[2][1]) / fair, 1.0, places=7)

    def test_unsupported_pilot_shape(self):
        path = self.write_config(
            """
            [system]
            users = 1
            bs_antennas = 2
            user_antennas = 2
            pilot_length = 3
            """
        )
        result = self.invoke_pilotgen("baseline", config=path)
        self.assertEqual(result.returncode, 2)
        self.assertIn("heuristic", result.stderr)


class TestTrain(PilotgenBaseTestCase):
    def test_outputs_and_determinism(self):
        result = self.invoke_pilotgen("train")
        self.assertEqual(result.returncode, 0, result.stderr)
        for name in ("manifest.json", "report.json", "curves.csv", "pilots.csv", "model.ckpt"):
            self.assertTrue(os.path.isfile(os.path.join(self.out, name)), name)
        _, rows = self.read_csv("curves.csv")
        self.assertEqual(len(rows), 3)

        second = tempfile.mkdtemp(prefix="test_pilotgen_")
        result = self.invoke_pilotgen("train", out=second)
        self.assertEqual(result.returncode, 0, result.stderr)
        for name in ("curves.csv", "pilots.csv"):
            self.assertEqual(self.read_csv(name), self.read_csv(name, second))

        self.assertEqual("# manifest=" + checkpoint_manifest(os.path.join(self.out, "model.ckpt")), self.manifest_line())

    def test_seed_override_changes_manifest(self):
        self.invoke_pilotgen("train")
        other = tempfile.mkdtemp(prefix="test_pilotgen_")
        self.invoke_pilotgen("train", "--seed", "11", out=other)
        self.assertNotEqual(self.manifest_line(), self.manifest_line(other))

    def test_zero_epochs(self):
        path = self.write_config(
            """
            [system]
            users = 2
            bs_antennas = 2
            user_antennas = 1
            pilot_length = 2

            [training]
            epochs = 0
            hidden_layers = 1
            hidden_width = 4
            test_samples = 10
            """
        )
        result = self.invoke_pilotgen("train", config=path)
        self.assertEqual(result.returncode, 0, result.stderr)
        _, rows = self.read_csv("curves.csv")
        self.assertEqual(rows, [["epoch", "train_mse", "test_mse"]])
        model, _ = load_checkpoint(os.path.join(self.out, "model.ckpt"))
        for X in model.pilots():
            self.assertAlmostEqual(float(np.sum(np.abs(X) ** 2)), 0.9)

    def test_divergence_exit_code(self):
        path = self.write_config(
            """
            [system]
            users = 1
            bs_antennas = 2
            user_antennas = 1
            pilot_length = 2

            [training]
            step_size = 1e300
            batch_size = 10
            train_samples = 20
            test_samples = 10
            epochs = 1
            hidden_layers = 1
            hidden_width = 4
            """
        )
        result = self.invoke_pilotgen("train", config=path)
        self.assertEqual(result.returncode, 3, result.stderr)
        self.assertTrue(os.path.isfile(os.path.join(self.out, "report.json")))


class TestSamplesAndEvaluate(PilotgenBaseTestCase):
    def test_binary_samples(self):
        result = self.invoke_pilotgen("samples", "--count", "5", "--format", "binary")
        self.assertEqual(result.returncode, 0, result.stderr)
        g, z, header = read_samples_binary(os.path.join(self.out, "samples.bin"))
        self.assertEqual(g.shape, (5, 4))
        self.assertEqual(z.shape, (5, 4))
        self.assertEqual("# manifest=" + header["manifest"], self.manifest_line())

    def test_bad_count(self):
        result = self.invoke_pilotgen("samples", "--count", "0")
        self.assertEqual(result.returncode, 2)

    def test_evaluate_and_estimates(self):
        self.assertEqual(self.invoke_pilotgen("train").returncode, 0)
        checkpoint = os.path.join(self.out, "model.ckpt")
        with open(os.path.join(self.out, "report.json"), encoding="utf-8") as f:
            report = json.load(f)

        result = self.invoke_pilotgen("evaluate", "--checkpoint", checkpoint)
        self.assertEqual(result.returncode, 0, result.stderr)
        self.assertAlmostEqual(float(result.stdout), report["per_epoch_test_mse"][-1], places=6)

        result = self.invoke_pilotgen("samples", "--count", "3", "--checkpoint", checkpoint)
        self.assertEqual(result.returncode, 0, result.stderr)
        _, rows = self.read_csv("estimates.csv")
        # 3 samples, 2 users with 2 coefficients each
        self.assertEqual(len(rows), 1 + 3 * 4)

    def test_evaluate_shape_mismatch(self):
        self.assertEqual(self.invoke_pilotgen("train").returncode, 0)
        checkpoint = os.path.join(self.out, "model.ckpt")
        result = self.invoke_pilotgen("evaluate", "--checkpoint", checkpoint, config="reference.cfg")
        self.assertEqual(result.returncode, 2)
        self.assertIn("do not match", result.stderr)


class TestSweep(PilotgenBaseTestCase):
    def test_one_point(self):
        result = self.invoke_pilotgen("sweep", "--snr-list", "10")
        self.assertEqual(result.returncode, 0, result.stderr)
        first, rows = self.read_csv("sweep.csv")
        self.assertEqual(first, self.manifest_line())
        self.assertEqual(rows[0][:4], ["snr_db", "mse_proposed", "mse_lmmse_literal", "mse_lmmse_fair"])
        self.assertEqual(len(rows), 2)

    def test_bad_snr_list(self):
        result = self.invoke_pilotgen("sweep", "--snr-list", "5,loud")
        self.assertEqual(result.returncode, 2)


class TestVerify(PilotgenBaseTestCase):
    def test_all_pass(self):
        result = subprocess.run(
            [sys.executable, "-m", "pilotgen", "verify", "--samples", "2000"],
            capture_output=True,
            text=True,
            cwd=REPO_ROOT,
        )
        self.assertEqual(result.returncode, 0, result.stdout)
        self.assertIn("7 properties have been successfully checked.", result.stdout)


if __name__ == "__main__":
    unittest.main()
