"""End-to-end checks of the aspectmf command line tool.

usage: cli_tests.py <aspectmf binary> <source dir>
"""

import json
import math
import os
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

BIN = None
SRC = None


def run(*args, env=None, check=True):
    full_env = dict(os.environ)
    full_env.pop("ASPECTMF_OUT", None)
    if env:
        full_env.update(env)
    p = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True, env=full_env)
    if check and p.returncode != 0:
        raise AssertionError(f"{args} exited {p.returncode}\n{p.stdout}\n{p.stderr}")
    return p


def read_tsv(path):
    lines = Path(path).read_text().splitlines()
    rows = [l.split("\t") for l in lines if l.strip() and not l.startswith("#")]
    head, body = rows[0], rows[1:]
    return [dict(zip(head, r)) for r in body]


class Cli(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls.tmp.name)
        cls.data = cls.root / "synth"
        run("synth", "--out-dir", cls.data, "--users", 100, "--trust-density", 0.02, "--seed", 3)
        cls.ratings = cls.data / "ratings.txt"
        cls.trust = cls.data / "trust.txt"

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def out(self, name):
        return self.root / name

    def test_synth_is_deterministic(self):
        run("synth", "--out-dir", self.out("s2"), "--users", 100, "--trust-density", 0.02, "--seed", 3)
        for f in ("ratings.txt", "trust.txt", "truth.model"):
            self.assertEqual((self.data / f).read_bytes(), (self.out("s2") / f).read_bytes(), f)

    def test_synth_edge_count(self):
        lines = self.trust.read_text().splitlines()
        edges = sum(1 for l in lines if l.strip() and not l.startswith("#"))
        expected = 100 * 99 * 0.02
        sigma = math.sqrt(expected * (1 - 0.02))
        self.assertLess(abs(edges - expected), 3 * sigma)

    def test_zero_learning_rate_keeps_the_model(self):
        run("train", "--out-dir", self.out("g1"), "--ratings", self.ratings, "--trust", self.trust,
            "--gamma-all", 0, "--max-iter", 1)
        run("train", "--out-dir", self.out("g3"), "--ratings", self.ratings, "--trust", self.trust,
            "--gamma-all", 0, "--max-iter", 3)
        self.assertEqual((self.out("g1") / "model.txt").read_bytes(),
                         (self.out("g3") / "model.txt").read_bytes())
        losses = {r["loss"] for r in read_tsv(self.out("g3") / "report.tsv")}
        self.assertEqual(len(losses), 1)

    def test_training_lowers_loss(self):
        run("train", "--out-dir", self.out("t"), "--ratings", self.ratings, "--trust", self.trust,
            "--max-iter", 5)
        loss = [float(r["loss"]) for r in read_tsv(self.out("t") / "report.tsv")]
        self.assertEqual(len(loss), 5)
        self.assertLess(loss[-1], loss[0])

    def test_missing_trust_warns(self):
        p = run("train", "--out-dir", self.out("nt"), "--ratings", self.ratings, "--max-iter", 1)
        self.assertIn("warning", p.stderr)
        m = json.loads((self.out("nt") / "manifest.json").read_text())
        self.assertTrue(m["warnings"])

    def test_usage_errors(self):
        p = run("train", "--out-dir", self.out("bad"), "--ratings", self.ratings, "--set", "bogus=1",
                check=False)
        self.assertEqual(p.returncode, 1)
        self.assertIn("bogus", p.stderr)
        p = run("train", "--out-dir", self.out("bad2"), "--ratings", self.ratings, "--bogus", check=False)
        self.assertEqual(p.returncode, 1)
        p = run("train", "--out-dir", self.out("bad3"), "--ratings", self.ratings, "--aspects", "xyz",
                check=False)
        self.assertEqual(p.returncode, 1)

    def test_eval_on_empty_test_fails(self):
        run("train", "--out-dir", self.out("m"), "--ratings", self.ratings, "--max-iter", 1)
        empty = self.out("empty.txt")
        empty.write_text("")
        p = run("eval", "--out-dir", self.out("e"), "--ratings", self.ratings,
                "--model", self.out("m") / "model.txt", "--test", empty, check=False)
        self.assertNotEqual(p.returncode, 0)

    def test_eval_on_split(self):
        run("train", "--out-dir", self.out("ms"), "--ratings", self.ratings, "--trust", self.trust,
            "--max-iter", 5, "--train-fraction", 0.8, "--split-seed", 2)
        p = run("eval", "--out-dir", self.out("es"), "--ratings", self.ratings, "--trust", self.trust,
                "--model", self.out("ms") / "model.txt", "--train-fraction", 0.8, "--split-seed", 2,
                "--json")
        files = list(self.out("es").glob("*.json"))
        self.assertTrue(any(f.name != "manifest.json" for f in files), p.stdout)

    def test_gradcheck(self):
        p = run("gradcheck", "--out-dir", self.out("gc"))
        self.assertIn("pass", p.stdout)
        rows = read_tsv(self.out("gc") / "gradcheck.tsv")
        self.assertTrue(rows)

    def test_sweep_tables(self):
        run("sweep", "--out-dir", self.out("w"), "--ratings", self.ratings, "--trust", self.trust,
            "--combinations", "b,f,bffv", "--seeds", "1,2,3", "--max-iter", 5)
        cells = read_tsv(self.out("w") / "cells.tsv")
        self.assertEqual(len(cells), 9)
        self.assertEqual({c["combination"] for c in cells}, {"b", "f", "bffv"})
        summary = read_tsv(self.out("w") / "summary.tsv")
        rmse = [r for r in summary if r["metric"] == "rmse" and r["slice"] == "all"]
        self.assertEqual(len(rmse), 3)
        for r in rmse:
            vals = [float(c["rmse_all"]) for c in cells if c["combination"] == r["combination"]]
            self.assertAlmostEqual(float(r["mean"]), sum(vals) / 3, places=8)
        self.assertTrue((self.out("w") / "ttests.tsv").exists())

    def test_sweep_tests_against_static(self):
        run("sweep", "--out-dir", self.out("ws"), "--ratings", self.ratings, "--trust", self.trust,
            "--combinations", "static,bffv", "--seeds", "1,2,3", "--max-iter", 3)
        tests = read_tsv(self.out("ws") / "ttests.tsv")
        self.assertTrue(tests)
        self.assertEqual({t["combination"] for t in tests}, {"bffv"})
        for t in tests:
            self.assertTrue(0.0 <= float(t["p"]) <= 1.0)

    def test_reruns_are_byte_identical(self):
        for d in ("r1", "r2"):
            run("sweep", "--out-dir", self.out(d), "--ratings", self.ratings, "--trust", self.trust,
                "--combinations", "static,bffv", "--seeds", "1,2", "--max-iter", 3)
        for f in ("cells.tsv", "summary.tsv", "ttests.tsv"):
            self.assertEqual((self.out("r1") / f).read_bytes(), (self.out("r2") / f).read_bytes(), f)

    def test_manifest(self):
        run("train", "--out-dir", self.out("mf"), "--ratings", self.ratings, "--trust", self.trust,
            "--max-iter", 2, "--seed", 9)
        m = json.loads((self.out("mf") / "manifest.json").read_text())
        self.assertEqual(m["command"], "train")
        self.assertEqual(m["exit_code"], 0)
        self.assertIn("config", m)
        self.assertTrue(m["inputs"])
        self.assertTrue(m["outputs"])

    def test_out_dir_from_environment(self):
        target = self.out("env")
        run("gradcheck", env={"ASPECTMF_OUT": str(target)})
        self.assertTrue((target / "manifest.json").exists())
        self.assertTrue((target / "gradcheck.tsv").exists())

    def test_stats_on_sample(self):
        data = Path(SRC) / "tests" / "data"
        run("stats", "--out-dir", self.out("st"), "--ratings", data / "epinions_sample_ratings.txt",
            "--trust", data / "epinions_sample_trust.txt", "--json")
        self.assertTrue((self.out("st") / "manifest.json").exists())


if __name__ == "__main__":
    BIN, SRC = sys.argv[1], sys.argv[2]
    unittest.main(argv=[sys.argv[0], "-v"])
