"""End-to-end smoke checks for the python module against pinned values."""

import json
import math
import os
import sys
import tempfile
import unittest

import mvlab


class ErrorModelTest(unittest.TestCase):
    def test_worked_example(self):
        rep = mvlab.error_report(mu=0.4, k1=0.3, k2=0.8, theta=1.0, s_mix=3.0)
        self.assertAlmostEqual(rep["incentive_gap"], 0.10199399177408272, places=12)
        self.assertFalse(rep["learns_feature"])
        self.assertEqual(rep["r_clean_1"], 0.2)
        self.assertEqual(rep["r_clean_2"], 0.0)

    def test_sweep_shape_and_identity(self):
        rows = mvlab.sweep_error_model(0.4, 0.3, 0.8, 1.0, 3.0,
                                       param="smix", lo=0.0, hi=6.0, steps=7)
        self.assertEqual(len(rows), 7)
        for row in rows:
            self.assertAlmostEqual(
                row["incentive_gap"], row["r_robust_2"] - row["r_robust_1"],
                places=12)

    def test_value_helpers(self):
        probs = mvlab.softmax([1.0, 2.0, 3.0])
        self.assertAlmostEqual(sum(probs), 1.0, places=12)
        self.assertEqual(mvlab.kl_divergence([0.5, 0.5], [0.5, 0.5]), 0.0)
        self.assertAlmostEqual(mvlab.cross_entropy([0.0, 0.0], 0),
                               math.log(2.0), places=12)


class DataTest(unittest.TestCase):
    def test_sampling_and_io(self):
        bank = mvlab.build_feature_bank(3, 12, 7)
        self.assertLess(mvlab.gram_deviation(bank), 1e-10)
        cfg = mvlab.DistributionConfig()
        cfg.k, cfg.d, cfg.patches = 3, 12, 6
        ds = mvlab.sample_dataset(cfg, bank, 200, 5)
        self.assertEqual(ds.size, 200)
        report = mvlab.check_conformance(ds)
        self.assertTrue(report["ok"])
        views = {s.view for s in ds.samples}
        self.assertEqual(views, {"single", "multi"})

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "t.mvds")
            mvlab.write_dataset(path, ds)
            back = mvlab.read_dataset(path)
            self.assertEqual(back.size, ds.size)
            self.assertEqual(back.samples[0].patches, ds.samples[0].patches)


class TrainingTest(unittest.TestCase):
    def setUp(self):
        self.bank = mvlab.build_feature_bank(2, 8, 3)
        cfg = mvlab.DistributionConfig()
        cfg.k, cfg.d, cfg.patches = 2, 8, 4
        self.data = mvlab.sample_dataset(cfg, self.bank, 64, 11)
        self.arch = mvlab.ModelArch()
        self.arch.k, self.arch.d, self.arch.patches, self.arch.hidden = 2, 8, 4, 8

    def tiny_config(self):
        cfg = mvlab.TrainConfig()
        cfg.n_clean, cfg.n_warmup, cfg.n_adv = 2, 0, 2
        cfg.batch_size = 32
        cfg.attack.steps = 2
        cfg.eval_subset = 32
        return cfg

    def test_train_and_probe(self):
        cfg = self.tiny_config()
        teacher = mvlab.train_clean(self.arch, cfg, self.data)
        self.assertEqual(len(teacher.history), 2)
        student = mvlab.train_student(self.arch, cfg, self.data, teacher.model)
        self.assertEqual(len(student.history), 2)
        atk = mvlab.AttackConfig()
        atk.steps = 2
        rec = mvlab.evaluate(student.model, self.data, atk, 7)
        self.assertGreaterEqual(rec["clean_acc"], 0.0)
        self.assertLessEqual(rec["clean_acc"], 1.0)

        alignment = mvlab.feature_alignment(student.model, self.bank)
        self.assertEqual(len(alignment["per_class_coverage"]), 2)
        probe = json.loads(mvlab.probe_report(student.model, self.bank, self.data, 0.5))
        self.assertIn("learned_set", probe)

    def test_determinism(self):
        cfg = self.tiny_config()
        a = mvlab.train_clean(self.arch, cfg, self.data)
        b = mvlab.train_clean(self.arch, cfg, self.data)
        self.assertEqual(a.model.hidden, b.model.hidden)
        self.assertEqual(a.model.head, b.model.head)

    def test_checkpoint_round_trip(self):
        model = mvlab.init_model(self.arch, 42)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "m.ckpt")
            mvlab.save_checkpoint(path, model)
            back = mvlab.load_checkpoint(path)
            self.assertEqual(back.hidden, model.hidden)
            self.assertEqual(back.bias, model.bias)

    def test_attack_ball(self):
        model = mvlab.init_model(self.arch, 3)
        x = self.data.samples[0].patches
        atk = mvlab.AttackConfig()
        atk.epsilon, atk.steps = 0.15, 5
        adv = mvlab.pgd(model, atk, x, self.data.samples[0].label, 123)
        worst = max(abs(a - b) for ra, rb in zip(adv, x) for a, b in zip(ra, rb))
        self.assertLessEqual(worst, 0.15 + 1e-12)

    def test_invalid_input_raises(self):
        cfg = mvlab.DistributionConfig()
        cfg.k = 1  # too few classes
        with self.assertRaises(mvlab.MvlabError):
            mvlab.sample_dataset(cfg, self.bank, 10, 1)


class ExperimentTest(unittest.TestCase):
    def test_run_experiment(self):
        with tempfile.TemporaryDirectory() as tmp:
            config = {
                "run_id": "pysmoke",
                "output_dir": tmp,
                "data": {"k": 2, "d": 8, "patches": 4, "n": 48},
                "arch": {"hidden": 8},
                "train": {
                    "n_clean": 1,
                    "n_adv": 1,
                    "batch_size": 24,
                    "eval_subset": 24,
                    "attack": {"steps": 2},
                },
            }
            result = mvlab.run_experiment(json.dumps(config))
            self.assertTrue(os.path.exists(result["student"]))
            self.assertTrue(os.path.exists(result["metrics"]))
            self.assertIn("clean_acc", result["final"])
            with open(result["config"]) as f:
                stored = json.load(f)
            self.assertEqual(stored["run_id"], "pysmoke")

    def test_unknown_key_rejected(self):
        with self.assertRaises(mvlab.MvlabError):
            mvlab.run_experiment(json.dumps({"data": {"epsilonn": 1}}))

    def test_preset_names(self):
        names = mvlab.preset_names()
        self.assertIn("ablation_terms", names)
        self.assertEqual(len(names), 5)


if __name__ == "__main__":
    sys.exit(unittest.main())
