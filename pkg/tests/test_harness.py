import json
import csv
from dataclasses import replace

import numpy as np
import pytest

from gaitprop.data import synthetic_teacher_quantized, write_idx
from gaitprop.harness import (
    ConfigError,
    ExperimentConfig,
    TrainingDiverged,
    align_experiment,
    config_from_mapping,
    equilibrium_sweep,
    gridsearch,
    load_config,
    parse_config_text,
    train,
    write_equilibrium_csv,
    write_grid_csv,
    write_run_outputs,
    _cell_seed,
)

DESK = ExperimentConfig(width=16, depth=3, classes=4, dataset="synthetic",
                        teacher_depth=2, train_samples=2000, test_samples=1000,
                        batch_size=16, epochs=10, seed=0, data_seed=1234)

TINY = replace(DESK, train_samples=120, test_samples=40, epochs=2)


class TestConfigParsing:
    def test_key_value_text(self):
        mapping = parse_config_text("""
            # a comment
            rule = gait
            widths = 16, 12, 8
            classes = 4
            eta = 1e-3
            scale_updates = false
        """)
        cfg = config_from_mapping(mapping)
        assert cfg.rule == "gait"
        assert cfg.resolved_widths() == (16, 12, 8)
        assert cfg.eta == 1e-3
        assert cfg.scale_updates is False

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            config_from_mapping({"learning_rate": "0.1"})

    def test_malformed_line(self):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config_text("just some words\n")

    def test_eta_auto(self):
        cfg = config_from_mapping({"rule": "tp", "eta": "auto"})
        assert cfg.resolved_eta() == 1e-5
        assert cfg.resolved_lam() == 1000.0

    def test_bold_cells_per_rule(self):
        assert ExperimentConfig(rule="bp").resolved_eta() == 1e-4
        assert ExperimentConfig(rule="bp").resolved_lam() == 0.0
        assert ExperimentConfig(rule="gait").resolved_lam() == 0.1
        assert ExperimentConfig(rule="tp").resolved_lam() == 1000.0

    def test_init_pairing_enforced(self):
        cfg = ExperimentConfig(rule="gait", init="xavier")  # lam defaults to 0.1
        with pytest.raises(ConfigError, match="pairing"):
            cfg.resolved_init()
        ok = ExperimentConfig(rule="gait", init="xavier", allow_init_mismatch=True)
        assert ok.resolved_init() == "xavier"

    def test_auto_init_follows_lambda(self):
        assert ExperimentConfig(lam=0.0).resolved_init() == "xavier"
        assert ExperimentConfig(lam=0.5).resolved_init() == "orthogonal"

    def test_halving_arch(self):
        cfg = ExperimentConfig(arch="halving", width=64, depth=4, classes=10)
        assert cfg.resolved_widths() == (64, 32, 16, 10)

    def test_widths_override_arch(self):
        cfg = ExperimentConfig(arch="halving", widths=(20, 20), classes=5)
        assert cfg.resolved_widths() == (20, 20)

    def test_config_file_with_overrides(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("rule = bp\nepochs = 3\n")
        cfg = load_config(path, overrides={"epochs": "5"})
        assert cfg.rule == "bp"
        assert cfg.epochs == 5

    def test_to_dict_is_resolved(self):
        d = ExperimentConfig(rule="tp").to_dict()
        assert d["eta"] == 1e-5
        assert d["init"] == "orthogonal"
        assert d["widths"] == [784] * 5

    def test_idx_dataset_requires_paths(self):
        with pytest.raises(ConfigError, match="paths"):
            config_from_mapping({"dataset": "idx"})


class TestTrain:
    def test_record_shape_and_determinism(self):
        rec1 = train(TINY)
        rec2 = train(TINY)
        assert len(rec1.epochs) == 2
        for e1, e2 in zip(rec1.epochs, rec2.epochs):
            assert e1["train_acc"] == e2["train_acc"]
            assert e1["mean_loss"] == e2["mean_loss"]
            assert e1["ortho_errors"] == e2["ortho_errors"]
        assert 0.0 <= rec1.peak_train_acc <= 1.0
        assert 0.0 <= rec1.peak_test_acc <= 1.0
        assert rec1.final_train_acc == rec1.epochs[-1]["train_acc"]

    def test_all_rules_run(self):
        for rule in ("bp", "tp", "itp", "gait"):
            rec = train(replace(TINY, rule=rule, epochs=1))
            assert len(rec.epochs) == 1

    def test_run_outputs_written(self, tmp_path):
        rec = train(TINY)
        write_run_outputs(rec, tmp_path / "out")
        run = json.loads((tmp_path / "out" / "run.json").read_text())
        assert run["config"]["rule"] == "gait"
        assert len(run["epochs"]) == 2
        rows = list(csv.reader((tmp_path / "out" / "epochs.csv").open()))
        assert rows[0][:4] == ["epoch", "train_acc", "test_acc", "mean_loss"]
        assert len(rows) == 3

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_divergence_aborts_with_diagnostic(self):
        with pytest.raises(TrainingDiverged):
            train(replace(TINY, rule="bp", eta=1e150, epochs=3))

    def test_idx_dataset_path(self, tmp_path):
        pixels, labels = synthetic_teacher_quantized(16, 2, 4, 80, seed=9)
        for name, sl in (("train", slice(0, 60)), ("test", slice(60, None))):
            write_idx(pixels[sl].reshape(-1, 4, 4), labels[sl].astype(np.uint8),
                      tmp_path / f"{name}-img", tmp_path / f"{name}-lab")
        cfg = replace(TINY, dataset="idx", classes=4,
                      train_images=str(tmp_path / "train-img"),
                      train_labels=str(tmp_path / "train-lab"),
                      test_images=str(tmp_path / "test-img"),
                      test_labels=str(tmp_path / "test-lab"),
                      train_samples=0, test_samples=0, epochs=1)
        rec = train(cfg)
        assert len(rec.epochs) == 1

    def test_checkpoint_saved(self, tmp_path):
        from gaitprop import load_checkpoint
        path = tmp_path / "final.ckpt"
        train(replace(TINY, epochs=1, save_checkpoint=str(path)))
        net = load_checkpoint(path)
        assert net.depth == 3

    def test_desk_scale_regression_baseline(self):
        # pinned run (eta 2e-3, batch 8, seed 0): both rules fit the teacher
        # task to >= 95% within 50 epochs and land within 2 points of each
        # other; the exact margins are seed-pinned, see measured values
        # recorded in the asserts
        base = replace(DESK, batch_size=8, epochs=50, eta=2e-3, seed=0)
        bp = train(replace(base, rule="bp"))
        gait = train(replace(base, rule="gait"))
        assert bp.peak_train_acc >= 0.95       # measured 0.9705
        assert gait.peak_train_acc >= 0.95     # measured 0.9515
        assert abs(bp.final_train_acc - gait.final_train_acc) <= 0.02  # 0.0175


class TestGridsearch:
    def test_table_shape(self, tmp_path):
        result = gridsearch(TINY, etas=[1e-3, 1e-4], lambdas=[0.0, 0.1])
        assert len(result.records) + len(result.failures) == 4
        path = tmp_path / "grid.csv"
        write_grid_csv(result, path)
        rows = list(csv.reader(path.open()))
        assert len(rows) == 3            # header + one row per eta
        assert len(rows[1]) == 3         # eta column + one per lambda

    def test_single_cell_equals_train(self):
        result = gridsearch(TINY, etas=[1e-3], lambdas=[0.1])
        rec = result.records[(1e-3, 0.1)]
        direct = train(replace(TINY, eta=1e-3, lam=0.1,
                               seed=_cell_seed(TINY.seed, 0, 0)))
        assert rec.epochs == direct.epochs

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_failures_recorded_not_fatal(self):
        result = gridsearch(replace(TINY, epochs=3),
                            etas=[1e150, 1e-3], lambdas=[0.0])
        assert (1e150, 0.0) in result.failures
        assert (1e-3, 0.0) in result.records

    def test_empty_grid_rejected(self):
        with pytest.raises(ConfigError):
            gridsearch(TINY, etas=[], lambdas=[0.1])


class TestAlignExperiment:
    def test_orthogonal_beats_xavier_for_gait(self, tmp_path):
        reports = align_experiment(replace(TINY, train_samples=64),
                                   n_samples=64, out_dir=tmp_path)
        ortho = reports["orthogonal"]["gait"].cosines
        xavier = reports["xavier"]["gait"].cosines
        assert all(c > 0.999 for c in ortho)
        for co, cx in zip(ortho[:-1], xavier[:-1]):
            assert cx < co
        assert (tmp_path / "align_orthogonal_gait_vs_bp.csv").exists()
        assert (tmp_path / "align_xavier_tp_vs_bp_scatter.csv").exists()

    def test_single_sample_report_well_formed(self):
        reports = align_experiment(replace(TINY, train_samples=8), n_samples=1)
        for by_rule in reports.values():
            for rep in by_rule.values():
                assert len(rep.cosines) == 3
                assert rep.ortho_errors is not None

    def test_too_many_samples_rejected(self):
        with pytest.raises(ConfigError, match="available"):
            align_experiment(replace(TINY, train_samples=8), n_samples=99)


class TestEquilibriumSweep:
    def test_rows_and_gamma(self, tmp_path):
        rows = equilibrium_sweep([0.0, 0.25], seed=3)
        assert rows[0]["nu"] == 0.0 and rows[0]["gamma"] == 0.0
        assert rows[1]["gamma"] == pytest.approx(1.0 / 3.0, abs=1e-12)
        for r in rows:
            assert r["err_before_onset"] < 1e-5
            assert r["err_after_onset"] < 1e-5
        path = tmp_path / "eq.csv"
        write_equilibrium_csv(rows, path)
        got = list(csv.reader(path.open()))
        assert got[0] == ["nu", "gamma", "err_before_onset", "err_after_onset",
                          "diverged"]
        assert len(got) == 3

    def test_terminal_state_first_order_in_dt(self):
        # mid-transient horizon: successive dt halvings change the reported
        # error by about half each time (first-order integrator), so the
        # two-resolution differences shrink toward the exact trajectory
        errs = [equilibrium_sweep([0.25], seed=3, dt=dt, onset=2.0,
                                  duration=4.0)[0]["err_after_onset"]
                for dt in (0.08, 0.04, 0.02)]
        d1 = abs(errs[0] - errs[1])
        d2 = abs(errs[1] - errs[2])
        assert d2 < d1
        assert d1 / d2 == pytest.approx(2.0, rel=0.5)
