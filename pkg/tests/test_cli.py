"""End-to-end command-line behavior: happy paths, exit codes, files."""

import json

import numpy as np
import pytest

from chunkmel import cli, decoder, io

TINY_DECODER = {
    "n_layers": 1,
    "n_heads": 2,
    "d_model": 8,
    "d_ff": 12,
    "chunk_size": 4,
    "past_size": 2,
    "mel_bins": 4,
}


def write_config(tmp_path, name="cfg.json", train=None, decoder_doc=None, **extra):
    doc = {
        "schema": 1,
        "seed": 0,
        "decoder": TINY_DECODER if decoder_doc is None else decoder_doc,
        "train": {"steps": 2, "frames": 12, "batch_size": 2} if train is None else train,
    }
    doc.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def tiny_model_file(tmp_path, name="m.cfpw", seed=0):
    cfg = decoder.DecoderConfig(**TINY_DECODER)
    path = str(tmp_path / name)
    decoder.save_model(path, decoder.init_weights(cfg, seed=seed))
    return path, cfg


class TestReceptiveFieldCommand:
    def test_prints_formula(self, capsys):
        assert cli.cli_dispatch(["rf", "--layers", "6", "--chunk", "30", "--past", "15"]) == 0
        assert capsys.readouterr().out.strip() == "210"

    def test_oracle_json(self, capsys):
        code = cli.cli_dispatch(
            ["rf", "--layers", "2", "--chunk", "30", "--past", "60", "--oracle"]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["formula"] == 150
        assert doc["oracle"] == 150
        assert doc["delta"] == 0


class TestMaskCommand:
    def test_ascii_enumeration(self, capsys):
        code = cli.cli_dispatch(["mask", "--frames", "4", "--chunk", "2", "--past", "1"])
        assert code == 0
        assert capsys.readouterr().out == "##..\n##..\n.###\n.###\n"

    def test_pgm_file(self, tmp_path):
        out = tmp_path / "m.pgm"
        code = cli.cli_dispatch(
            ["mask", "--frames", "6", "--chunk", "2", "--past", "all",
             "--format", "pgm", "--out", str(out)]
        )
        assert code == 0
        data = out.read_bytes()
        assert data.startswith(b"P5\n6 6\n255\n")
        assert len(data) == len(b"P5\n6 6\n255\n") + 36

    def test_bad_past_is_usage_error(self, capsys):
        assert cli.cli_dispatch(["mask", "--frames", "4", "--chunk", "2", "--past", "most"]) == 2


class TestMsdCommand:
    def test_identical_files_print_zero(self, tmp_path, capsys):
        arr = np.random.default_rng(0).standard_normal((5, 3))
        p = str(tmp_path / "x.ctn")
        io.save_tensor(p, arr)
        assert cli.cli_dispatch(["msd", p, p]) == 0
        assert float(capsys.readouterr().out) == 0.0

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        p = str(tmp_path / "x.ctn")
        io.save_tensor(p, np.zeros((2, 2)))
        assert cli.cli_dispatch(["msd", p, str(tmp_path / "nope.ctn")]) == 3


class TestConfigHandling:
    def test_dump_config_roundtrips(self, capsys):
        assert cli.cli_dispatch(["--dump-config"]) == 0
        doc = json.loads(capsys.readouterr().out)
        dec, train, seed = cli.parse_run_config(doc)
        assert dec == decoder.DecoderConfig()
        assert seed == 0

    def test_unknown_key_is_format_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, bogus=1)
        assert cli.cli_dispatch(["train", "--config", cfg, "--out", str(tmp_path / "m.cfpw")]) == 3

    def test_invalid_json_is_format_error(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text("{not json")
        assert cli.cli_dispatch(["ablate", "--config", str(p), "--mode", "drop_kv"]) == 3

    def test_no_command_is_usage_error(self, capsys):
        assert cli.cli_dispatch([]) == 2

    def test_unknown_command_is_usage_error(self, capsys):
        assert cli.cli_dispatch(["frobnicate"]) == 2


class TestSynthCommand:
    def make_features(self, tmp_path, cfg, t=10, seed=1):
        feats = np.random.default_rng(seed).standard_normal((t, cfg.d_model))
        p = str(tmp_path / "f.ctn")
        io.save_tensor(p, feats)
        return p

    def test_incremental_matches_parallel(self, tmp_path):
        model_path, cfg = tiny_model_file(tmp_path)
        feats_path = self.make_features(tmp_path, cfg)
        inc_path = str(tmp_path / "inc.ctn")
        par_path = str(tmp_path / "par.ctn")
        assert cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", feats_path,
             "--mode", "incremental", "--out", inc_path]
        ) == 0
        assert cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", feats_path,
             "--mode", "parallel", "--out", par_path]
        ) == 0
        inc = io.load_tensor(inc_path)
        par = io.load_tensor(par_path)
        assert inc.shape == (10, cfg.mel_bins)
        assert np.max(np.abs(inc - par)) <= 1e-9

    def test_state_resume_matches_uninterrupted(self, tmp_path):
        model_path, cfg = tiny_model_file(tmp_path)
        feats = np.random.default_rng(2).standard_normal((12, cfg.d_model))
        whole = str(tmp_path / "whole.ctn")
        first = str(tmp_path / "first.ctn")
        second = str(tmp_path / "second.ctn")
        io.save_tensor(whole, feats)
        io.save_tensor(first, feats[:8])
        io.save_tensor(second, feats[8:])
        state = str(tmp_path / "mid.cfps")
        out_whole = str(tmp_path / "mel_whole.ctn")
        out_a = str(tmp_path / "mel_a.ctn")
        out_b = str(tmp_path / "mel_b.ctn")
        assert cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", whole, "--out", out_whole]
        ) == 0
        assert cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", first,
             "--out", out_a, "--state-out", state]
        ) == 0
        assert cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", second,
             "--out", out_b, "--state-in", state]
        ) == 0
        joined = np.concatenate([io.load_tensor(out_a), io.load_tensor(out_b)], axis=0)
        assert joined.tobytes() == io.load_tensor(out_whole).tobytes()

    def test_chunk_past_overrides(self, tmp_path):
        model_path, cfg = tiny_model_file(tmp_path)
        feats_path = self.make_features(tmp_path, cfg)
        out = str(tmp_path / "mel.ctn")
        assert cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", feats_path,
             "--chunk", "10", "--past", "0", "--out", out]
        ) == 0
        # chunk == T with past 0 is the all-true single-chunk decode
        par = str(tmp_path / "par.ctn")
        assert cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", feats_path, "--mode", "parallel",
             "--chunk", "10", "--past", "0", "--out", par]
        ) == 0
        assert io.load_tensor(out).tobytes() == io.load_tensor(par).tobytes()

    def test_parallel_rejects_state_flags(self, tmp_path, capsys):
        model_path, cfg = tiny_model_file(tmp_path)
        feats_path = self.make_features(tmp_path, cfg)
        code = cli.cli_dispatch(
            ["synth", "--model", model_path, "--features", feats_path, "--mode", "parallel",
             "--out", str(tmp_path / "o.ctn"), "--state-out", str(tmp_path / "s.cfps")]
        )
        assert code == 2

    def test_missing_model_is_io_error(self, tmp_path, capsys):
        feats_path = str(tmp_path / "f.ctn")
        io.save_tensor(feats_path, np.zeros((4, 8)))
        code = cli.cli_dispatch(
            ["synth", "--model", str(tmp_path / "no.cfpw"), "--features", feats_path,
             "--out", str(tmp_path / "o.ctn")]
        )
        assert code == 3


class TestTrainCommand:
    def test_train_writes_model_and_log(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        model_out = str(tmp_path / "trained.cfpw")
        log_out = str(tmp_path / "log.json")
        code = cli.cli_dispatch(
            ["train", "--config", cfg, "--steps", "3", "--seed", "7",
             "--mask", "dynamic", "--out", model_out, "--log", log_out]
        )
        assert code == 0
        model = decoder.load_model(model_out)
        assert model.config == decoder.DecoderConfig(**TINY_DECODER)
        log = json.loads(open(log_out).read())
        assert len(log["steps"]) == 3
        assert log["train"]["regime"] == "dynamic"
        assert log["train"]["seed"] == 7
        assert "initial_loss" in log and "final_loss" in log
        assert "trained 3 steps" in capsys.readouterr().err


class TestReportCommands:
    def test_equiv_default_grid(self, tmp_path):
        out = str(tmp_path / "equiv.json")
        assert cli.cli_dispatch(["equiv", "--seeds", "1", "--out", out]) == 0
        doc = json.loads(open(out).read())
        assert doc["ok"] is True
        assert doc["n_cells"] >= 300
        assert doc["max_abs_diff"] <= 1e-9

    def test_bench_json(self, tmp_path):
        model_path, _cfg = tiny_model_file(tmp_path)
        out = str(tmp_path / "bench.json")
        code = cli.cli_dispatch(
            ["bench", "--model", model_path, "--frames", "23", "--repeats", "1", "--out", out]
        )
        assert code == 0
        doc = json.loads(open(out).read())
        assert doc["total_frames"] == 23
        assert doc["rtf_incremental"] > 0
        assert len(doc["per_chunk_median_ms"]) == 6

    def test_study_csv_and_json(self, tmp_path):
        cfg = write_config(tmp_path, train={"steps": 1, "frames": 12, "batch_size": 1})
        out_csv = str(tmp_path / "study.csv")
        out_json = str(tmp_path / "study.json")
        code = cli.cli_dispatch(
            ["study", "--config", cfg, "--seeds", "1", "--out", out_csv, "--json", out_json]
        )
        assert code == 0
        lines = open(out_csv).read().strip().split("\n")
        assert lines[0] == "regime,c30_p0,c30_p5,c30_p15,c30_p30,c30_p60,c30_p90,c30_pall"
        assert len(lines) == 6  # header + 4 static regimes + dynamic
        doc = json.loads(open(out_json).read())
        assert doc["rows"][-1] == "dynamic"
        assert len(doc["mean_msd"]) == 5

    def test_ablate_report(self, tmp_path):
        cfg = write_config(tmp_path)
        out = str(tmp_path / "abl.json")
        code = cli.cli_dispatch(
            ["ablate", "--config", cfg, "--mode", "drop_kv", "--seeds", "2", "--out", out]
        )
        assert code == 0
        doc = json.loads(open(out).read())
        assert doc["mode"] == "drop_kv"
        assert len(doc["max_abs_diff"]) == 2
        assert doc["frac_broken"] == 1.0
