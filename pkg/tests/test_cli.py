import pytest

from capslstm.cli import ConfigError, format_layer_table, main, parse_config
from capslstm.data import NormParams, build_dataset, denormalize, load_csv, normalize, synth_series, write_csv
from capslstm.metrics import MetricsReport, evaluate_model
from capslstm.model import ArchSpec, Checkpoint, build_model, load_checkpoint, model_forward, save_checkpoint
from capslstm.numcore import Prng

BASE = """\
[run]
seed = 3

[data]
source = {source}
{data}
window = 8
horizon = 3

[model]
kind = capsnet_lstm
filters = 8
primary_dim = 4
high_dim = 4
hidden = 4
routing_iters = 2

[train]
epochs = 3
batch_size = 16
{train}

[output]
checkpoint = model.c1dl
log = log.csv
"""


def config(tmp_path, source="synthetic", data="kind = sine\nlength = 150", train="", text=None):
    path = tmp_path / "run.ini"
    path.write_text(text if text is not None else BASE.format(source=source, data=data, train=train))
    return str(path)


@pytest.fixture
def prices(tmp_path):
    path = tmp_path / "prices.csv"
    write_csv(synth_series("random_walk", 150, Prng(5)), path)
    return str(path)


@pytest.fixture
def trained(tmp_path, prices):
    assert main(["train", "--config", config(tmp_path, "csv", "path = prices.csv")]) == 0
    return str(tmp_path / "model.c1dl")


class TestConfig:
    def test_defaults_and_paths(self, tmp_path):
        cfg = parse_config(config(tmp_path))
        assert cfg.spec.kind == "capsnet_lstm" and cfg.spec.d == 8 and cfg.spec.H == 3
        assert cfg.train.seed == 3 and cfg.train.lr == 1e-3
        assert cfg.checkpoint == str(tmp_path / "model.c1dl")

    def test_inline_comments(self, tmp_path):
        text = BASE.format(source="synthetic", data="kind = sine  # clean wave", train="lr = 0.01 ; faster")
        cfg = parse_config(config(tmp_path, text=text))
        assert cfg.train.lr == 0.01 and cfg.data["kind"] == "sine"

    def test_unknown_key_line(self, tmp_path):
        text = BASE.format(source="synthetic", data="kind = sine", train="momentum = 0.9")
        with pytest.raises(ConfigError) as info:
            parse_config(config(tmp_path, text=text))
        assert "momentum" in str(info.value)
        assert info.value.line == text.splitlines().index("momentum = 0.9") + 1

    @pytest.mark.parametrize("edit", [("seed = 3", ""), ("kind = capsnet_lstm", "kind = gru"),
                                      ("epochs = 3", "epochs = three"), ("[train]", "[tuning]")])
    def test_rejected(self, tmp_path, edit):
        text = BASE.format(source="synthetic", data="kind = sine", train="").replace(*edit)
        with pytest.raises(ConfigError):
            parse_config(config(tmp_path, text=text))

    def test_missing_seed_exit_2(self, tmp_path, capsys):
        text = BASE.format(source="synthetic", data="", train="").replace("seed = 3", "")
        assert main(["train", "--config", config(tmp_path, text=text)]) == 2
        assert "seed" in capsys.readouterr().err


class TestTrainCommand:
    def test_synthetic_run(self, tmp_path, capsys):
        assert main(["train", "--config", config(tmp_path)]) == 0
        ckpt = load_checkpoint(tmp_path / "model.c1dl")
        assert ckpt.spec.kind == "capsnet_lstm"
        log = (tmp_path / "log.csv").read_text().splitlines()
        assert log[0] == "epoch,train_mse,val_mse,lr" and len(log) == 4
        assert "final train_mse=" in capsys.readouterr().out

    def test_byte_identical_reruns(self, tmp_path):
        path = config(tmp_path)
        main(["train", "--config", path])
        first = (tmp_path / "model.c1dl").read_bytes(), (tmp_path / "log.csv").read_bytes()
        main(["train", "--config", path])
        assert ((tmp_path / "model.c1dl").read_bytes(), (tmp_path / "log.csv").read_bytes()) == first

    def test_unknown_key_exit_2(self, tmp_path, capsys):
        assert main(["train", "--config", config(tmp_path, train="warmup = 4")]) == 2
        assert "warmup" in capsys.readouterr().err

    def test_missing_data_exit_3(self, tmp_path):
        assert main(["train", "--config", config(tmp_path, "csv", "path = nowhere.csv")]) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_exit_4(self, tmp_path):
        text = BASE.format(source="synthetic", data="kind = sine\nlength = 150",
                           train="lr = 1e300").replace("capsnet_lstm", "lstm")
        assert main(["train", "--config", config(tmp_path, text=text)]) == 4


class TestEvaluate:
    def test_report_rows(self, trained, prices, tmp_path):
        out = tmp_path / "report.csv"
        assert main(["evaluate", "--model", trained, "--data", prices, "--out", str(out)]) == 0
        rep = MetricsReport.from_csv(out.read_text())
        assert rep.H == 3

    def test_matches_in_memory(self, trained, prices, capsys):
        assert main(["evaluate", "--model", trained, "--data", prices]) == 0
        printed = MetricsReport.from_csv(capsys.readouterr().out)
        ckpt = load_checkpoint(trained)
        ds = build_dataset(load_csv(prices), 8, 3)
        expect = evaluate_model(ckpt.spec, ckpt.params, ds.test_x, ds.test_y, ckpt.norm)
        assert printed.rows == expect.rows

    def test_split_all(self, trained, prices, capsys):
        assert main(["evaluate", "--model", trained, "--data", prices, "--split", "all"]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 4

    def test_idempotent(self, trained, prices, capsys):
        main(["evaluate", "--model", trained, "--data", prices])
        a = capsys.readouterr().out
        main(["evaluate", "--model", trained, "--data", prices])
        assert capsys.readouterr().out == a

    def test_missing_checkpoint_exit_3(self, tmp_path, prices):
        assert main(["evaluate", "--model", str(tmp_path / "none"), "--data", prices]) == 3

    @pytest.mark.parametrize("flag", [["--horizon", "5"], ["--window", "50"]])
    def test_mismatch_exit_5(self, trained, prices, flag):
        assert main(["evaluate", "--model", trained, "--data", prices] + flag) == 5

    def test_matching_flags_ok(self, trained, prices):
        assert main(["evaluate", "--model", trained, "--data", prices, "--window", "8", "--horizon", "3"]) == 0


class TestPredict:
    def test_output_equals_forward(self, trained, prices, capsys):
        assert main(["predict", "--model", trained, "--data", prices]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 3
        ckpt = load_checkpoint(trained)
        window = normalize(load_csv(prices).values[-8:], ckpt.norm)
        expect = denormalize(model_forward(ckpt.spec, ckpt.params, window[:, None]).data, ckpt.norm)
        assert [float(x) for x in lines] == list(expect)

    def test_five_lines_for_h5(self, tmp_path, prices, capsys):
        spec = ArchSpec.create("lstm", d=50, H=5, hidden=6)
        save_checkpoint(tmp_path / "h5", Checkpoint(spec, NormParams(1.0, 200.0), build_model(spec, Prng(0))))
        assert main(["predict", "--model", str(tmp_path / "h5"), "--data", prices]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 5

    def test_exactly_d_points(self, trained, tmp_path, capsys):
        s = synth_series("random_walk", 8, Prng(0))
        write_csv(s, tmp_path / "short.csv")
        assert main(["predict", "--model", trained, "--data", str(tmp_path / "short.csv")]) == 0
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_too_few_points_exit_3(self, trained, tmp_path):
        write_csv(synth_series("random_walk", 7, Prng(0)), tmp_path / "short.csv")
        assert main(["predict", "--model", trained, "--data", str(tmp_path / "short.csv")]) == 3


class TestInspect:
    @pytest.mark.parametrize("kind, counts", [("capsnet_lstm", [768, 0, 0, 65536, 365600, 1005]),
                                              ("lstm", [161600, 1005])])
    def test_full_width_rows(self, tmp_path, capsys, kind, counts):
        spec = ArchSpec.create(kind)
        save_checkpoint(tmp_path / "m", Checkpoint(spec, NormParams(0.0, 1.0), build_model(spec, Prng(0))))
        assert main(["inspect", "--model", str(tmp_path / "m")]) == 0
        lines = capsys.readouterr().out.splitlines()
        table = lines[2:-1]
        assert [int(ln.split()[-1]) for ln in table[1:]] == counts
        assert int(lines[-1].split()[-1]) == sum(counts)

    def test_table_is_deterministic(self):
        spec = ArchSpec.create("rnn")
        assert format_layer_table(spec) == format_layer_table(spec)

    def test_unreadable_exit_3(self, tmp_path):
        (tmp_path / "junk").write_bytes(b"not a checkpoint")
        assert main(["inspect", "--model", str(tmp_path / "junk")]) == 3
