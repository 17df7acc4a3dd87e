from pathlib import Path

import pytest

from ncrecon.config import CLASSICAL_KEYS, TrainConfig, load_config, parse_config


def test_text_round_trip():
    cfg = TrainConfig(mode="kdss", lr=3e-5, n_iter=4, share_weights=True, dataset="data/x")
    assert parse_config(cfg.to_text()) == cfg


def test_comments_blank_lines_and_base(tmp_path):
    text = "# header\n\nmode = ssdu   # trailing\nepochs=3\nper_example_trajectory = yes\n"
    cfg = parse_config(text, base=TrainConfig(width=8))
    assert (cfg.mode, cfg.epochs, cfg.width, cfg.per_example_trajectory) == ("ssdu", 3, 8, True)
    path = tmp_path / "run.cfg"
    path.write_text(text)
    assert load_config(path, base=TrainConfig(width=8)) == cfg


@pytest.mark.parametrize("text, needle", [
    ("nonsense = 1", "unknown key"),
    ("epochs 3", "expected 'key = value'"),
    ("epochs = three", "line 1"),
    ("\nshare_weights = maybe", "line 2"),
])
def test_parse_errors_name_the_line(text, needle):
    with pytest.raises(ValueError, match=needle):
        parse_config(text)


@pytest.mark.parametrize("changes", [
    {"mode": "unet"}, {"lr": -1.0}, {"rate_min": 0.0}, {"rate_min": 0.9, "rate_max": 0.5},
    {"batch": 0}, {"l1_mu": 0.0}, {"cg_lambda": -1.0},
])
def test_invalid_values_rejected(changes):
    with pytest.raises(ValueError):
        TrainConfig(**changes)


def test_zero_pdc_weight_rejected_only_for_ddss():
    with pytest.raises(ValueError, match="lambda_pdc = 0"):
        TrainConfig(mode="ddss", lambda_pdc=0.0)
    TrainConfig(mode="kdss", lambda_pdc=0.0)


def test_signature_and_model_key():
    base = TrainConfig()
    assert base.signature() == TrainConfig().signature()
    assert base.replace(seed=1).signature() != base.signature()
    for key in CLASSICAL_KEYS:
        changed = base.replace(**{key: getattr(base, key) * 2})
        assert changed.model_key() == base.model_key()
        assert changed.signature() != base.signature()
    assert base.replace(n_iter=3).model_key() != base.model_key()


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    assert load_config(root / "desk.cfg") == TrainConfig()
    assert load_config(root / "full-scale.cfg").epochs == 200


def test_cosine_schedule():
    cfg = TrainConfig(lr=1e-3)
    assert cfg.lr_at(0, 100) == pytest.approx(1e-3)
    assert cfg.lr_at(50, 100) == pytest.approx(5e-4)
    assert cfg.lr_at(99, 100) < 1e-6
    assert cfg.replace(lr_schedule="constant").lr_at(99, 100) == 1e-3
    with pytest.raises(ValueError, match="lr_schedule"):
        TrainConfig(lr_schedule="step")
