import math
import os

import pytest

import drpo

HERE = os.path.dirname(os.path.abspath(__file__))
TOY_CONF = os.path.join(HERE, "..", "..", "configs", "toy.conf")

SMALL = {
    "hidden": "[16]",
    "n_pairs": "200",
    "batch_size": "8",
    "pretrain_steps": "60",
    "sft_steps": "10",
    "steps": "20",
    "tau": "5",
}


def test_schedule_and_coefficient():
    s = drpo.build_schedule(10, 0.1, 0.1)
    assert s.steps == 10
    assert s.alpha_bars[1] == pytest.approx(0.81)
    assert drpo.logprob_coefficient(s, 1) == pytest.approx(0.05 / 0.19, rel=1e-12)
    y = drpo.marginal_sample(drpo.build_schedule(3, 0.75, 0.75), [1.0, 2.0], 0, [-1.0, 1.0])
    assert y[0] == pytest.approx(math.sqrt(0.0625) - math.sqrt(0.9375))


def test_weight_matrix_worked_example():
    s = math.sqrt(2) / 2
    w = drpo.weight_matrix([[1, 0], [0, 1]], [[1, 0], [s, s]], 1.0)
    assert w[0] == pytest.approx([0.57270429279553685252, 0.42729570720446314748], abs=1e-12)
    for row in w:
        assert sum(row) == pytest.approx(1.0, abs=1e-12)


def test_losses_reference_identity_and_reduction():
    grid = [[(0.5, 0.5, 1.2, 1.2), (0.5, 0.5, 0.7, 0.7)], [(0.9, 0.9, 1.2, 1.2), (0.9, 0.9, 0.7, 0.7)]]
    w = [[0.6, 0.4], [0.3, 0.7]]
    assert drpo.rpo_loss(grid, w) == pytest.approx(math.log(2), abs=1e-12)
    cells = [[(0.41, 0.42, 1.2, 1.19), (0.41, 0.42, 0.55, 0.56)], [(0.97, 0.96, 1.2, 1.19), (0.97, 0.96, 0.55, 0.56)]]
    assert drpo.rpo_loss(cells, beta=10.0) == pytest.approx(drpo.dpo_loss([cells[0][0], cells[1][1]], beta=10.0),
                                                            rel=1e-12)


def test_frechet_distance_1d():
    assert drpo.frechet_distance([0.0], [[1.0]], [1.0], [[4.0]]) == pytest.approx(2.0)
    mean, cov = drpo.fit_gaussian([[0.0], [2.0]])
    assert mean == [1.0] and cov == [[2.0]]


def test_errors_surface_as_drpo_error():
    with pytest.raises(drpo.DrpoError, match="non-positive-temperature|tau"):
        drpo.weights_from_distances([[0.0]], 0.0)
    with pytest.raises(drpo.DrpoError):
        drpo.ExperimentConfig({"no_such_key": "1"})


def test_train_pipeline_end_to_end(tmp_path):
    cfg = drpo.ExperimentConfig(SMALL)
    assert cfg.to_dict()["tau"] == "5"
    data = drpo.make_dataset(cfg)
    assert len(data) == 200
    base = drpo.pretrain(cfg, data)
    assert len(base.metrics) == 60
    sft = drpo.sft(cfg, data, 10, base.checkpoint)
    rpo = drpo.run_preference(cfg, data, sft.checkpoint)
    assert all(math.isfinite(r.loss) for r in rpo.metrics)

    path = str(tmp_path / "final.ckpt")
    drpo.save_checkpoint(rpo.checkpoint, path)
    assert drpo.load_checkpoint(path).theta == rpo.checkpoint.theta

    samples = drpo.reverse_sample(rpo.checkpoint, cfg, 0, 5, 1)
    assert len(samples) == 5 and len(samples[0]) == 2
    fd = drpo.style_frechet_distance(rpo.checkpoint, cfg, 50, 1)
    assert fd >= 0.0
    assert drpo.win_rate(rpo.checkpoint, rpo.checkpoint, cfg, [0, 1, 2, 3], 5, 7) == 0.5


def test_cli_in_process(tmp_path):
    code, out, _ = drpo.run_cli(["--help"])
    assert code == 0 and "weights" in out
    code, _, err = drpo.run_cli(["nope"])
    assert code == 1 and "unknown verb" in err
    code, out, err = drpo.run_cli(["gen-data", "-c", TOY_CONF, "--set", "n_pairs=3", "-o", str(tmp_path)])
    assert code == 0, err
    assert len(drpo.load_dataset(str(tmp_path / "dataset.jsonl"))) == 3
    assert (tmp_path / "manifest.json").exists()
