import math

import numpy as np
import pytest
import torch

from insinet import io
from insinet.data import BiTemporalSample
from insinet.exceptions import ContractError, DivergenceError, InvalidInputError
from insinet.nn.model import NetworkConfig
from insinet.training import (Checkpoint, TrainConfig, batch_order, cross_entropy_loss, predict,
                              predict_proba_arrays, train)

CFG = NetworkConfig.tiny(patch_size=32, n_scales=2, width=4)
FAST = TrainConfig(epochs=2, batch_size=4)


class TestLoss:
    def test_uniform_is_ln2(self):
        loss = cross_entropy_loss(torch.zeros(3, 2, 8, 8), torch.randint(0, 2, (3, 8, 8)))
        assert abs(loss.item() - math.log(2)) <= 1e-6

    def test_large_margin_to_zero(self):
        label = torch.randint(0, 2, (1, 4, 4))
        logits = torch.stack([1 - label, label], 1).double() * 60
        assert cross_entropy_loss(logits, label).item() < 1e-20

    def test_per_pixel_oracle(self, rng):
        for _ in range(10):
            logits = rng.normal(size=(2, 2, 2, 2)) * 3
            label = rng.integers(0, 2, (2, 2, 2))
            total = 0.0
            for n in range(2):
                for h in range(2):
                    for w in range(2):
                        z = logits[n, :, h, w]
                        total += -(z[label[n, h, w]] - math.log(math.exp(z[0]) + math.exp(z[1])))
            got = cross_entropy_loss(torch.from_numpy(logits), torch.from_numpy(label)).item()
            assert abs(got - total / 8) <= 1e-10

    def test_unbatched(self):
        assert abs(cross_entropy_loss(torch.zeros(2, 3, 3), torch.ones(3, 3, dtype=torch.long)).item()
                   - math.log(2)) < 1e-7

    def test_bad_label(self):
        with pytest.raises(InvalidInputError):
            cross_entropy_loss(torch.zeros(1, 2, 2, 2), torch.full((1, 2, 2), 2))


def test_batch_order():
    batches = batch_order(9, 4, seed=0, epoch=0)
    assert [len(b) for b in batches] == [4, 4]  # final singleton dropped
    assert [len(b) for b in batch_order(10, 4, 0, 0)] == [4, 4, 2]
    assert np.array_equal(np.concatenate(batch_order(8, 4, 1, 2)), np.concatenate(batch_order(8, 4, 1, 2)))
    assert [len(b) for b in batch_order(1, 4, 0, 0)] == [1]


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.batch_size, cfg.learning_rate, cfg.epochs, cfg.lr_decay) == (8, 1e-3, 200, None)


class TestTrain:
    def test_deterministic_trace(self, desk_samples, tmp_path):
        data = desk_samples[:8]
        a, _ = train(CFG, data, None, FAST)
        b, _ = train(CFG, data, None, FAST)
        assert a.loss_trace == b.loss_trace
        assert all(torch.equal(x, y) for x, y in zip(a.state_dict.values(), b.state_dict.values()))

    def test_log_and_best_val(self, desk_samples, tmp_path):
        log = tmp_path / "train.jsonl"
        ckpt, report = train(CFG, desk_samples[:8], desk_samples[8:12], TrainConfig(epochs=3, batch_size=4),
                             log_path=log, checkpoint_path=tmp_path / "c.pt")
        records = list(io.read_jsonl(log))
        steps = [r for r in records if "loss" in r]
        assert len(steps) == len(report.step_loss) == 6
        assert {"epoch", "step", "loss", "lr"} <= set(steps[0])
        assert len([r for r in records if "val" in r]) == 3
        f1s = [v["F1"] for v in report.val]
        assert ckpt.best_val_f1 == max(f1s) and ckpt.epoch == f1s.index(max(f1s))
        assert (tmp_path / "c.pt").exists()

    def test_max_steps(self, desk_samples):
        _, report = train(CFG, desk_samples[:8], None, TrainConfig(epochs=50, batch_size=4, max_steps=3))
        assert len(report.step_loss) == 3

    def test_divergence(self, desk_samples):
        bad = BiTemporalSample(*np.full((4, 32, 32, 3), np.nan, np.float32), label=np.zeros((32, 32), np.uint8))
        with pytest.raises(DivergenceError):
            train(CFG, [bad, bad], None, FAST)

    def test_size_mismatch(self, desk_samples):
        with pytest.raises(ContractError):
            train(NetworkConfig.tiny(patch_size=16), desk_samples[:4], None, FAST)

    def test_augment_runs(self, desk_samples):
        _, report = train(CFG, desk_samples[:4], None, TrainConfig(epochs=1, batch_size=4, augment=True))
        assert np.isfinite(report.step_loss).all()


class TestCheckpoint:
    def test_round_trip_bit_exact(self, desk_samples, tmp_path):
        ckpt, _ = train(CFG, desk_samples[:8], None, FAST)
        X = np.stack([s.images() for s in desk_samples[:6]])
        before = predict_proba_arrays(ckpt.build_model(), X)
        ckpt.save(tmp_path / "m.pt")
        back = Checkpoint.load(tmp_path / "m.pt")
        assert np.array_equal(predict_proba_arrays(back.build_model(), X), before)
        assert back.network_config == CFG and back.train_config == ckpt.train_config
        assert back.loss_trace == ckpt.loss_trace and back.network_config.seed == CFG.seed

    def test_not_a_checkpoint(self, tmp_path):
        torch.save({"format": "other"}, tmp_path / "x.pt")
        with pytest.raises(ContractError):
            Checkpoint.load(tmp_path / "x.pt")


class TestPredict:
    def test_shapes_and_stitch(self, desk_samples):
        ckpt, _ = train(CFG, desk_samples[:8], None, TrainConfig(epochs=1, batch_size=4))
        out = predict(ckpt, desk_samples, stitch=True)
        assert all(p.shape == s.label.shape for p, s in zip(out["predictions"], desk_samples))
        assert out["scenes"]["scene"].shape == (320, 320)
        # stitching a partition reproduces the per-tile maps
        for s, p in zip(desk_samples, out["predictions"]):
            r, c = s.meta["origin"]
            assert np.array_equal(out["scenes"]["scene"][r:r + 32, c:c + 32], p)

    def test_mismatch(self, desk_samples):
        ckpt, _ = train(CFG, desk_samples[:4], None, TrainConfig(epochs=1, batch_size=4))
        small = BiTemporalSample(*np.zeros((4, 16, 16, 3), np.float32), label=np.zeros((16, 16), np.uint8))
        with pytest.raises(ContractError):
            predict(ckpt, [small])
