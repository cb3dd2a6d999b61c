import numpy as np
import pytest

from sscd.dataio import extract_patches, generate_toy_scene_pair, toy_segmentation_set
from sscd.networks import CSCDNetConfig, CSSCDNetConfig, EncoderConfig, SSCDNetConfig, load_weights
from sscd.synthesis import AugmentConfig, synthesize_dataset
from sscd.train import RunManifest, TrainConfig, TrainingDiverged, select_fold, toy_config, train

TINY = EncoderConfig(stage_widths=(4, 8), blocks_per_stage=1)


def tiny_pairs(n=3, size=32, shift=0):
    pairs = [generate_toy_scene_pair(s, size, 4, shift=shift).as_pair(f"t{s}") for s in range(n)]
    return extract_patches(pairs, crop=size, out=size, crops_per_image=1, rotations=(0, 90))


def tiny_tuples(n=6, size=32, k=4):
    return synthesize_dataset(toy_segmentation_set(n, seed=1, size=size, k_classes=k), n, seed=2)


def cfg(task, **kw):
    model = {
        "cd": CSCDNetConfig(encoder=TINY, correlation_max_disp=1),
        "sscd": SSCDNetConfig(encoder=TINY, num_classes=4),
        "csscd": CSSCDNetConfig(encoder=TINY, correlation_max_disp=1, num_classes=4),
    }[task]
    base = dict(task=task, seed=0, model=model, batch_size=2, iterations=10)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig(task="cd", seed=0)
        assert (c.batch_size, c.iterations, c.lr) == (32, 30_000, 2e-4)
        assert TrainConfig(task="sscd", seed=0).iterations == 100_000
        assert c.checkpoint_every == 3000

    def test_toy_preset(self):
        c = toy_config("cd", 1)
        assert c.batch_size == 8 and c.iterations == 2000
        assert c.model.encoder.stage_widths == (16, 32, 64, 128)

    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"iterations": 0}, {"task": "seg"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**{"task": "cd", "seed": 0, **kw})

    def test_text_echo(self):
        text = cfg("sscd").as_text()
        assert "batch_size=2" in text and "kind=sscdnet" in text and "num_classes=4" in text


class TestLoop:
    def test_first_losses_bit_identical(self):
        data = tiny_pairs()
        a = train(data, cfg("cd"))
        b = train(data, cfg("cd"))
        assert a.losses == b.losses
        assert len(a.losses) == 10

    def test_seed_changes_trace(self):
        data = tiny_pairs()
        assert train(data, cfg("cd", iterations=3)).losses != train(data, cfg("cd", seed=1, iterations=3)).losses

    def test_zero_lr_keeps_parameters(self):
        data = tiny_tuples()
        from sscd.networks import build_model

        c = cfg("sscd", lr=0.0, iterations=5)
        before = {k: v.data.copy() for k, v in build_model(c.kind, c.model, c.seed).params.items()}
        res = train(data, c)
        for k, v in res.model.params.items():
            np.testing.assert_array_equal(v.data, before[k], err_msg=k)

    def test_loss_decreases(self):
        res = train(tiny_pairs(), cfg("cd", iterations=40, lr=2e-3))
        assert np.mean(res.losses[-5:]) < np.mean(res.losses[:5])

    def test_augmentation_is_live(self):
        data = tiny_tuples()
        off = train(data, cfg("sscd", iterations=6))
        on = train(data, cfg("sscd", iterations=6, augment=AugmentConfig()))
        assert off.losses != on.losses

    def test_class_count_mismatch(self):
        data = tiny_tuples(k=4)
        c = cfg("sscd", model=SSCDNetConfig(encoder=TINY, num_classes=3))
        with pytest.raises(ValueError, match="configured for 3 classes"):
            train(data, c)

    def test_csscd_needs_labels(self):
        pair = generate_toy_scene_pair(0, 32).as_pair("x")
        pair.L1 = pair.L2 = None
        data = extract_patches(pair, crop=32, out=32, crops_per_image=1, rotations=(0,))
        with pytest.raises(ValueError, match="no L1 labels"):
            train(data, cfg("csscd"))

    def test_csscd_runs(self):
        res = train(tiny_pairs(), cfg("csscd", iterations=3))
        assert len(res.losses) == 3 and all(np.isfinite(res.losses))

    def test_divergence_reports_iteration(self):
        data = tiny_tuples()
        for d in data:
            d.I1 = np.full_like(d.I1, np.nan)
        c = cfg("sscd", iterations=3)
        with pytest.raises(TrainingDiverged) as err:
            train(data, c)
        assert err.value.iteration == 1 and err.value.last_checkpoint is None

    def test_empty_dataset(self):
        with pytest.raises(ValueError, match="empty"):
            train([], cfg("sscd"))


class TestCheckpoints:
    def test_cadence_and_manifest(self, tmp_path):
        data = tiny_pairs()
        res = train(data, cfg("cd", iterations=20), out_dir=tmp_path, dataset_hash="abc")
        names = sorted(p.name for p in tmp_path.glob("*.ckpt"))
        assert names == sorted([f"iter{i:07d}.ckpt" for i in range(2, 20, 2)] + ["final.ckpt"])
        man = RunManifest.read(tmp_path / "manifest.txt")
        assert man.losses == res.losses and man.seed == 0 and man.dataset_hash == "abc"
        assert man.checkpoints[-1].endswith("final.ckpt")
        assert "iterations=20" in man.config_text

    def test_final_checkpoint_matches_model(self, tmp_path):
        res = train(tiny_pairs(), cfg("cd", iterations=4), out_dir=tmp_path)
        back = load_weights(tmp_path / "final.ckpt", expected_kind="cscdnet")
        for k, v in res.model.params.items():
            np.testing.assert_array_equal(back.params[k].data, v.data)
        for k, v in res.model.buffers.items():
            np.testing.assert_array_equal(back.buffers[k], v)

    def test_reruns_write_identical_checkpoints(self, tmp_path):
        data = tiny_tuples()
        train(data, cfg("sscd"), out_dir=tmp_path / "a")
        train(data, cfg("sscd"), out_dir=tmp_path / "b")
        assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()


class TestFolds:
    def test_every_item_tested_once(self):
        items = list(range(23))
        seen = []
        for f in range(5):
            tr, te = select_fold(items, cfg("cd", fold=f))
            assert not set(tr) & set(te) and len(tr) + len(te) == 23
            seen += te
        assert sorted(seen) == items

    def test_no_fold_trains_on_everything(self):
        assert select_fold([1, 2, 3], cfg("cd")) == ([1, 2, 3], [])

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            select_fold(list(range(10)), cfg("cd", fold=5))
