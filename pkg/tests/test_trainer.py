import dataclasses
import math

import pytest
import torch

from xlkd.checkpoint import CheckpointError, CheckpointMismatchError
from xlkd.model import EncoderConfig, build_bundle, init_encoder, parameter_checksum, all_named_parameters
from xlkd.objectives import ObjectiveConfig
from xlkd.trainer import (
    LOG_COLUMNS,
    NonFiniteGradientError,
    TrainConfig,
    TrainerError,
    TrainingState,
    adamw_step,
    clip_gradients,
    encode_for_training,
    grad_check,
    load_checkpoint,
    lr_at_step,
    pad_batch,
    save_checkpoint,
    train,
)

from oracles import (
    ADAMW_FRESH_UNIT_GRAD_DELTA,
    LR_MIDWAY_DECAY,
    adamw_single_step_oracle,
)


def sched_config(peak=2e-5, warmup=0.1):
    return TrainConfig(peak_lr=peak, warmup_frac=warmup)


class TestSchedule:
    def test_peak_hit_exactly_at_warmup_boundary(self):
        assert lr_at_step(100, 1000, sched_config()) == 2e-5

    def test_endpoints_are_zero(self):
        cfg = sched_config()
        assert lr_at_step(0, 1000, cfg) == 0.0
        assert lr_at_step(1000, 1000, cfg) == 0.0

    def test_frozen_midway_decay_value(self):
        # halfway through decay: 2e-5 * 450 / 900 is exact in binary
        assert lr_at_step(550, 1000, sched_config()) == LR_MIDWAY_DECAY == 1e-5

    def test_piecewise_linear_against_closed_form(self):
        cfg = sched_config()
        total = 1000
        warmup = cfg.warmup_frac * total
        for step in range(0, total + 1, 10):  # 101 sampled steps
            if step <= warmup:
                want = cfg.peak_lr * step / warmup
            else:
                want = cfg.peak_lr * (total - step) / (total - warmup)
            assert lr_at_step(step, total, cfg) == want

    def test_monotone_up_then_down(self):
        cfg = sched_config()
        values = [lr_at_step(s, 200, cfg) for s in range(201)]
        peak = max(range(201), key=lambda s: values[s])
        assert all(values[i] < values[i + 1] for i in range(peak))
        assert all(values[i] > values[i + 1] for i in range(peak, 200))

    def test_range_errors(self):
        cfg = sched_config()
        with pytest.raises(TrainerError):
            lr_at_step(-1, 100, cfg)
        with pytest.raises(TrainerError):
            lr_at_step(101, 100, cfg)
        with pytest.raises(TrainerError):
            lr_at_step(0, 0, cfg)

    def test_config_validation(self):
        with pytest.raises(TrainerError):
            TrainConfig(warmup_frac=0.0)
        with pytest.raises(TrainerError):
            TrainConfig(warmup_frac=1.0)
        with pytest.raises(TrainerError):
            TrainConfig(peak_lr=0.0)
        with pytest.raises(TrainerError):
            TrainConfig(epochs=0)


class TestAdamW:
    def test_fresh_unit_gradient_step(self):
        cfg = TrainConfig(peak_lr=0.01, weight_decay=0.0)
        p = torch.tensor([1.0], dtype=torch.float64)
        state = TrainingState()
        adamw_step([("p", p)], [torch.tensor([1.0], dtype=torch.float64)], state, 0.01, cfg)
        assert state.step == 1
        assert abs(float(p) - (1.0 + ADAMW_FRESH_UNIT_GRAD_DELTA)) < 1e-15

    def test_decay_only_when_gradient_zero(self):
        cfg = TrainConfig(peak_lr=0.01, weight_decay=0.01)
        p = torch.tensor([2.0], dtype=torch.float64)
        adamw_step([("p", p)], [torch.zeros(1, dtype=torch.float64)], TrainingState(), 0.01, cfg)
        assert float(p) == 2.0 * (1.0 - 0.01 * 0.01)

    def test_matches_single_step_oracle(self):
        cfg = TrainConfig(peak_lr=0.003, weight_decay=0.02)
        g = torch.Generator().manual_seed(1)
        p = torch.randn(7, generator=g, dtype=torch.float64)
        grad = torch.randn(7, generator=g, dtype=torch.float64)
        want_p, want_m, want_v = [], [], []
        for pi, gi in zip(p.tolist(), grad.tolist()):
            np_, nm, nv = adamw_single_step_oracle(
                pi, gi, 0.0, 0.0, t=1, lr=0.003,
                beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, weight_decay=0.02,
            )
            want_p.append(np_), want_m.append(nm), want_v.append(nv)
        state = TrainingState()
        adamw_step([("p", p)], [grad], state, 0.003, cfg)
        assert torch.allclose(p, torch.tensor(want_p, dtype=torch.float64), rtol=1e-12)
        assert torch.allclose(state.m["p"], torch.tensor(want_m, dtype=torch.float64), rtol=1e-12)
        assert torch.allclose(state.v["p"], torch.tensor(want_v, dtype=torch.float64), rtol=1e-12)

    def test_multi_step_tracks_torch_adamw(self):
        cfg = TrainConfig(peak_lr=0.01, weight_decay=0.05)
        g = torch.Generator().manual_seed(3)
        start = torch.randn(4, 5, generator=g, dtype=torch.float64)
        mine = start.clone()
        theirs = start.clone().requires_grad_(True)
        opt = torch.optim.AdamW(
            [theirs], lr=0.01, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps, weight_decay=0.05
        )
        state = TrainingState()
        for _ in range(6):
            grad = torch.randn(4, 5, generator=g, dtype=torch.float64)
            adamw_step([("w", mine)], [grad], state, 0.01, cfg)
            theirs.grad = grad.clone()
            opt.step()
        assert torch.allclose(mine, theirs.detach(), rtol=1e-10, atol=1e-14)

    def test_moment_state_reused_across_steps(self):
        cfg = TrainConfig(peak_lr=0.01, weight_decay=0.0)
        p = torch.zeros(1, dtype=torch.float64)
        state = TrainingState()
        for _ in range(3):
            adamw_step([("p", p)], [torch.ones(1, dtype=torch.float64)], state, 0.01, cfg)
        assert state.step == 3
        want_m = 1.0 - cfg.beta1**3  # geometric accumulation of a constant gradient
        assert abs(float(state.m["p"]) - want_m) < 1e-15

    def test_grad_count_mismatch(self):
        with pytest.raises(TrainerError):
            adamw_step([("p", torch.ones(1))], [], TrainingState(), 0.01, TrainConfig())


class TestClipGradients:
    def test_large_norm_scaled_down(self):
        g = [torch.full((3,), 4.0, dtype=torch.float64)]
        norm = clip_gradients(g, max_norm=1.0)
        assert abs(norm - math.sqrt(48.0)) < 1e-12
        new_norm = float(torch.sqrt((g[0] ** 2).sum()))
        assert new_norm <= 1.0 and abs(new_norm - 1.0) < 1e-5

    def test_small_norm_untouched(self):
        g = [torch.tensor([0.3, 0.4], dtype=torch.float64)]
        before = g[0].clone()
        assert clip_gradients(g, max_norm=1.0) == pytest.approx(0.5)
        assert torch.equal(g[0], before)

    def test_zero_max_norm_disables(self):
        g = [torch.full((2,), 100.0, dtype=torch.float64)]
        before = g[0].clone()
        clip_gradients(g, max_norm=0.0)
        assert torch.equal(g[0], before)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteGradientError):
            clip_gradients([torch.tensor([float("nan")])], 1.0)


class TestGradCheck:
    def test_clean_analytic_gradient_passes(self):
        w = torch.randn(6, dtype=torch.float64, requires_grad=True)
        b = torch.randn(1, dtype=torch.float64, requires_grad=True)

        def loss_fn():
            return (w**3).sum() * torch.sigmoid(b).squeeze()

        err = grad_check(loss_fn, [("w", w), ("b", b)], probe_count=8, seed=0)
        assert err < 1e-6

    def test_probes_are_deterministic(self):
        w = torch.randn(10, dtype=torch.float64, requires_grad=True)

        def loss_fn():
            return (w.exp()).sum()

        a = grad_check(loss_fn, [("w", w)], probe_count=5, seed=3)
        b = grad_check(loss_fn, [("w", w)], probe_count=5, seed=3)
        assert a == b


@pytest.fixture(scope="module")
def tiny_setup(tiny_corpus, tiny_vocabs):
    teacher_vocab, student_vocab = tiny_vocabs
    teacher = init_encoder(
        EncoderConfig(
            vocab_size=len(teacher_vocab), layers=2, hidden_dim=16, heads=2,
            ffn_dim=32, seed=11,
        )
    )
    teacher.requires_grad_(False).eval()
    datasets = {lang: pairs[:8] for lang, pairs in tiny_corpus.items()}
    return teacher, datasets, student_vocab, teacher_vocab


def fresh_bundle(teacher, student_vocab, seed=0):
    return build_bundle(
        teacher,
        EncoderConfig(
            vocab_size=len(student_vocab), layers=2, hidden_dim=16, heads=2,
            ffn_dim=32, seed=seed,
        ),
        head_mid_dim=8,
        head_out_dim=4,
        seed=seed,
    )


def tiny_train_config(**kw):
    base = dict(peak_lr=1e-3, batch_size=4, epochs=2, seed=5, max_len=64)
    base.update(kw)
    return TrainConfig(**base)


class TestEncodeForTraining:
    def test_fields_consistent(self, tiny_setup):
        _, datasets, student_vocab, teacher_vocab = tiny_setup
        pair = datasets["syn1"][0]
        enc = encode_for_training(pair, student_vocab, teacher_vocab, max_len=64)
        assert len(enc.source_word_index) == enc.concat.source_span[1] - enc.concat.source_span[0]
        assert len(enc.alignment.pairs) == len(pair.source.split())
        for s_pos, t_pos in enc.alignment.pairs:
            assert 0 < s_pos < enc.concat.source_span[1]
            assert 0 < t_pos < len(enc.teacher_ids)

    def test_pad_batch_shapes(self):
        ids, mask = pad_batch([[1, 2, 3], [1, 2], [1]])
        assert ids.shape == (3, 3) and mask.shape == (3, 3)
        assert ids[1, 2] == 0 and not mask[1, 2]
        assert mask[:, 0].all()


class TestTrainLoop:
    def test_history_length_and_determinism(self, tiny_setup):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        cfg = tiny_train_config()
        histories = []
        for _ in range(2):
            bundle = fresh_bundle(teacher, student_vocab)
            state = train(bundle, datasets, student_vocab, teacher_vocab, cfg)
            histories.append([dataclasses.astuple(h) for h in state.history])
        assert len(histories[0]) == 8  # ceil(8*2/4) = 4 batches/epoch, 2 epochs
        assert histories[0] == histories[1]

    def test_loss_components_all_active(self, tiny_setup):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        bundle = fresh_bundle(teacher, student_vocab)
        state = train(bundle, datasets, student_vocab, teacher_vocab, tiny_train_config(epochs=1))
        first = state.history[0]
        for v in (first.tlm, first.xwcl, first.senta, first.struca):
            assert v > 0.0
        assert first.total == pytest.approx(first.tlm + first.xwcl + first.senta + first.struca)

    def test_disabled_objectives_log_exact_zero(self, tiny_setup):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        cfg = tiny_train_config(
            epochs=1, objectives=ObjectiveConfig().disable("SentA", "StrucA")
        )
        bundle = fresh_bundle(teacher, student_vocab)
        state = train(bundle, datasets, student_vocab, teacher_vocab, cfg)
        assert all(h.senta == 0.0 and h.struca == 0.0 for h in state.history)
        assert all(h.tlm > 0.0 for h in state.history)

    def test_parameters_change_and_teacher_does_not(self, tiny_setup):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        bundle = fresh_bundle(teacher, student_vocab)
        student_before = parameter_checksum(
            [(n, p) for n, p in all_named_parameters(bundle) if n.startswith("student_")]
        )
        teacher_before = parameter_checksum(list(teacher.named_parameters()))
        train(bundle, datasets, student_vocab, teacher_vocab, tiny_train_config(epochs=1))
        student_after = parameter_checksum(
            [(n, p) for n, p in all_named_parameters(bundle) if n.startswith("student_")]
        )
        assert student_after != student_before
        assert parameter_checksum(list(teacher.named_parameters())) == teacher_before

    def test_log_file_columns(self, tiny_setup, tmp_path):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        bundle = fresh_bundle(teacher, student_vocab)
        train(
            bundle, datasets, student_vocab, teacher_vocab,
            tiny_train_config(epochs=1), out_dir=tmp_path,
        )
        lines = (tmp_path / "train_log.tsv").read_text().splitlines()
        assert lines[0].split("\t") == list(LOG_COLUMNS)
        assert len(lines) == 1 + 4
        row = lines[1].split("\t")
        assert row[0] == "0" and len(row) == len(LOG_COLUMNS)

    def test_epoch_and_best_checkpoints_written(self, tiny_setup, tmp_path):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        bundle = fresh_bundle(teacher, student_vocab)
        train(
            bundle, datasets, student_vocab, teacher_vocab,
            tiny_train_config(), out_dir=tmp_path,
        )
        assert (tmp_path / "epoch-000.ckpt").exists()
        assert (tmp_path / "epoch-001.ckpt").exists()
        assert (tmp_path / "best.ckpt").exists()

    def test_empty_language_rejected(self, tiny_setup):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        bad = dict(datasets)
        bad["syn1"] = []
        bundle = fresh_bundle(teacher, student_vocab)
        with pytest.raises(TrainerError):
            train(bundle, bad, student_vocab, teacher_vocab, tiny_train_config())


class TestCheckpointRoundtrip:
    def test_save_load_save_byte_identical(self, tiny_setup, tmp_path):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        cfg = tiny_train_config(epochs=1)
        bundle = fresh_bundle(teacher, student_vocab)
        state = train(bundle, datasets, student_vocab, teacher_vocab, cfg)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(bundle, state, p1, cfg)
        loaded_bundle, loaded_state, loaded_cfg = load_checkpoint(p1)
        save_checkpoint(loaded_bundle, loaded_state, p2, loaded_cfg)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_state_matches(self, tiny_setup, tmp_path):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        cfg = tiny_train_config(epochs=1)
        bundle = fresh_bundle(teacher, student_vocab)
        state = train(bundle, datasets, student_vocab, teacher_vocab, cfg)
        path = tmp_path / "s.ckpt"
        save_checkpoint(bundle, state, path, cfg)
        loaded_bundle, loaded_state, loaded_cfg = load_checkpoint(path)
        assert loaded_state.step == state.step
        assert [dataclasses.astuple(h) for h in loaded_state.history] == pytest.approx(
            [dataclasses.astuple(h) for h in state.history], rel=1e-6
        )
        assert loaded_cfg == cfg
        assert parameter_checksum(all_named_parameters(loaded_bundle)) == parameter_checksum(
            all_named_parameters(bundle)
        )
        for name, m in state.m.items():
            assert torch.allclose(loaded_state.m[name], m.float(), rtol=0, atol=0)
        assert not loaded_bundle.teacher_encoder.training
        assert all(not p.requires_grad for p in loaded_bundle.teacher_encoder.parameters())

    def test_resume_replays_identically(self, tiny_setup, tmp_path):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        cfg = tiny_train_config()  # 2 epochs, 4 steps each
        full_bundle = fresh_bundle(teacher, student_vocab)
        full_state = train(
            full_bundle, datasets, student_vocab, teacher_vocab, cfg, out_dir=tmp_path / "full"
        )
        resumed_bundle, resumed_state, resumed_cfg = load_checkpoint(
            tmp_path / "full" / "epoch-000.ckpt"
        )
        assert resumed_state.step == 4
        resumed_state = train(
            resumed_bundle, datasets, student_vocab, teacher_vocab, resumed_cfg,
            state=resumed_state,
        )
        full = [dataclasses.astuple(h) for h in full_state.history]
        redo = [dataclasses.astuple(h) for h in resumed_state.history]
        assert redo[4:] == full[4:]
        assert parameter_checksum(all_named_parameters(resumed_bundle)) == parameter_checksum(
            all_named_parameters(full_bundle)
        )

    def test_expect_mismatch_raises(self, tiny_setup, tmp_path):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        bundle = fresh_bundle(teacher, student_vocab)
        path = tmp_path / "c.ckpt"
        save_checkpoint(bundle, TrainingState(), path)
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, expect={"student_encoder.vocab_size": 9999})

    def test_truncated_file_rejected(self, tiny_setup, tmp_path):
        teacher, datasets, student_vocab, teacher_vocab = tiny_setup
        bundle = fresh_bundle(teacher, student_vocab)
        path = tmp_path / "d.ckpt"
        save_checkpoint(bundle, TrainingState(), path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 64])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "e.ckpt"
        path.write_bytes(b"NOT-A-CKPT\n123\n{}")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
