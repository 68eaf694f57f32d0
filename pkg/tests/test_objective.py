"""Loss assembly, the LR schedule, and the hand-rolled SGD step."""

import math

import pytest
import torch

from tempossl.objective import (
    ObjectiveConfig,
    ScheduleConfig,
    lr_at,
    overall_loss,
    sgd_momentum_step,
    task_loss,
)


class TestTaskLoss:
    def test_uniform_logits_give_log_label_space(self):
        """Constant logits mean a uniform softmax: CE must equal ln(L)."""
        for L in (2, 3, 4, 6):
            logits = {"k": torch.zeros(10, L)}
            labels = {"k": torch.arange(10) % L}
            total, per_loss, _ = task_loss(logits, labels)
            assert math.isclose(float(total), math.log(L), rel_tol=1e-6)
            assert math.isclose(per_loss["k"], math.log(L), rel_tol=1e-6)

    def test_sum_over_tasks_is_unweighted(self):
        g = torch.Generator().manual_seed(0)
        logits = {
            "a": torch.randn(6, 4, generator=g),
            "b": torch.randn(6, 2, generator=g),
        }
        labels = {"a": torch.randint(0, 4, (6,), generator=g),
                  "b": torch.randint(0, 2, (6,), generator=g)}
        total, per_loss, _ = task_loss(logits, labels)
        assert math.isclose(float(total), per_loss["a"] + per_loss["b"], rel_tol=1e-6)

    def test_accuracy_is_argmax_hit_rate(self):
        logits = {"k": torch.tensor([[2.0, 0.0], [0.0, 2.0], [2.0, 0.0], [2.0, 0.0]])}
        labels = {"k": torch.tensor([0, 1, 1, 0])}
        _, _, accs = task_loss(logits, labels)
        assert accs["k"] == pytest.approx(0.75)

    def test_key_mismatch_rejected(self):
        with pytest.raises(ValueError, match="keys differ"):
            task_loss({"a": torch.zeros(2, 2)}, {"b": torch.zeros(2, dtype=torch.long)})

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            task_loss({"a": torch.zeros(2, 2)}, {"a": torch.tensor([0, 2])})


class TestOverallLoss:
    def test_lambda_scales_task_term_linearly(self):
        lc = torch.tensor(2.0)
        lt = torch.tensor(3.0)
        vals = []
        for lam in (0.0, 1.0, 10.0):
            cfg = ObjectiveConfig(lam=lam)
            vals.append(float(overall_loss(lc, lt, cfg)))
        assert vals[0] == pytest.approx(2.0)
        assert vals[1] == pytest.approx(5.0)
        assert vals[2] == pytest.approx(32.0)
        # collinear in lambda
        assert vals[2] - vals[0] == pytest.approx(10 * (vals[1] - vals[0]))

    def test_task_only_mode_is_unscaled(self):
        cfg = ObjectiveConfig(lam=10.0, contrast_enabled=False, task_enabled=True)
        out = overall_loss(None, torch.tensor(3.0), cfg)
        assert float(out) == pytest.approx(3.0)

    def test_contrast_only_ignores_task(self):
        cfg = ObjectiveConfig(task_enabled=False)
        out = overall_loss(torch.tensor(2.0), None, cfg)
        assert float(out) == pytest.approx(2.0)

    def test_lambda_zero_deactivates_task_path(self):
        assert not ObjectiveConfig(lam=0.0).task_path_active
        assert ObjectiveConfig(lam=1e-9).task_path_active
        assert not ObjectiveConfig(task_enabled=False).task_path_active

    def test_non_finite_loss_rejected(self):
        with pytest.raises(FloatingPointError):
            overall_loss(torch.tensor(float("inf")), None, ObjectiveConfig(task_enabled=False))


class TestSchedule:
    CFG = ScheduleConfig(base_lr=0.1, warmup_epochs=2, total_epochs=10)

    def test_first_step_is_one_warmup_increment(self):
        lr = lr_at(0, 50, self.CFG)
        assert lr == pytest.approx(0.1 * 1 / 100)

    def test_end_of_warmup_reaches_base(self):
        lr = lr_at(2 * 50 - 1, 50, self.CFG)
        assert lr == pytest.approx(0.1)

    def test_final_step_is_exactly_zero(self):
        assert lr_at(10 * 50 - 1, 50, self.CFG) == 0.0

    def test_cosine_midpoint(self):
        """Halfway through decay the rate is base/2."""
        warm, total = 100, 500
        mid = warm + (total - warm) // 2
        lr = lr_at(mid - 1, 50, self.CFG)  # t = 0.5 exactly at step warm+200-1
        assert lr == pytest.approx(0.05)

    def test_monotone_after_warmup(self):
        lrs = [lr_at(s, 50, self.CFG) for s in range(100, 500)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_step_beyond_end_rejected(self):
        with pytest.raises(ValueError, match="beyond"):
            lr_at(500, 50, self.CFG)


class TestSgdMomentumStep:
    def test_hand_recursion_two_steps(self):
        """v=g; p-=lr*g, then v=m*g+g2 — checked against by-hand algebra."""
        p = {"w": torch.tensor([1.0])}
        v = {"w": torch.zeros(1)}
        g1 = {"w": torch.tensor([0.5])}
        sgd_momentum_step(p, g1, v, lr=0.1, momentum=0.9, weight_decay=0.0)
        assert p["w"].item() == pytest.approx(1.0 - 0.1 * 0.5)
        g2 = {"w": torch.tensor([0.5])}
        sgd_momentum_step(p, g2, v, lr=0.1, momentum=0.9, weight_decay=0.0)
        # v2 = 0.9*0.5 + 0.5 = 0.95; p = 0.95 - 0.1*0.95
        assert v["w"].item() == pytest.approx(0.95)
        assert p["w"].item() == pytest.approx(1.0 - 0.05 - 0.095)

    def test_weight_decay_enters_gradient(self):
        p = {"w": torch.tensor([2.0])}
        v = {"w": torch.zeros(1)}
        sgd_momentum_step(p, {"w": torch.zeros(1)}, v, lr=0.1, momentum=0.0, weight_decay=0.01)
        # effective grad = 0 + 0.01*2
        assert p["w"].item() == pytest.approx(2.0 - 0.1 * 0.02)

    def test_matches_torch_sgd(self):
        """Several random steps agree with torch.optim.SGD to float precision."""
        torch.manual_seed(0)
        w0 = torch.randn(7, 3)
        mine = {"w": w0.clone()}
        vel = {"w": torch.zeros_like(w0)}
        theirs = w0.clone().requires_grad_(True)
        opt = torch.optim.SGD([theirs], lr=0.05, momentum=0.9, weight_decay=1e-4)
        for i in range(5):
            g = torch.randn(7, 3, generator=torch.Generator().manual_seed(i))
            sgd_momentum_step(mine, {"w": g.clone()}, vel, 0.05, 0.9, 1e-4)
            opt.zero_grad()
            theirs.grad = g.clone()
            opt.step()
        torch.testing.assert_close(mine["w"], theirs.detach(), rtol=1e-6, atol=1e-7)

    def test_missing_grads_leave_param_and_velocity_alone(self):
        p = {"a": torch.ones(2), "b": torch.ones(2)}
        v = {"a": torch.full((2,), 0.3), "b": torch.zeros(2)}
        sgd_momentum_step(p, {"b": torch.ones(2)}, v, 0.1, 0.9, 0.0)
        torch.testing.assert_close(p["a"], torch.ones(2))
        torch.testing.assert_close(v["a"], torch.full((2,), 0.3))
        assert p["b"].mean().item() != 1.0

    def test_unknown_grad_key_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            sgd_momentum_step({"a": torch.ones(1)}, {"zz": torch.ones(1)},
                              {"a": torch.zeros(1)}, 0.1, 0.9, 0.0)
