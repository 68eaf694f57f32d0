"""NCE pair loss against closed forms, and the two negative stores."""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from tempossl.contrastive import (
    ContrastiveConfig,
    MemoryBank,
    MomentumQueue,
    contrast_loss,
    cosine_similarity,
    momentum_update,
    nce_pair_loss,
)
from tempossl.rng import named_stream


def unit(x):
    return F.normalize(torch.as_tensor(x, dtype=torch.float64), dim=-1)


def rand_unit(shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return F.normalize(torch.randn(*shape, generator=g, dtype=torch.float64), dim=-1)


class TestPairLoss:
    def test_identical_positive_orthogonal_negatives(self):
        """Closed form: pos sim 1, all K neg sims 0.

        loss = log(e^{1/t} + K) - 1/t
        """
        tau = 0.07
        d, K = 32, 16
        z = torch.zeros(d, dtype=torch.float64)
        z[0] = 1.0
        negs = torch.eye(d, dtype=torch.float64)[1 : K + 1]
        got = float(nce_pair_loss(z, z.clone(), negs, tau))
        want = math.log(math.exp(1 / tau) + K) - 1 / tau
        assert got == pytest.approx(want, abs=1e-9)

    def test_single_negative_closed_form(self):
        """loss = log(1 + e^{(s_neg - s_pos)/t}) for one negative."""
        tau = 0.07
        z_view = unit([1.0, 0.0])
        z_orig = unit([1.0, 1.0])
        neg = unit([[0.0, 1.0]])
        s_pos = 1.0 / math.sqrt(2)
        s_neg = 0.0
        want = math.log(1 + math.exp((s_neg - s_pos) / tau))
        got = float(nce_pair_loss(z_view, z_orig, neg, tau))
        assert got == pytest.approx(want, rel=1e-12)

    def test_strictly_positive(self):
        z = rand_unit((8, 16), seed=1)
        o = rand_unit((8, 16), seed=2)
        n = rand_unit((32, 16), seed=3)
        assert float(nce_pair_loss(z, o, n, 0.07)) > 0.0

    def test_batch_equals_mean_of_singles(self):
        B, K, d = 5, 7, 12
        z = rand_unit((B, d), seed=4)
        o = rand_unit((B, d), seed=5)
        n = rand_unit((B, K, d), seed=6)
        batch = float(nce_pair_loss(z, o, n, 0.07))
        singles = [float(nce_pair_loss(z[b], o[b], n[b], 0.07)) for b in range(B)]
        assert batch == pytest.approx(np.mean(singles), abs=1e-12)

    def test_shared_negatives_broadcast(self):
        B, K, d = 4, 9, 8
        z = rand_unit((B, d), seed=7)
        o = rand_unit((B, d), seed=8)
        n = rand_unit((K, d), seed=9)
        a = float(nce_pair_loss(z, o, n, 0.07))
        b = float(nce_pair_loss(z, o, n[None].expand(B, K, d), 0.07))
        assert a == pytest.approx(b, abs=1e-14)

    def test_huge_inverse_temperature_no_overflow(self):
        z = rand_unit((3, 8), seed=10)
        o = rand_unit((3, 8), seed=11)
        n = rand_unit((16, 8), seed=12)
        loss = float(nce_pair_loss(z, o, n, 1e-4))
        assert math.isfinite(loss)

    def test_rejects_unnormalized(self):
        z = torch.full((2, 4), 0.5, dtype=torch.float64)  # norm 1 exactly
        bad = z * 2
        with pytest.raises(ValueError, match="unit-norm"):
            nce_pair_loss(bad, z, rand_unit((3, 4)), 0.07)

    def test_rejects_bad_temperature(self):
        z = rand_unit((2, 4), seed=13)
        with pytest.raises(ValueError, match="temperature"):
            nce_pair_loss(z, z, rand_unit((3, 4)), 0.0)


class TestContrastLoss:
    @pytest.mark.parametrize("n_views", [1, 2, 4])
    def test_equals_sum_of_pair_losses(self, n_views):
        B, K, d = 6, 11, 16
        views = [rand_unit((B, d), seed=20 + i) for i in range(n_views)]
        orig = rand_unit((B, d), seed=30)
        negs = rand_unit((B, K, d), seed=31)
        total = float(contrast_loss(views, orig, negs, 0.07))
        brute = sum(float(nce_pair_loss(v, orig, negs, 0.07)) for v in views)
        assert total == pytest.approx(brute, abs=1e-10)

    def test_empty_views_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            contrast_loss([], rand_unit((2, 4)), rand_unit((3, 4)), 0.07)


class TestCosine:
    def test_unit_vectors_are_dot_products(self):
        u = rand_unit((5, 8), seed=1)
        v = rand_unit((5, 8), seed=2)
        torch.testing.assert_close(cosine_similarity(u, v), (u * v).sum(-1))

    def test_scale_invariant(self):
        u = torch.tensor([3.0, 4.0])
        v = torch.tensor([4.0, 3.0])
        assert float(cosine_similarity(u, v)) == pytest.approx(
            float(cosine_similarity(10 * u, 0.1 * v))
        )

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="zero vectors"):
            cosine_similarity(torch.zeros(3), torch.ones(3))


class TestMemoryBank:
    def make(self, n=20, d=8, momentum=0.5):
        return MemoryBank(n, d, momentum, named_stream(0, "init"))

    def test_initialized_unit_norm(self):
        bank = self.make()
        torch.testing.assert_close(
            bank.bank.norm(dim=1), torch.ones(20), rtol=0, atol=1e-6
        )

    def test_update_is_normalized_ema(self):
        bank = self.make(momentum=0.5)
        ids = torch.tensor([3])
        old = bank.bank[3].clone()
        z = F.normalize(torch.ones(1, 8), dim=-1)
        bank.update(ids, z)
        want = F.normalize(0.5 * old[None] + 0.5 * z, dim=-1)[0]
        torch.testing.assert_close(bank.bank[3], want)

    def test_update_touches_only_given_slots(self):
        bank = self.make()
        before = bank.bank.clone()
        bank.update(torch.tensor([0, 5]), F.normalize(torch.randn(2, 8), dim=-1))
        untouched = [i for i in range(20) if i not in (0, 5)]
        torch.testing.assert_close(bank.bank[untouched], before[untouched])

    def test_negatives_never_include_own_slot(self):
        bank = self.make(n=10)
        ids = torch.arange(10)
        negs = bank.sample_negatives(ids, k=9, rng=named_stream(0, "negatives"))
        assert negs.shape == (10, 9, 8)
        for b in range(10):
            own = bank.bank[b]
            sims = (negs[b] @ own).abs()
            # own slot would match itself with similarity exactly 1
            assert not torch.any(torch.isclose(negs[b], own[None]).all(dim=1))
        del sims

    def test_negatives_without_replacement(self):
        bank = self.make(n=10)
        negs = bank.sample_negatives(torch.tensor([4]), k=9, rng=named_stream(1, "negatives"))
        rows = negs[0]
        pair_sims = rows @ rows.T - torch.eye(9)
        assert not torch.any(torch.isclose(pair_sims, torch.ones(())))

    def test_too_many_negatives_rejected(self):
        bank = self.make(n=5)
        with pytest.raises(ValueError, match="cannot sample"):
            bank.sample_negatives(torch.tensor([0]), k=5, rng=named_stream(0, "negatives"))

    def test_bad_ids_rejected(self):
        bank = self.make(n=5)
        with pytest.raises(IndexError):
            bank.lookup(torch.tensor([5]))


class TestMomentumQueue:
    def test_fifo_matches_list_oracle(self):
        """1000 randomized pushes against a plain-list reference."""
        cap, d = 64, 4
        q = MomentumQueue(cap, d)
        ref: list[np.ndarray] = []
        rng = named_stream(0, "negatives")
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            keys = rng.normal(size=(n, d)).astype(np.float32)
            q.push(torch.from_numpy(keys))
            ref.extend(keys)
            ref = ref[-cap:]
            np.testing.assert_array_equal(q.contents().numpy(), np.stack(ref))

    def test_oversized_push_keeps_newest(self):
        q = MomentumQueue(4, 2)
        keys = torch.arange(12, dtype=torch.float32).reshape(6, 2)
        q.push(keys)
        np.testing.assert_array_equal(q.contents().numpy(), keys[-4:].numpy())

    def test_len_grows_to_capacity(self):
        q = MomentumQueue(8, 2)
        assert len(q) == 0
        q.push(torch.ones(3, 2))
        assert len(q) == 3
        q.push(torch.ones(10, 2))
        assert len(q) == 8

    def test_negatives_empty_queue_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            MomentumQueue(8, 2).negatives()

    def test_prefill_fills_with_unit_vectors(self):
        q = MomentumQueue(16, 6)
        q.prefill(named_stream(0, "negatives"))
        assert len(q) == 16
        torch.testing.assert_close(
            q.negatives().norm(dim=1), torch.ones(16), rtol=0, atol=1e-6
        )


class TestMomentumUpdate:
    def test_parameterwise_ema(self):
        key = torch.nn.Linear(4, 3)
        query = torch.nn.Linear(4, 3)
        kw = key.weight.detach().clone()
        momentum_update(key, query, 0.9)
        want = 0.9 * kw + 0.1 * query.weight.detach()
        torch.testing.assert_close(key.weight.detach(), want)

    def test_momentum_one_excluded(self):
        with pytest.raises(ValueError, match="momentum"):
            momentum_update(torch.nn.Linear(2, 2), torch.nn.Linear(2, 2), 1.0)

    def test_structure_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            momentum_update(torch.nn.Linear(2, 2), torch.nn.Linear(3, 2), 0.9)


def test_config_validation():
    ContrastiveConfig().validate()
    with pytest.raises(ValueError, match="variant"):
        ContrastiveConfig(variant="simclr").validate()
    with pytest.raises(ValueError, match="temperature"):
        ContrastiveConfig(temperature=-1).validate()
