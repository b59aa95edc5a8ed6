"""
Acceptance runs over many seeds; enable with --runslow
"""

import itertools
import math
import os

import numpy as np
import pytest
import torch

from floss.ablation import Ablation, parse_axes
from floss.core.assignment import pit_assign
from floss.core.flowpath import WrappedDrift, interpolate_stacks, make_pair
from floss.core.geometry import DTYPE, row_mean_deviation
from floss.core.losses import TimeWeighting, loss_db, loss_normalized, loss_raw, sample_times
from floss.core.noiseshape import NoiseShaper
from floss.core.sampler import parse_schedule, separate
from floss.nn.eqnet import EqNet, NetConfig
from floss.pipeline.evaluate import Evaluator
from floss.pipeline.trainer import Trainer
from floss.utils.config import ConfigManager
from tests.conftest import TINY_LEN, TINY_NET, randomize
from tests.utils.test_helpers import ConstantDrift, oracles


DESK_CONFIG = os.path.join(os.path.dirname(__file__), os.pardir, "config", "config.yaml")


def desk_config(directory, *overrides):
    """The shipped default config, writing into a temporary directory"""
    return ConfigManager(DESK_CONFIG, [
        f"train.output_dir={os.path.join(directory, 'run')}",
        f"logging.file={os.path.join(directory, 'floss.log')}",
        "logging.progress=false",
        *overrides,
    ]).get_config()


@pytest.mark.slow
class TestAcceptance:
    """Invariants checked over many random draws"""

    def test_mixture_consistency_100_mixtures(self, tiny_net):
        """Test that every 25-step estimate sums to its mixture"""
        schedule = parse_schedule("linear:25")
        for seed in range(100):
            g = torch.Generator().manual_seed(seed)
            y = torch.randn(TINY_LEN, generator=g, dtype=DTYPE)
            shaper = NoiseShaper.from_mean("envelope", y / 2, 16000, env_window_ms=16.0)
            est = separate(tiny_net, y, shaper, schedule, seed)
            assert row_mean_deviation(est.data, y / 2) <= 1e-6

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_equivariance_all_permutations(self, k):
        """Test every permutation over 20 random networks and inputs"""
        for draw in range(20):
            net = randomize(EqNet(NetConfig(seed=draw, **TINY_NET)), seed=draw)
            g = torch.Generator().manual_seed(100 * k + draw)
            t = torch.rand(1, generator=g, dtype=DTYPE)
            x = torch.randn(1, k, TINY_LEN, generator=g, dtype=DTYPE)
            cond = torch.randn(1, TINY_LEN, generator=g, dtype=DTYPE)
            with torch.no_grad():
                base = net(t, x, cond)
                for perm in itertools.permutations(range(k)):
                    out = net(t, x[:, list(perm)], cond)
                    rel = float((out - base[:, list(perm)]).norm() / base.norm())
                    assert rel <= 1e-10

    @pytest.mark.parametrize("kind", ["snr_uniform", "mostly_uniform"])
    def test_zero_time_mass_million_draws(self, kind):
        """Test P(t = 0) = 0.01 over 10^6 draws"""
        t = sample_times(TimeWeighting(kind=kind, p0=0.01), 10 ** 6, torch.Generator().manual_seed(0))
        assert abs(float((t == 0).double().mean()) - 0.01) <= 3e-4

    def test_loss_identities_1000_samples(self):
        """Test raw/normalized/dB identities on random pairs, drifts, times and permutations"""
        for seed in range(1000):
            g = torch.Generator().manual_seed(seed)
            k = 2 + seed % 3
            s = torch.randn(k, 24, generator=g, dtype=DTYPE)
            pair = make_pair(s, NoiseShaper.constant(24), g)
            drift = WrappedDrift(ConstantDrift(torch.randn(k, 24, generator=g, dtype=DTYPE)))
            perm = tuple(int(i) for i in torch.randperm(k, generator=g))
            t = float(torch.rand(1, generator=g, dtype=DTYPE))
            raw = float(loss_raw(drift, pair, perm, t))
            norm = float(loss_normalized(drift, pair, perm, t))
            db = float(loss_db(drift, pair, perm, t))
            denom = float(((pair.x1 - pair.x0) ** 2).sum())
            assert db == pytest.approx(10 * math.log10(norm), rel=1e-10, abs=1e-12)
            assert raw == pytest.approx(norm * denom, rel=1e-10)

            x1p = pair.x1[list(perm)]
            v = drift(torch.tensor([t], dtype=DTYPE), interpolate_stacks(pair.x0, x1p, t).unsqueeze(0),
                      pair.cond.mean.unsqueeze(0))[0]
            assert raw == pytest.approx(oracles.scalar_loop_loss(v, pair.x0, x1p, pair.x1, "raw"), rel=1e-9)

    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_pit_against_enumeration(self, tiny_net, k):
        """Test PIT with a real network against K! enumeration"""
        drift = WrappedDrift(tiny_net)
        for seed in range(20):
            g = torch.Generator().manual_seed(seed)
            s = torch.randn(k, TINY_LEN, generator=g, dtype=DTYPE)
            pair = make_pair(s, NoiseShaper.constant(TINY_LEN), g)
            with torch.no_grad():
                v0 = drift(torch.zeros(1, dtype=DTYPE), pair.x0.unsqueeze(0), pair.cond.mean.unsqueeze(0))[0]
            assert pit_assign(drift, pair).perm == oracles.brute_force_pit(v0, pair.x0, pair.x1)

    def test_training_lowers_db_loss(self, temp_dir):
        """Test a drop of at least 3 dB over 200 steps of the default config"""
        config = desk_config(temp_dir, "train.steps=200")
        result = Trainer(config).train()
        assert result.steps_run == 200
        assert np.mean(result.losses[:10]) - np.mean(result.losses[-10:]) >= 3.0
        assert os.path.exists(result.checkpoint_path)

    def test_default_run_beats_mixture_baseline(self, temp_dir):
        """Test a gain of at least 5 dB SI-SDR over the mixture after a full default run"""
        config = desk_config(temp_dir)
        assert (config.data.n_sources, config.loss.kind, config.noise.kind) == (2, "db", "envelope")
        assert config.sample.schedule == "linear:25"
        result = Trainer(config).train()
        model = EqNet.from_checkpoint(result.checkpoint_path, use_ema=True)
        model.eval()
        report = Evaluator(model, config).evaluate()
        assert report.improvement >= 5.0

    def test_loss_ablation_ordering(self, temp_dir):
        """Test SI-SDR(db) >= SI-SDR(normalized) >= SI-SDR(raw) on the default task"""
        config = desk_config(temp_dir)
        rows = Ablation(config, parse_axes(["loss=raw,normalized,db"]), os.path.join(temp_dir, "grid")).run()
        score = {r.loss: r.sisdr for r in rows}
        assert score["db"] >= score["normalized"] >= score["raw"]
