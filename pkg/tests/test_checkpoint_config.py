import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tgan import checkpoint
from tgan.config import DEFAULTS, ConfigError, RunConfig
from tgan.estimator import TGAN
from tgan.exceptions import FormatError
from tgan.latent import LATENT_KINDS


def random_estimator(rng):
    est = TGAN(
        latent_kind=LATENT_KINDS[rng.integers(0, 3)],
        n_components=int(rng.integers(1, 5)),
        latent_dim=int(rng.integers(1, 5)),
        nu=float(rng.choice([1.0, 3.0, 5.0, 7.5])),
        hidden=int(rng.integers(2, 9)),
        alpha=float(rng.uniform(0, 2)),
        dropout=float(rng.uniform(0, 0.5)),
        random_state=int(rng.integers(0, 2**31)),
    )
    classes = np.sort(rng.choice(20, size=int(rng.integers(1, 5)), replace=False))
    est._init_model(int(rng.integers(1, 6)), classes)
    for _, p in est.model_.named_parameters():
        p.data[...] = rng.normal(scale=10.0 ** rng.integers(-5, 5), size=p.data.shape)
    return est


def parameters(est):
    return [(name, p.data) for name, p in est.model_.named_parameters()]


class TestCheckpoint:
    def test_round_trip_bit_exact(self, rng):
        for _ in range(100):
            est = random_estimator(rng)
            blob = checkpoint.dumps(est)
            back = checkpoint.loads(blob)
            for (n1, a), (n2, b) in zip(parameters(est), parameters(back)):
                assert n1 == n2 and a.tobytes() == b.tobytes()
            np.testing.assert_array_equal(back.classes_, est.classes_)
            assert checkpoint.dumps(back) == blob

    def test_reloaded_model_samples_identically(self, rng):
        est = random_estimator(rng)
        back = checkpoint.loads(checkpoint.dumps(est))
        np.testing.assert_array_equal(est.sample(n_samples=7)[0], back.sample(n_samples=7)[0])

    def test_file_round_trip(self, tmp_path, rng):
        est = random_estimator(rng)
        checkpoint.save(est, tmp_path / "m.tgan")
        assert checkpoint.dumps(checkpoint.load(tmp_path / "m.tgan")) == checkpoint.dumps(est)

    def test_header_layout(self, rng):
        blob = checkpoint.dumps(random_estimator(rng))
        assert blob[:4] == b"TGAN" and struct.unpack_from("<I", blob, 4)[0] == checkpoint.VERSION

    def test_bad_magic(self, rng):
        blob = checkpoint.dumps(random_estimator(rng))
        with pytest.raises(FormatError, match="magic"):
            checkpoint.loads(b"XGAN" + blob[4:])

    def test_version_mismatch(self, rng):
        blob = checkpoint.dumps(random_estimator(rng))
        with pytest.raises(FormatError, match="version 2"):
            checkpoint.loads(blob[:4] + struct.pack("<I", 2) + blob[8:])

    def test_truncated_and_trailing(self, rng):
        blob = checkpoint.dumps(random_estimator(rng))
        with pytest.raises(FormatError):
            checkpoint.loads(blob[:-3])
        with pytest.raises(FormatError, match="trailing"):
            checkpoint.loads(blob + b"\x00")

    def test_records_round_trip(self):
        records = [("a", np.array([1.5, -0.0, np.inf])), ("ü", np.empty(0))]
        back = checkpoint.decode_records(checkpoint.encode_records(records))
        assert [n for n, _ in back] == ["a", "ü"]
        assert back[0][1].tobytes() == records[0][1].tobytes()


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg["seed"] == 0 and cfg["latent.kind"] == "t_mixture" and cfg["dataset.images"] is None

    def test_parse_with_comments(self):
        cfg = RunConfig.parse("# run\nseed = 7\n\ntrain.alpha = 0.5  # weight\ndataset.labeled = no\n")
        assert (cfg["seed"], cfg["train.alpha"], cfg["dataset.labeled"]) == (7, 0.5, False)

    @pytest.mark.parametrize("text", ["bogus = 1", "seed = x", "seed 3", "latent.kind = cauchy", "dataset.labeled = maybe"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            RunConfig.parse(text)

    def test_serialize_idempotent(self):
        once = RunConfig.parse("train.lr=0.001\nseed=3\nout_dir = runs/x\n").serialize()
        assert RunConfig.parse(once).serialize() == once

    @given(st.integers(0, 2**32), st.floats(1e-8, 1.0), st.sampled_from(["adam", "sgd"]), st.booleans())
    def test_round_trip_property(self, seed, lr, opt, labeled):
        cfg = RunConfig({"seed": seed, "train.lr": lr, "train.optimizer": opt, "dataset.labeled": labeled})
        assert RunConfig.parse(cfg.serialize()) == cfg

    def test_overrides(self):
        cfg = RunConfig.parse("seed = 1").with_overrides({"seed": "5", "train.steps": "10"})
        assert cfg["seed"] == 5 and cfg["train.steps"] == 10

    def test_every_key_serialized(self):
        keys = [line.split(" = ")[0] for line in RunConfig().serialize().splitlines()]
        assert keys == sorted(DEFAULTS)
