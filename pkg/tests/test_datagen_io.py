import numpy as np
import pytest

from visualid import io
from visualid.contrastive import init_state
from visualid.ctr import ClickRecord, CtrConfig, init_ctr_params
from visualid.datagen import PairRecord, SynthConfig, generate_clicks, generate_pairs
from visualid.encoder import init_mlp
from visualid.pipeline import DATA_FILES, make_dataset, write_dataset
from visualid.quantizer import CodebookSet, QuantizerConfig, VisualId, init_codebooks

SMALL = dict(num_pairs=60, num_ads=60, num_users=40, num_clicks=3000)

# -- generator --------------------------------------------------------------------


def test_zero_noise_clusters_are_identical():
    pairs = generate_pairs(SynthConfig(noise_sigma=0.0, **SMALL))
    by_cluster = {}
    for p in pairs:
        by_cluster.setdefault(p.cluster, []).append(p.image_raw)
    for imgs in by_cluster.values():
        for img in imgs[1:]:
            np.testing.assert_array_equal(img, imgs[0])


def test_same_seed_same_files(tmp_path):
    cfg = SynthConfig(seed=7, **SMALL)
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    write_dataset(tmp_path / "a", cfg)
    write_dataset(tmp_path / "b", cfg)
    for name in DATA_FILES.values():
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_no_cold_start():
    cfg = SynthConfig(cold_start_fraction=0.0, **SMALL)
    _, _, _, new_ads = make_dataset(cfg)
    assert new_ads == set()


def test_saturated_affinity_all_clicks():
    cfg = SynthConfig(**SMALL)
    ads = {f"ad{i:05d}": i % 4 for i in range(60)}
    train, held, _ = generate_clicks(cfg, ads, affinity=np.full((cfg.num_users, 4), 20.0))
    labels = [r.label for r in train + held]
    assert np.mean(labels) > 0.999


def test_default_positive_rate():
    _, train, held, new_ads = make_dataset(SynthConfig())
    rate = np.mean([r.label for r in train + held])
    assert 0.2 <= rate <= 0.8
    assert len(train) + len(held) == 50_000
    train_ads = {r.ad_id for r in train}
    assert not train_ads & new_ads
    assert len(new_ads) == 40


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(num_pairs=0)
    with pytest.raises(ValueError):
        SynthConfig(cold_start_fraction=1.0)
    with pytest.raises(ValueError):
        make_dataset(SynthConfig(num_pairs=10, num_ads=20))


# -- text formats ----------------------------------------------------------------------


def test_pairs_round_trip(tmp_path, rng):
    pairs = [PairRecord(f"ad{i}", rng.normal(size=3), rng.normal(size=2), i % 2) for i in range(5)]
    path = tmp_path / "p.tsv"
    io.write_pairs(path, pairs)
    ids, img, txt = io.read_pairs(path)
    assert ids == [p.pair_id for p in pairs]
    np.testing.assert_array_equal(img, [p.image_raw for p in pairs])
    np.testing.assert_array_equal(txt, [p.text_raw for p in pairs])
    io.write_clusters(tmp_path / "c.tsv", pairs)
    assert io.read_clusters(tmp_path / "c.tsv") == {p.pair_id: p.cluster for p in pairs}


@pytest.mark.parametrize("bad,lineno", [
    ("# h\nad1\t1,2\t3\nad2\t1,x\t3\n", 3),
    ("ad1\t1,2\t3\nad2\t1,2\n", 2),
    ("ad1\t1,2\t3\nad2\t1,2,3\t4\n", 2),
    ("ad1\t1,nan\t3\n", 1),
])
def test_malformed_pairs_report_line(tmp_path, bad, lineno):
    path = tmp_path / "p.tsv"
    path.write_text(bad)
    with pytest.raises(io.ParseError) as exc:
        io.read_pairs(path)
    assert exc.value.lineno == lineno
    assert f":{lineno}:" in str(exc.value)


def test_clicks_and_maps_round_trip(tmp_path):
    recs = [ClickRecord("u1", "a1", 1), ClickRecord("u2", "a1", 0)]
    io.write_clicks(tmp_path / "c.tsv", recs)
    assert io.read_clicks(tmp_path / "c.tsv") == recs
    vmap = {"a1": VisualId(1, (2, 3)), "a0": VisualId(0, (0, 0))}
    io.write_visual_map(tmp_path / "m.tsv", vmap)
    assert io.read_visual_map(tmp_path / "m.tsv") == vmap
    io.write_id_list(tmp_path / "n.txt", {"b", "a"})
    assert io.read_id_list(tmp_path / "n.txt") == {"a", "b"}
    (tmp_path / "bad.tsv").write_text("u1\ta1\t2\n")
    with pytest.raises(io.ParseError):
        io.read_clicks(tmp_path / "bad.tsv")


def test_metrics_round_trip(tmp_path):
    io.write_metrics(tmp_path / "m.tsv", {"auc": 0.75, "baseline": True, "n": 3, "x": "undefined"})
    assert io.read_metrics(tmp_path / "m.tsv") == {"auc": "0.75", "baseline": "true", "n": "3", "x": "undefined"}


# -- binary container ------------------------------------------------------------------


def _max_dev(a_list, b_list):
    return max(float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(a_list, b_list))


def test_codebooks_round_trip(tmp_path, rng):
    books = init_codebooks(QuantizerConfig(), rng)
    io.save_codebooks(tmp_path / "b.bin", books)
    back = io.load_codebooks(tmp_path / "b.bin")
    assert back.K == 4 and back.N0 == 64
    assert _max_dev(books.arrays(), back.arrays()) < 1e-6


def test_encoder_round_trip(tmp_path, rng):
    enc = init_mlp([32, 64, 16], rng)
    io.save_encoder(tmp_path / "e.bin", enc)
    assert _max_dev(enc.arrays(), io.load_encoder(tmp_path / "e.bin").arrays()) < 1e-6


@pytest.mark.parametrize("use_visual", [True, False])
def test_ctr_round_trip(tmp_path, use_visual):
    recs = [ClickRecord("ué", "a1", 1), ClickRecord("u2", "a2", 0)]
    p = init_ctr_params(CtrConfig(use_visual=use_visual, init_std=0.3), recs, (4, [3, 3, 3, 3]), 0)
    p.head_b = 0.123
    io.save_ctr_model(tmp_path / "m.bin", p)
    q = io.load_ctr_model(tmp_path / "m.bin")
    assert q.use_visual == use_visual and q.user_index == p.user_index and q.ad_index == p.ad_index
    assert _max_dev(p.arrays(), q.arrays()) < 1e-6
    assert q.head_b == p.head_b


def test_checkpoint_round_trip(tmp_path):
    state = init_state(QuantizerConfig(), [32, 64, 16], [32, 64, 16], seed=3)
    state.loss_history = [1.5, 1.25]
    state.epoch = 2
    io.save_quantizer_checkpoint(tmp_path / "c.bin", state)
    back = io.load_quantizer_checkpoint(tmp_path / "c.bin")
    assert back.epoch == 2 and back.loss_history == [1.5, 1.25]
    assert back.cfg == state.cfg
    assert _max_dev(state.param_arrays(), back.param_arrays()) < 1e-6


def test_bad_magic_names_expected():
    data = bytearray(io.dump_codebooks(CodebookSet(np.zeros((2, 2)), [])))
    data[:4] = b"NOPE"
    with pytest.raises(io.FormatError, match="VIDQ"):
        io.parse_codebooks(bytes(data))


def test_header_with_missing_segment_book(rng):
    full = CodebookSet(rng.normal(size=(2, 4)), [rng.normal(size=(3, 1)) for _ in range(4)])
    # header declares K=4 but the payload stops after the third segment book
    forged = io.dump_codebooks(full)[:-3 * 1 * 4]
    with pytest.raises(io.ShapeMismatchError, match="shape mismatch"):
        io.parse_codebooks(forged)


def test_wrong_kind_and_truncation(rng):
    data = io.dump_encoder(init_mlp([3, 2], rng))
    with pytest.raises(io.FormatError, match="encoder"):
        io.parse_codebooks(data)
    with pytest.raises(io.FormatError):
        io.parse_encoder(data[:-3])
    with pytest.raises(io.ShapeMismatchError):
        io.parse_encoder(data + b"\0\0\0\0")


def test_trained_coarse_ids_follow_clusters():
    # plain center-plus-noise generator (no per-pair jitter), frozen seed
    from visualid.pipeline import ContrastiveConfig, image_features, train_quantizer
    from visualid.quantizer import hard_assign_batch

    pairs = generate_pairs(SynthConfig(num_clusters=4, num_pairs=400, noise_sigma=0.1, pair_jitter=0.0, seed=0))
    img = np.array([p.image_raw for p in pairs])
    txt = np.array([p.text_raw for p in pairs])
    state = train_quantizer(img, txt, [p.pair_id for p in pairs], QuantizerConfig(), ContrastiveConfig(), 0)
    coarse = hard_assign_batch(image_features(state, img), state.books)[:, 0]
    cl = np.array([p.cluster for p in pairs])
    same = cl[:, None] == cl[None, :]
    np.fill_diagonal(same, False)
    assert (coarse[:, None] == coarse[None, :])[same].mean() >= 0.9
