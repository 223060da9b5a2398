"""End-to-end stages: data generation, quantizer training, ID generation, CTR training, evaluation."""
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import io
from .contrastive import TrainState, init_state, make_batches, train_epoch
from .ctr import CtrConfig, encode_records, init_ctr_params, predict_batch, train_ctr
from .datagen import SynthConfig, generate_clicks, generate_pairs
from .encoder import encode_batch
from .evalkit import cohort_report_from_scores, quantization_error
from .kmeans import two_stage_fit
from .numcore import NumericError, Sgd
from .quantizer import QuantizerConfig, VisualId, hard_assign_batch

log = logging.getLogger(__name__)

MODE_END_TO_END = "end-to-end"
MODE_NO_RESIDUAL = "no-residual"
MODE_TWO_STAGE = "two-stage"


@dataclass
class ContrastiveConfig:
    epochs: int = 30
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 2
    hidden: int = 64
    shuffle_seed: int | None = None


@dataclass
class RunConfig:
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    ctr: CtrConfig = field(default_factory=CtrConfig)
    seed: int = 0


# -- data -------------------------------------------------------------------

DATA_FILES = {
    "pairs": "pairs.tsv",
    "clusters": "clusters.tsv",
    "clicks_train": "clicks_train.tsv",
    "clicks_eval": "clicks_eval.tsv",
    "new_ads": "new_ads.txt",
}


def make_dataset(cfg: SynthConfig):
    if cfg.num_ads > cfg.num_pairs:
        raise ValueError(f"num_ads={cfg.num_ads} exceeds num_pairs={cfg.num_pairs}; every ad needs an image")
    pairs = generate_pairs(cfg)
    ad_cluster = {p.pair_id: p.cluster for p in pairs[:cfg.num_ads]}
    train, held, new_ads = generate_clicks(cfg, ad_cluster)
    return pairs, train, held, new_ads


def write_dataset(outdir, cfg: SynthConfig):
    pairs, train, held, new_ads = make_dataset(cfg)
    paths = {k: os.path.join(outdir, v) for k, v in DATA_FILES.items()}
    io.write_pairs(paths["pairs"], pairs)
    io.write_clusters(paths["clusters"], pairs)
    io.write_clicks(paths["clicks_train"], train)
    io.write_clicks(paths["clicks_eval"], held)
    io.write_id_list(paths["new_ads"], new_ads)
    return paths


# -- quantizer --------------------------------------------------------------

def check_finite_state(state: TrainState):
    names = [f"img_encoder.{i}" for i in range(len(state.img_encoder.arrays()))]
    names += [f"txt_encoder.{i}" for i in range(len(state.txt_encoder.arrays()))]
    names += ["codebook.coarse", *(f"codebook.segment{k + 1}" for k in range(state.books.K))]
    for name, arr in zip(names, state.param_arrays()):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"NaN/inf detected in {name}")


def train_quantizer(img, txt, pair_ids, qcfg: QuantizerConfig, tcfg: ContrastiveConfig, seed,
                    mode=MODE_END_TO_END, on_epoch=None) -> TrainState:
    """Contrastive training of both encoders and the codebooks.

    ``mode`` selects the full residual quantizer, the single-level ablation, or
    the two-stage baseline (train on raw features, then k-means the codebooks).
    """
    if mode == MODE_NO_RESIDUAL:
        qcfg = replace(qcfg, use_residual=False)
    dims_img = [img.shape[1], tcfg.hidden, qcfg.d]
    dims_txt = [txt.shape[1], tcfg.hidden, qcfg.d]
    state = init_state(qcfg, dims_img, dims_txt, seed)
    batches = make_batches(img, txt, pair_ids, tcfg.batch_size, tcfg.shuffle_seed)
    opt = Sgd(state.param_arrays(), tcfg.lr, tcfg.momentum)
    quantize = mode != MODE_TWO_STAGE
    for _ in range(tcfg.epochs):
        train_epoch(state, batches, tcfg.lr, tcfg.epochs, quantize=quantize, optimizer=opt)
        check_finite_state(state)
        if on_epoch is not None:
            on_epoch(state)
    if mode == MODE_TWO_STAGE and tcfg.epochs > 0:
        feats, _ = encode_batch(state.img_encoder, img)
        state.books = two_stage_fit(feats, qcfg, seed=seed)
    return state


def image_features(state: TrainState, img):
    feats, _ = encode_batch(state.img_encoder, img)
    return feats


def generate_ids(state: TrainState, pair_ids, img):
    ids = hard_assign_batch(image_features(state, img), state.books)
    return {pid: VisualId(int(row[0]), tuple(int(i) for i in row[1:])) for pid, row in zip(pair_ids, ids)}


def visual_shape(books):
    return books.N0, books.seg_sizes


def infer_visual_shape(visual_map):
    rows = np.array([v.as_tuple() for v in visual_map.values()])
    maxes = rows.max(axis=0) + 1
    return int(maxes[0]), [int(m) for m in maxes[1:]]


# -- CTR --------------------------------------------------------------------

def fit_ctr(train_records, visual_map, ccfg: CtrConfig, shape, seed, on_epoch=None):
    params = init_ctr_params(ccfg, train_records, shape, seed)
    return train_ctr(train_records, visual_map if ccfg.use_visual else None, params,
                     ccfg.epochs, ccfg.lr, seed, ccfg.batch_size, ccfg.momentum, on_epoch=on_epoch)


def score(params, records, visual_map):
    return predict_batch(params, encode_records(records, params, visual_map if params.use_visual else None))


def evaluate(params, records, visual_map, new_ads, quant_error="undefined"):
    scores = score(params, records, visual_map)
    return cohort_report_from_scores(scores, records, new_ads, quant_error, baseline=not params.use_visual)


@dataclass
class ExperimentResult:
    state: TrainState
    visual_map: dict
    report: object
    baseline_report: object = None
    quant_error: float = float("nan")


def run_experiment(cfg: RunConfig, mode=MODE_END_TO_END, with_baseline=False, dataset=None):
    """Full pipeline on synthetic data; returns the trained state, ID map and eval reports."""
    pairs, train, held, new_ads = dataset if dataset is not None else make_dataset(cfg.synth)
    ids = [p.pair_id for p in pairs]
    img = np.array([p.image_raw for p in pairs])
    txt = np.array([p.text_raw for p in pairs])
    state = train_quantizer(img, txt, ids, cfg.quantizer, cfg.contrastive, cfg.seed, mode)
    vmap = generate_ids(state, ids, img)
    qerr = quantization_error(image_features(state, img), state.books)
    model = fit_ctr(train, vmap, replace(cfg.ctr, use_visual=True), visual_shape(state.books), cfg.seed)
    report = evaluate(model, held, vmap, new_ads, qerr)
    base = None
    if with_baseline:
        bmodel = fit_ctr(train, None, replace(cfg.ctr, use_visual=False), None, cfg.seed)
        base = evaluate(bmodel, held, None, new_ads)
    return ExperimentResult(state, vmap, report, base, qerr)
