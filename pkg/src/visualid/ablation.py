"""Codebook-size (N) and segment-count (K) sweeps sharing one ID-only baseline."""
import logging
import os
from dataclasses import dataclass, replace

from . import io
from .ctr import CtrConfig
from .evalkit import UNDEFINED, is_defined, quantization_error
from .pipeline import (
    DATA_FILES,
    ContrastiveConfig,
    evaluate,
    fit_ctr,
    generate_ids,
    image_features,
    train_quantizer,
    visual_shape,
)
from .quantizer import CodebookSet, QuantizerConfig

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("cell", "N", "K", "auc", "auc_delta", "auc_new_ads", "auc_old_ads",
                   "quant_error", "superset_quant_error")


@dataclass
class CellResult:
    cell: str
    N: int
    K: int
    auc: float
    auc_delta: float
    auc_new_ads: object
    auc_old_ads: object
    quant_error: float
    superset_quant_error: object = UNDEFINED

    def row(self):
        return [getattr(self, c) for c in SUMMARY_COLUMNS]


def prefix_books(books: CodebookSet, n):
    """Keep the first ``n`` codewords of every segment book; the coarse book is untouched.

    Books built this way are nested, so with a fixed coarse book the greedy hard
    assignment can only get closer as ``n`` grows.
    """
    if any(n > s for s in books.seg_sizes):
        raise ValueError(f"prefix size {n} exceeds a segment book")
    return CodebookSet(books.coarse.copy(), [s[:n].copy() for s in books.segments])


def superset_errors(features, books: CodebookSet, sizes):
    return {n: quantization_error(features, prefix_books(books, n)) for n in sizes}


def load_data(datadir):
    paths = {k: os.path.join(datadir, v) for k, v in DATA_FILES.items()}
    ids, img, txt = io.read_pairs(paths["pairs"])
    return (ids, img, txt, io.read_clicks(paths["clicks_train"]), io.read_clicks(paths["clicks_eval"]),
            io.read_id_list(paths["new_ads"]))


def _delta(v, b):
    return v - b if is_defined(v) and is_defined(b) else UNDEFINED


def run_cell(name, qcfg, tcfg, ccfg, data, baseline_auc, seed):
    ids, img, txt, train, held, new_ads = data
    state = train_quantizer(img, txt, ids, qcfg, tcfg, seed)
    vmap = generate_ids(state, ids, img)
    feats = image_features(state, img)
    qerr = quantization_error(feats, state.books)
    model = fit_ctr(train, vmap, replace(ccfg, use_visual=True), visual_shape(state.books), seed)
    rep = evaluate(model, held, vmap, new_ads, qerr)
    log.info("cell %s auc %.4f", name, rep.auc)
    cell = CellResult(name, qcfg.Nk, qcfg.K, rep.auc, _delta(rep.auc, baseline_auc),
                      rep.auc_new_ads, rep.auc_old_ads, qerr)
    return cell, state, feats


def run_ablation(datadir, outdir, qcfg: QuantizerConfig, tcfg: ContrastiveConfig, ccfg: CtrConfig,
                 n_values, k_values, seed):
    """Writes ``cell_N<n>.tsv`` / ``cell_K<k>.tsv`` per cell, ``baseline.tsv`` and ``summary.tsv``."""
    # validate every cell config before any training or writing
    n_cfgs = [replace(qcfg, Nk=n) for n in n_values]
    k_cfgs = [replace(qcfg, K=k) for k in k_values]
    data = load_data(datadir)
    _, _, _, train, held, new_ads = data

    bmodel = fit_ctr(train, None, replace(ccfg, use_visual=False), None, seed)
    base = evaluate(bmodel, held, None, new_ads)
    io.write_metrics(os.path.join(outdir, "baseline.tsv"), base.as_dict())

    cells = []
    largest = None
    for cfg in n_cfgs:
        cell, state, feats = run_cell(f"N{cfg.Nk}", cfg, tcfg, ccfg, data, base.auc, seed)
        cells.append(cell)
        if largest is None or cfg.Nk > largest[0].seg_sizes[0]:
            largest = (state.books, feats)
    if largest is not None:
        errs = superset_errors(largest[1], largest[0], sorted(n_values))
        for cell in cells:
            cell.superset_quant_error = errs[cell.N]
    for cfg in k_cfgs:
        cells.append(run_cell(f"K{cfg.K}", cfg, tcfg, ccfg, data, base.auc, seed)[0])

    for cell in cells:
        io.write_metrics(os.path.join(outdir, f"cell_{cell.cell}.tsv"),
                         dict(zip(SUMMARY_COLUMNS, cell.row())))
    write_summary(os.path.join(outdir, "summary.tsv"), cells)
    return base, cells


def write_summary(path, cells):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + "\t".join(SUMMARY_COLUMNS) + "\n")
        for cell in cells:
            fh.write("\t".join(io.fmt_metric(v) for v in cell.row()) + "\n")


def read_summary(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            rows.append(dict(zip(SUMMARY_COLUMNS, line.rstrip("\n").split("\t"))))
    return rows
