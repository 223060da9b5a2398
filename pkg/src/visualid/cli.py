"""Command-line entry point: ``visualid <subcommand> --key value ...``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import io
from .ctr import CtrConfig
from .datagen import SynthConfig
from .evalkit import UNDEFINED, auc, is_defined, quantization_error
from .numcore import NumericError
from .pipeline import (
    MODE_END_TO_END,
    MODE_NO_RESIDUAL,
    MODE_TWO_STAGE,
    ContrastiveConfig,
    evaluate,
    fit_ctr,
    generate_ids,
    image_features,
    infer_visual_shape,
    score,
    train_quantizer,
    visual_shape,
    write_dataset,
)
from .quantizer import QuantizerConfig

log = logging.getLogger("visualid")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _need_file(path, what):
    if not os.path.isfile(path):
        raise DataError(f"{what} not found: {path}")
    return path


def _need_dir_for(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DataError(f"output directory does not exist: {parent}")
    return path


# -- subcommands ------------------------------------------------------------

def _add_quantizer_args(p):
    g = p.add_argument_group("quantizer")
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--K", type=int, default=4)
    g.add_argument("--N0", type=int, default=64)
    g.add_argument("--Nk", type=int, default=256)
    g.add_argument("--beta-start", type=float, default=1.0)
    g.add_argument("--beta-end", type=float, default=10.0)
    g = p.add_argument_group("contrastive training")
    d = ContrastiveConfig()
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--momentum", type=float, default=d.momentum)
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--hidden", type=int, default=d.hidden)
    g.add_argument("--shuffle-seed", type=int, default=None)


def _quantizer_cfg(a, use_residual=True):
    try:
        return QuantizerConfig(d=a.d, K=a.K, N0=a.N0, Nk=a.Nk, beta_start=a.beta_start,
                               beta_end=a.beta_end, use_residual=use_residual)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _contrastive_cfg(a):
    if a.epochs < 0 or a.batch_size < 1 or a.lr < 0 or not 0 <= a.momentum < 1:
        raise UsageError("need epochs >= 0, batch-size >= 1, lr >= 0, 0 <= momentum < 1")
    return ContrastiveConfig(epochs=a.epochs, lr=a.lr, momentum=a.momentum, batch_size=a.batch_size,
                             hidden=a.hidden, shuffle_seed=a.shuffle_seed)


def cmd_gen_data(a):
    try:
        cfg = SynthConfig(num_clusters=a.clusters, d_img_raw=a.img_dim, d_txt_raw=a.txt_dim,
                          num_pairs=a.pairs, num_users=a.users,
                          num_ads=a.ads if a.ads is not None else a.pairs, num_clicks=a.clicks,
                          noise_sigma=a.noise_sigma, cold_start_fraction=a.cold_start_fraction,
                          seed=a.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not os.path.isdir(a.out):
        raise DataError(f"output directory does not exist: {a.out}")
    paths = write_dataset(a.out, cfg)
    for key, path in paths.items():
        log.info("wrote %s: %s", key, path)


def _train_metrics(state, mode):
    hist = state.loss_history
    m = {"mode": mode, "epochs": state.epoch, "d": state.books.d, "K": state.books.K,
         "N0": state.books.N0}
    if state.books.K:
        m["Nk"] = state.books.seg_sizes[0]
    if hist:
        m["loss_epoch_1"] = hist[0]
        m["loss_final"] = hist[-1]
        m["loss_ratio"] = hist[-1] / hist[0] if hist[0] else float("nan")
    return m


def cmd_train_quantizer(a):
    if a.no_residual and a.two_stage:
        raise UsageError("--no-residual and --two-stage are mutually exclusive")
    mode = MODE_NO_RESIDUAL if a.no_residual else MODE_TWO_STAGE if a.two_stage else MODE_END_TO_END
    qcfg = _quantizer_cfg(a, use_residual=not a.no_residual)
    tcfg = _contrastive_cfg(a)
    if a.checkpoint_every is not None and a.checkpoint_every < 1:
        raise UsageError("--checkpoint-every must be >= 1")
    _need_file(a.pairs, "pairs file")
    for path in (a.out, a.metrics, a.curve):
        if path:
            _need_dir_for(path)
    try:
        ids, img, txt = io.read_pairs(a.pairs)
    except io.FormatError as exc:
        raise DataError(str(exc)) from exc

    def on_epoch(state):
        log.info("epoch %d loss %.6f", state.epoch, state.loss_history[-1])
        if a.checkpoint_every and state.epoch % a.checkpoint_every == 0:
            io.save_quantizer_checkpoint(f"{a.out}.epoch{state.epoch:04d}", state)

    state = train_quantizer(img, txt, ids, qcfg, tcfg, a.seed, mode, on_epoch=on_epoch)
    io.save_quantizer_checkpoint(a.out, state)
    if a.metrics:
        m = _train_metrics(state, mode)
        m["quant_error"] = quantization_error(image_features(state, img), state.books)
        io.write_metrics(a.metrics, m)
    if a.curve:
        io.write_metrics(a.curve, {str(i + 1): v for i, v in enumerate(state.loss_history)})


def _load_ckpt(path):
    _need_file(path, "checkpoint")
    try:
        return io.load_quantizer_checkpoint(path)
    except io.FormatError as exc:
        raise DataError(str(exc)) from exc


def cmd_gen_ids(a):
    state = _load_ckpt(a.checkpoint)
    _need_file(a.pairs, "pairs file")
    _need_dir_for(a.out)
    try:
        ids, img, _ = io.read_pairs(a.pairs)
    except io.FormatError as exc:
        raise DataError(str(exc)) from exc
    if img.shape[1] != state.img_encoder.in_dim:
        raise DataError(f"pairs have image dim {img.shape[1]}, checkpoint expects {state.img_encoder.in_dim}")
    io.write_visual_map(a.out, generate_ids(state, ids, img))


def _read_clicks(path):
    _need_file(path, "clicks file")
    try:
        return io.read_clicks(path)
    except io.FormatError as exc:
        raise DataError(str(exc)) from exc


def _read_map(path):
    _need_file(path, "visual id map")
    try:
        return io.read_visual_map(path)
    except io.FormatError as exc:
        raise DataError(str(exc)) from exc


def cmd_train_ctr(a):
    ccfg = CtrConfig(user_dim=a.user_dim, ad_dim=a.ad_dim, visual_dim=a.visual_dim,
                     tower_hidden=a.tower_hidden, out_dim=a.out_dim, use_visual=not a.no_visual,
                     epochs=a.epochs, lr=a.lr, momentum=a.momentum, batch_size=a.batch_size)
    if ccfg.epochs < 0 or ccfg.lr < 0 or ccfg.batch_size < 1:
        raise UsageError("need epochs >= 0, lr >= 0, batch-size >= 1")
    if a.curve and not a.eval_clicks:
        raise UsageError("--curve needs --eval-clicks")
    if ccfg.use_visual and not a.ids:
        raise UsageError("--ids is required unless --no-visual is given")
    for path in (a.out, a.metrics, a.curve):
        if path:
            _need_dir_for(path)
    records = _read_clicks(a.clicks)
    if not records:
        raise DataError(f"no click records in {a.clicks}")
    vmap, shape = None, None
    if ccfg.use_visual:
        vmap = _read_map(a.ids)
        shape = visual_shape(_load_ckpt(a.checkpoint).books) if a.checkpoint else infer_visual_shape(vmap)
        if shape[1] and ccfg.visual_dim % len(shape[1]):
            raise UsageError(f"--visual-dim {ccfg.visual_dim} not divisible by K={len(shape[1])}")
    eval_records = _read_clicks(a.eval_clicks) if a.eval_clicks else None
    curve = {}

    def on_epoch(epoch, loss, params):
        log.info("epoch %d bce %.6f", epoch + 1, loss)
        if eval_records is not None:
            try:
                curve[str(epoch + 1)] = auc(score(params, eval_records, vmap), [r.label for r in eval_records])
            except ValueError:
                curve[str(epoch + 1)] = UNDEFINED

    try:
        model = fit_ctr(records, vmap, ccfg, shape, a.seed, on_epoch=on_epoch)
    except KeyError as exc:
        raise DataError(str(exc)) from exc
    io.save_ctr_model(a.out, model)
    if a.metrics:
        train_scores = score(model, records, vmap)
        io.write_metrics(a.metrics, {"baseline": not ccfg.use_visual,
                                     "train_auc": auc(train_scores, [r.label for r in records])})
    if a.curve:
        io.write_metrics(a.curve, curve)


def _load_model(path):
    _need_file(path, "model")
    try:
        return io.load_ctr_model(path)
    except io.FormatError as exc:
        raise DataError(str(exc)) from exc


def cmd_eval(a):
    if bool(a.curve) != bool(a.baseline_curve) or (a.curve_out and not a.curve):
        raise UsageError("--curve, --baseline-curve and --curve-out go together")
    if (a.checkpoint is None) != (a.pairs is None):
        raise UsageError("--checkpoint and --pairs go together")
    _need_dir_for(a.out)
    model = _load_model(a.model)
    records = _read_clicks(a.clicks)
    vmap = _read_map(a.ids) if model.use_visual else None
    new_ads = io.read_id_list(_need_file(a.new_ads, "new-ads list")) if a.new_ads else set()
    qerr = UNDEFINED
    if a.checkpoint:
        state = _load_ckpt(a.checkpoint)
        _need_file(a.pairs, "pairs file")
        _, img, _ = io.read_pairs(a.pairs)
        qerr = quantization_error(image_features(state, img), state.books)
    try:
        report = evaluate(model, records, vmap, new_ads, qerr)
    except KeyError as exc:
        raise DataError(str(exc)) from exc
    metrics = report.as_dict()
    metrics["time_axis"] = "epoch"
    if a.baseline_model:
        base = evaluate(_load_model(a.baseline_model), records, None, new_ads)
        for key in ("auc", "auc_new_ads", "auc_old_ads"):
            v, b = getattr(report, key), getattr(base, key)
            metrics[f"{key}_delta"] = v - b if is_defined(v) and is_defined(b) else UNDEFINED
    io.write_metrics(a.out, metrics)
    if a.curve_out:
        cur = io.read_metrics(_need_file(a.curve, "curve"))
        base = io.read_metrics(_need_file(a.baseline_curve, "baseline curve"))
        delta = {}
        for epoch in cur:
            if epoch in base and cur[epoch] != UNDEFINED and base[epoch] != UNDEFINED:
                delta[epoch] = float(cur[epoch]) - float(base[epoch])
        with open(a.curve_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# epoch\tauc_delta (epoch index stands in for the day axis)\n")
            for epoch, v in delta.items():
                fh.write(f"{epoch}\t{v!r}\n")


def cmd_ablate(a):
    from .ablation import run_ablation

    qcfg = _quantizer_cfg(a)
    tcfg = _contrastive_cfg(a)
    ccfg = CtrConfig(epochs=a.ctr_epochs, lr=a.ctr_lr)
    if not os.path.isdir(a.data):
        raise DataError(f"data directory does not exist: {a.data}")
    if not os.path.isdir(a.out):
        raise DataError(f"output directory does not exist: {a.out}")
    try:
        n_values = [int(v) for v in a.n_values.split(",")]
        k_values = [int(v) for v in a.k_values.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad grid value: {exc}") from exc
    if any(n < 1 for n in n_values):
        raise UsageError("every N value must be positive")
    for k in k_values:
        if k < 1 or qcfg.d % k:
            raise UsageError(f"K={k} does not divide d={qcfg.d}")
    run_ablation(a.data, a.out, qcfg, tcfg, ccfg, n_values, k_values, a.seed)


def build_parser():
    p = _Parser(prog="visualid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-data", help="write synthetic pairs and click logs")
    d = SynthConfig()
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=d.seed)
    s.add_argument("--pairs", type=int, default=d.num_pairs)
    s.add_argument("--ads", type=int, default=None)
    s.add_argument("--clusters", type=int, default=d.num_clusters)
    s.add_argument("--users", type=int, default=d.num_users)
    s.add_argument("--clicks", type=int, default=d.num_clicks)
    s.add_argument("--img-dim", type=int, default=d.d_img_raw)
    s.add_argument("--txt-dim", type=int, default=d.d_txt_raw)
    s.add_argument("--noise-sigma", type=float, default=d.noise_sigma)
    s.add_argument("--cold-start-fraction", type=float, default=d.cold_start_fraction)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-quantizer", help="contrastive training of encoders and codebooks")
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--metrics")
    s.add_argument("--curve")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint-every", type=int, default=None)
    s.add_argument("--no-residual", action="store_true")
    s.add_argument("--two-stage", action="store_true")
    _add_quantizer_args(s)
    s.set_defaults(func=cmd_train_quantizer)

    s = sub.add_parser("gen-ids", help="hard visual IDs for every pair")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_ids)

    s = sub.add_parser("train-ctr", help="train the two-tower CTR model")
    c = CtrConfig()
    s.add_argument("--clicks", required=True)
    s.add_argument("--ids")
    s.add_argument("--checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--metrics")
    s.add_argument("--eval-clicks")
    s.add_argument("--curve")
    s.add_argument("--no-visual", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epochs", type=int, default=c.epochs)
    s.add_argument("--lr", type=float, default=c.lr)
    s.add_argument("--momentum", type=float, default=c.momentum)
    s.add_argument("--batch-size", type=int, default=c.batch_size)
    s.add_argument("--user-dim", type=int, default=c.user_dim)
    s.add_argument("--ad-dim", type=int, default=c.ad_dim)
    s.add_argument("--visual-dim", type=int, default=c.visual_dim)
    s.add_argument("--tower-hidden", type=int, default=c.tower_hidden)
    s.add_argument("--out-dim", type=int, default=c.out_dim)
    s.set_defaults(func=cmd_train_ctr)

    s = sub.add_parser("eval", help="overall and new/old-ad cohort AUC")
    s.add_argument("--model", required=True)
    s.add_argument("--clicks", required=True)
    s.add_argument("--ids")
    s.add_argument("--new-ads")
    s.add_argument("--out", required=True)
    s.add_argument("--baseline-model")
    s.add_argument("--checkpoint")
    s.add_argument("--pairs")
    s.add_argument("--curve")
    s.add_argument("--baseline-curve")
    s.add_argument("--curve-out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="codebook-size and segment-count sweeps")
    s.add_argument("--data", required=True, help="directory written by gen-data")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-values", default="64,256,1024")
    s.add_argument("--k-values", default="1,2,4")
    s.add_argument("--ctr-epochs", type=int, default=c.epochs)
    s.add_argument("--ctr-lr", type=float, default=c.lr)
    _add_quantizer_args(s)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        # overflow is caught by the explicit finiteness checks, which name the tensor
        with np.errstate(over="ignore", invalid="ignore"):
            args.func(args)
    except UsageError as exc:
        print(f"visualid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, io.FormatError, FileNotFoundError) as exc:
        print(f"visualid: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"visualid: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
