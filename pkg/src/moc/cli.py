"""Command-line entry point.

    moc profile       activation memory of all four FFN variants
    moc grad-check    finite-difference checks of the backward passes
    moc embed-verify  dense FFN -> MoC a:b embedding, checked numerically
    moc train         paired dense / MoC teacher-regression run
    moc infer-bench   per-token MAC / weight-traffic model for decoding
    moc stats         gate-activation statistics of a saved matrix

Exit codes: 0 success, 1 a check failed, 2 bad configuration or input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from moc import matrix_io
from moc.config import ConfigError, RunConfig, load, preset_names
from moc.expressivity import embed_ffn_as_moc, verify_embedding
from moc.ffn import FfnWeights, ffn_backward, ffn_forward
from moc.gradcheck import GRAD_NAMES, check_ffn, check_moc
from moc.inference import decode_token, mac_count
from moc.masking import Criterion
from moc.memory import Variant, model_report, reports_to_csv, reports_to_json
from moc.mixture import MocConfig, moc_backward, moc_forward
from moc.trainer import activation_stats, train_compare

log = logging.getLogger("moc")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2
DECODE_EXECUTE_LIMIT = 1 << 22  # d * d_ffn above this is modeled, not executed


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.output.path:
        Path(cfg.output.path).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_profile(cfg: RunConfig, args) -> int:
    shape, model = cfg.shape, cfg.model
    k = cfg.moc.per_row(shape.d_ffn)
    reports = [model_report(shape, model.n_layers, model.vocab, model.lm_head_bytes_per_element,
                            v, k if v.is_moc else None) for v in Variant]
    for r in reports:
        log.info("%-9s ffn/layer %.3g B  total %.4g B", r.variant, r.component_bytes("ffn"),
                 r.total_bytes)
    _emit(cfg, reports_to_json(reports) if cfg.output.format == "json" else reports_to_csv(reports))
    return EXIT_OK


def _grad_instances(cfg: RunConfig):
    gc = cfg.grad_check
    rng = np.random.default_rng(cfg.seed)
    for _ in range(gc.instances):
        s = int(rng.integers(1, gc.max_s + 1))
        d = int(rng.integers(1, gc.max_d + 1))
        d_ffn = int(rng.integers(2, gc.max_d_ffn + 1))
        k = int(rng.integers(1, d_ffn + 1))
        w = FfnWeights.random(d, d_ffn, rng)
        yield (s, d, d_ffn, k), rng.standard_normal((s, d)), w, rng.standard_normal((s, d))


def cmd_grad_check(cfg: RunConfig, args) -> int:
    gc = cfg.grad_check
    worst = {"dense": dict.fromkeys(GRAD_NAMES, 0.0), "moc": dict.fromkeys(GRAD_NAMES, 0.0)}
    degeneracy = 0.0
    for (s, d, d_ffn, k), x, w, dd in _grad_instances(cfg):
        moc_cfg = MocConfig(k=k, criterion=cfg.moc.criterion)
        results = {"dense": check_ffn(x, w, dd, gc.h), "moc": check_moc(x, w, moc_cfg, dd, gc.h)}
        for name, errs in results.items():
            for g, e in errs.items():
                worst[name][g] = max(worst[name][g], e)

        full = MocConfig(k=d_ffn)
        dense_grads = ffn_backward(ffn_forward(x, w)[1], dd, w).as_dict()
        moc_grads = moc_backward(moc_forward(x, w, full)[1], dd, w, full).as_dict()
        for g in GRAD_NAMES:
            scale = max(np.max(np.abs(dense_grads[g])), 1e-300)
            degeneracy = max(degeneracy, float(np.max(np.abs(dense_grads[g] - moc_grads[g])) / scale))

    if args.corrupt:
        # harness self-test: a wrong gradient must be caught
        worst["moc"]["w_gate"] = max(worst["moc"]["w_gate"], 1.0)

    passed = all(e <= gc.tol for errs in worst.values() for e in errs.values()) and degeneracy <= 1e-12
    rows = [(layer, g, e, e <= gc.tol) for layer, errs in worst.items() for g, e in errs.items()]
    rows.append(("moc_vs_dense_full_k", "all", degeneracy, degeneracy <= 1e-12))
    if cfg.output.format == "csv":
        text = _rows_csv(["layer", "gradient", "max_rel_err", "pass"], rows)
    else:
        text = json.dumps({"passed": passed, "instances": gc.instances, "h": gc.h, "tol": gc.tol,
                           "max_rel_err": worst, "full_k_degeneracy": degeneracy}, indent=2)
    _emit(cfg, text)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_embed_verify(cfg: RunConfig, args) -> int:
    e = cfg.embed
    try:
        criterion = Criterion(e.criterion)
    except ValueError:
        raise ConfigError("embed.criterion", f"must be one of {[c.value for c in Criterion]}") from None
    rng = np.random.default_rng(cfg.seed)
    w = FfnWeights.random(e.d, e.d_ffn, rng)
    emb = embed_ffn_as_moc(w, e.a, e.b)
    dev = verify_embedding(w, emb, e.a, e.b, e.samples, seed=cfg.seed, criterion=criterion)
    exact = criterion is Criterion.ABS_SILU
    ok = dev <= 1e-12
    result = {"d": e.d, "d_ffn": e.d_ffn, "a": e.a, "b": e.b, "d_moc": emb.d_moc,
              "samples": e.samples, "criterion": criterion.value,
              "mode": "exact" if exact else "approximate",
              "max_abs_deviation": dev, "within_1e-12": ok}
    if cfg.output.format == "csv":
        _emit(cfg, _rows_csv(list(result), [list(result.values())]))
    else:
        _emit(cfg, json.dumps(result, indent=2))
    # an approximate criterion is a measurement, not a check
    return EXIT_OK if ok or not exact else EXIT_FAIL


def cmd_train(cfg: RunConfig, args) -> int:
    shape = cfg.shape
    moc_cfg = cfg.moc
    res = train_compare(shape.d, shape.d_ffn, cfg.train, moc_cfg, task_seed=cfg.seed)
    summary = res.summary()
    log.info("dense %.4g -> %.4g, moc %.4g -> %.4g", *res.dense_eval, *res.moc_eval)
    if args.dump_gate:
        rng = np.random.default_rng([cfg.seed, 3])
        x = rng.standard_normal((256, shape.d))
        matrix_io.save(args.dump_gate, x @ res.moc_weights.w_gate)
    if cfg.output.format == "csv":
        _emit(cfg, res.to_csv())
    else:
        _emit(cfg, json.dumps({"summary": summary, "steps": res.steps, "lr": res.lr,
                               "dense_loss": res.dense_loss, "moc_loss": res.moc_loss}, indent=2))
    return EXIT_OK


def cmd_infer_bench(cfg: RunConfig, args) -> int:
    d, d_ffn = cfg.shape.d, cfg.shape.d_ffn
    moc_cfg = MocConfig(k=cfg.moc.k, group=cfg.moc.group, criterion=cfg.moc.criterion)
    k = moc_cfg.per_row(d_ffn)
    report = mac_count(d, d_ffn, k, cfg.shape.bytes_per_element).to_dict()
    if args.execute or d * d_ffn <= DECODE_EXECUTE_LIMIT:
        rng = np.random.default_rng(cfg.seed)
        w = FfnWeights.random(d, d_ffn, rng)
        x = rng.standard_normal((1, d))
        out, counted = decode_token(x, w, moc_cfg)
        ref = moc_forward(x, w, moc_cfg)[0]
        err = float(np.max(np.abs(out - ref)) / max(np.max(np.abs(ref)), 1e-300))
        report.update(executed=True, counted_macs=counted.moc_macs,
                      counted_matches_model=counted.moc_macs == report["moc_macs"],
                      rel_err_vs_batched=err)
        ok = counted.moc_macs == report["moc_macs"] and err <= 1e-12
    else:
        report["executed"] = False
        ok = True
    print(f"MAC ratio {report['moc_macs']:,} / {report['dense_macs']:,} = {report['ratio']:.5f}",
          file=sys.stderr)
    if cfg.output.format == "csv":
        flat = {k_: v for k_, v in report.items() if k_ != "breakdown"}
        flat.update({f"{k_}_macs": v for k_, v in report["breakdown"].items()})
        _emit(cfg, _rows_csv(list(flat), [list(flat.values())]))
    else:
        _emit(cfg, json.dumps(report, indent=2))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_stats(cfg: RunConfig, args) -> int:
    if not args.input:
        raise ConfigError("input", "stats needs --input MATRIX_FILE")
    try:
        g = matrix_io.load(args.input)
    except (OSError, matrix_io.MatrixFormatError) as exc:
        raise ConfigError("input", str(exc)) from None
    stats = activation_stats(g, args.bins)
    if cfg.output.format == "csv":
        rows = zip(stats.bin_edges[:-1], stats.bin_edges[1:], stats.counts, stats.cumulative)
        _emit(cfg, _rows_csv(["bin_lo", "bin_hi", "count", "cumulative"], rows))
    else:
        _emit(cfg, json.dumps(stats.to_dict(), indent=2))
    return EXIT_OK


COMMANDS = {
    "profile": cmd_profile,
    "grad-check": cmd_grad_check,
    "embed-verify": cmd_embed_verify,
    "train": cmd_train,
    "infer-bench": cmd_infer_bench,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--preset", help=f"bundled shape preset ({', '.join(preset_names())})")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="moc", description="Mixture-of-Channels FFN toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("profile", parents=[common], help="activation memory report")
    p = sub.add_parser("grad-check", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--corrupt", action="store_true", help="inject a wrong gradient (self-test)")
    sub.add_parser("embed-verify", parents=[common], help="verify the FFN -> MoC embedding")
    p = sub.add_parser("train", parents=[common], help="paired dense / MoC training run")
    p.add_argument("--dump-gate", help="write the MoC student's gate pre-activations here")
    p = sub.add_parser("infer-bench", parents=[common], help="decode MAC accounting")
    p.add_argument("--execute", action="store_true", help="run the decode even for large shapes")
    p = sub.add_parser("stats", parents=[common], help="activation statistics of a matrix file")
    p.add_argument("--input", help="matrix file (see moc.matrix_io)")
    p.add_argument("--bins", type=int, default=50)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides.setdefault("output", {})["path"] = args.out
    if args.format is not None:
        overrides.setdefault("output", {})["format"] = args.format
    try:
        cfg = load(args.config, args.preset, overrides)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"moc {args.command}: config error in {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
