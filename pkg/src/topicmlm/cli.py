"""Command line interface.

Subcommands: gen-data, train, verify, landscape, analyze, replay.
Every subcommand writes its outputs plus a ``manifest.json`` into the
directory given by ``--out``; ``replay`` re-runs a recorded manifest
into a fresh directory, reproducing the data outputs byte for byte.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 verification
failure.  Heavy imports happen inside handlers so that ``--threads``
can cap the BLAS pool before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _positive_int(text: str) -> int:
    val = int(text)
    if val <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return val


def _read_config(path: str) -> list[str]:
    """Flat key=value lines become a flag prefix; later (real) flags win."""
    extra: list[str] = []
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"config line without '=': {line!r}")
            flag = "--" + key.strip().replace("_", "-")
            value = value.strip()
            if value.lower() == "true":
                extra.append(flag)
            elif value.lower() == "false":
                continue
            else:
                extra.extend([flag, value])
    return extra


def _add_masking_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pm", type=float, default=0.15,
                   help="probability a position is selected for prediction")
    p.add_argument("--pc", type=float, default=0.1,
                   help="probability a selected position keeps its token")
    p.add_argument("--pr", type=float, default=0.1,
                   help="probability a selected position gets a random word")


def _add_corpus_flags(p: argparse.ArgumentParser, require: bool = True) -> None:
    p.add_argument("--T", type=_positive_int, required=require, help="number of topics")
    p.add_argument("--v", type=_positive_int, required=require, help="words per topic")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--fixed-tau", type=_positive_int, default=None,
                   help="fixed number of topics per document")
    g.add_argument("--dirichlet", type=float, default=None,
                   help="symmetric Dirichlet concentration for per-document topics")
    p.add_argument("--n", type=_positive_int, default=None, help="fixed document length")
    p.add_argument("--n-min", type=_positive_int, default=100)
    p.add_argument("--n-max", type=_positive_int, default=150)


def _topic_model_config(args):
    from .corpus import TopicModelConfig

    n_min, n_max = (args.n, args.n) if args.n else (args.n_min, args.n_max)
    if args.dirichlet is not None:
        return TopicModelConfig(T=args.T, v=args.v, policy="dirichlet",
                                concentration=args.dirichlet,
                                n_min=n_min, n_max=n_max)
    return TopicModelConfig(T=args.T, v=args.v, policy="fixed-tau",
                            tau=args.fixed_tau or 2, n_min=n_min, n_max=n_max)


def _masking_config(args):
    from .masking import MaskingConfig

    return MaskingConfig(p_mask_select=args.pm, p_keep=args.pc, p_random=args.pr)


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is None:
        from .rng import draw_seed

        args.seed = draw_seed()
    return args.seed


def _write_manifest(out_dir: str, subcommand: str, args, outputs: list[str]) -> None:
    record = {
        "subcommand": subcommand,
        "args": {k: v for k, v in sorted(vars(args).items())
                 if k not in ("func", "config", "threads") and not k.startswith("_")},
        "seed": getattr(args, "seed", None),
        "outputs": sorted(outputs),
        "version": _version(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _version() -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version("topicmlm")
    except PackageNotFoundError:
        return "0.1.0"


def _ensure_out(args) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# gen-data

def cmd_gen_data(args) -> int:
    from .corpus import sample_document, save_corpus
    from .masking import mask_document, save_masked_corpus
    from .rng import STREAM_CORPUS, STREAM_MASKING, stream_rng

    seed = _resolve_seed(args)
    out = _ensure_out(args)
    cfg = _topic_model_config(args)
    rng = stream_rng(seed, STREAM_CORPUS)
    docs = [sample_document(cfg, rng) for _ in range(args.count)]
    outputs = ["corpus.txt"]
    save_corpus(os.path.join(out, "corpus.txt"), docs, cfg, seed)
    if args.masked:
        mask_cfg = _masking_config(args)
        mask_rng = stream_rng(seed, STREAM_MASKING)
        mdocs = [mask_document(d, mask_cfg, mask_rng, cfg.T * cfg.v) for d in docs]
        header = f"#T={cfg.T},v={cfg.v},policy={cfg.policy},seed={seed}"
        save_masked_corpus(os.path.join(out, "masked.txt"), mdocs, header)
        outputs.append("masked.txt")
    _write_manifest(out, "gen-data", args, outputs)
    return 0


# ---------------------------------------------------------------------------
# train

def _build_params(args, vocab_size: int, mask_cfg, T: int, v: int):
    import numpy as np

    from .analytic import diagonal_wv, optimal_embedding_gram, optimal_wv_l2
    from .model import init_params
    from .rng import STREAM_INIT, stream_rng

    frozen = set(filter(None, (args.freeze or "").split(",")))
    biases = args.biases == "on"
    if args.attn == "uniform":
        frozen |= {"W_K", "W_Q"}
    params = init_params(
        vocab_size=vocab_size,
        d=args.d,
        d_attn=args.da,
        embedding_mode=args.emb,
        biases=biases,
        sigma0=args.sigma0,
        rng=stream_rng(args.seed, STREAM_INIT),
        frozen=frozen,
    )
    if args.attn == "uniform":
        params.W_K[:] = 0.0
        params.W_Q[:] = 0.0
        if params.b_K is not None:
            params.b_K = None
            params.b_Q = None
    if args.wv != "trained":
        if args.emb != "one-hot":
            raise ValueError("frozen analytic W_V needs one-hot embeddings")
        if args.wv == "frozen-optimal":
            params.W_V[:] = optimal_wv_l2(mask_cfg, T, v)
        elif args.wv == "frozen-diagonal":
            params.W_V[:] = diagonal_wv(mask_cfg, T, v)
        elif args.wv == "frozen-identity":
            params.W_V[:] = np.eye(vocab_size)
        else:
            raise ValueError(f"unknown --wv {args.wv!r}")
        params.frozen = params.frozen | {"W_V"}
    if args.bpred == "zero":
        params.frozen = params.frozen | {"b_pred"}
    elif args.bpred == "analytic":
        _, b = optimal_embedding_gram(mask_cfg, T, v)
        params.b_pred[:] = b
        params.frozen = params.frozen | {"b_pred"}
    return params


def cmd_train(args) -> int:
    import itertools

    from .corpus import document_stream, load_corpus
    from .loss import LossConfig, l2_penalty, save_loss_curve
    from .masking import mask_document
    from .model import save_checkpoint
    from .optim import TrainConfig, save_steplog, train
    from .rng import STREAM_MASKING, stream_rng

    seed = _resolve_seed(args)
    out = _ensure_out(args)
    mask_cfg = _masking_config(args)

    if args.docs:
        docs_list, meta = load_corpus(args.docs)
        T, v = meta["T"], meta["v"]
        if args.T is not None and args.T != T:
            raise ValueError("--T disagrees with the corpus header")
        vocab_size = T * v + 1
        if args.remask == "fixed":
            mask_rng = stream_rng(seed, STREAM_MASKING)
            docs_iter = itertools.cycle(
                [mask_document(d, mask_cfg, mask_rng, T * v) for d in docs_list])
        else:
            docs_iter = itertools.cycle(docs_list)
    else:
        if args.T is None or args.v is None:
            raise ValueError("need --T/--v or --docs")
        cfg = _topic_model_config(args)
        T, v = cfg.T, cfg.v
        vocab_size = cfg.vocab_size
        docs_iter = document_stream(cfg, seed)

    params = _build_params(args, vocab_size, mask_cfg, T, v)
    loss_cfg = LossConfig(kind=args.loss, l2=args.l2,
                          l2_tensors=tuple(filter(None, args.l2_tensors.split(","))))
    train_cfg = TrainConfig(
        optimizer=args.opt, lr=args.lr, steps=args.steps,
        batch_size=args.batch, schedule=args.schedule,
        stage1_steps=args.stage1, stage2_wv=args.stage2_wv,
        lr_decay=args.lr_decay, log_every=args.log_every, seed=seed,
    )
    analytic_wv = None
    if args.schedule == "two-stage" and args.stage2_wv == "analytic":
        from .analytic import optimal_wv_l2

        analytic_wv = optimal_wv_l2(mask_cfg, T, v)

    outputs = ["steplog.csv", "losscurve.csv"]
    curve_rows: list[tuple[int, float, float]] = []

    def on_log(row, p):
        curve_rows.append((row.step, row.loss, l2_penalty(p, loss_cfg.l2,
                                                          loss_cfg.l2_tensors)))
        if args.checkpoint_every and row.step and row.step % args.checkpoint_every == 0:
            name = f"ck-{row.step}"
            save_checkpoint(os.path.join(out, name), p, seed)
            outputs.append(f"{name}/checkpoint.json")

    params, logs = train(params, docs_iter, mask_cfg, loss_cfg, train_cfg,
                         analytic_wv=analytic_wv, on_log=on_log)
    save_checkpoint(os.path.join(out, "ck-final"), params, seed)
    outputs.append("ck-final/checkpoint.json")
    save_steplog(os.path.join(out, "steplog.csv"), logs)
    save_loss_curve(os.path.join(out, "losscurve.csv"), curve_rows)
    _write_manifest(out, "train", args, outputs)
    return 0


# ---------------------------------------------------------------------------
# verify

def cmd_verify(args) -> int:
    import numpy as np

    from .analytic import (attention_bounds, check_family_membership,
                           embedding_gram_realization, optimal_embedding_gram,
                           optimal_wv_l2, save_bounds)
    from .corpus import enumerate_topic_subsets
    from .landscape import containment_check, sweep
    from .loss import (population_loss_gradient, population_loss_uniform_attention,
                       ridge_population_optimum)

    seed = _resolve_seed(args)
    out = _ensure_out(args)
    mask_cfg = _masking_config(args)
    T, v, tau = args.T, args.v, args.tau
    report: dict = {"check": args.check, "T": T, "v": v, "tau": tau}
    outputs = ["report.json"]
    ok = True

    if args.check == "wv-l2":
        W = optimal_wv_l2(mask_cfg, T, v)
        subsets = enumerate_topic_subsets(T, tau)
        ridge = ridge_population_optimum(subsets, mask_cfg, T, v)
        diff = float(np.abs(W - ridge).max())
        fam = check_family_membership(W, mask_cfg, T, v)
        grad = float(np.linalg.norm(
            population_loss_gradient(W, 0.0, subsets, mask_cfg, T, v)))
        base = float(np.mean([population_loss_uniform_attention(W, 0.0, S, mask_cfg, T, v)
                              for S in subsets]))
        report.update(ridge_max_abs_diff=diff, family_residual=fam.max_residual,
                      gradient_norm=grad, population_loss=base)
        ok = diff < 1e-9 and fam.is_member and grad < 1e-8
    elif args.check == "embedding":
        E, b = optimal_embedding_gram(mask_cfg, T, v)
        subsets = enumerate_topic_subsets(T, tau)
        grad = float(np.linalg.norm(
            population_loss_gradient(E, b, subsets, mask_cfg, T, v)))
        fam = check_family_membership(E, mask_cfg, T, v, family="gram")
        W_E = embedding_gram_realization(mask_cfg, T, v)
        realized = float(np.abs(W_E.T @ W_E - E).max())
        report.update(gradient_norm=grad, family_residual=fam.max_residual,
                      realization_max_abs_diff=realized)
        ok = grad < 1e-8 and fam.is_member and realized < 1e-12
    elif args.check in ("attention-block", "attention-diagonal"):
        case = args.check.removeprefix("attention-")
        bounds = attention_bounds(mask_cfg, T, v, tau, case)
        save_bounds(os.path.join(out, "bounds.json"), bounds)
        outputs.append("bounds.json")
        grid = sweep(case, mask_cfg, T, v, tau)
        summary = containment_check(grid, mask_cfg)
        ok = summary["bounds_check"] == "pass"
        report.update(argmin=summary["argmin"], interval=list(bounds.interval))
    else:
        raise ValueError(f"unknown check {args.check!r}")

    report["result"] = "pass" if ok else "fail"
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "verify", args, outputs)
    return 0 if ok else 3


# ---------------------------------------------------------------------------
# landscape

def cmd_landscape(args) -> int:
    from .landscape import (default_grid, sample_mc, save_grid_csv,
                            save_summary_json, sweep)

    seed = _resolve_seed(args)
    out = _ensure_out(args)
    mask_cfg = _masking_config(args)
    grid = default_grid(args.lo, args.hi, args.grid)
    mc_cells = None
    mc_sample = None
    if args.mc_cells:
        mc_cells = []
        for pair in args.mc_cells.split(";"):
            i, _, j = pair.partition(",")
            mc_cells.append((int(i), int(j)))
        mc_sample = sample_mc(mask_cfg, args.T, args.v, args.tau,
                              n_positions=args.mc_positions,
                              doc_len=args.doc_len, seed=seed)
    result = sweep(args.case, mask_cfg, args.T, args.v, args.tau,
                   alphas=grid, betas=grid, mc_cells=mc_cells,
                   mc_sample=mc_sample)
    save_grid_csv(os.path.join(out, "grid.csv"), result)
    save_summary_json(os.path.join(out, "summary.json"), result, mask_cfg)
    _write_manifest(out, "landscape", args, ["grid.csv", "summary.json"])
    return 0


# ---------------------------------------------------------------------------
# analyze

def cmd_analyze(args) -> int:
    from .corpus import load_corpus
    from .masking import mask_document
    from .metrics import (attention_class_report, block_report, save_matrix_csv,
                          save_report)
    from .model import attention_weights, load_checkpoint
    from .rng import STREAM_MASKING, stream_rng

    seed = _resolve_seed(args)
    out = _ensure_out(args)
    params, _ = load_checkpoint(args.checkpoint)
    outputs = []

    if args.attention_classes:
        if not args.docs:
            raise ValueError("--attention-classes needs --docs")
        mask_cfg = _masking_config(args)
        docs, meta = load_corpus(args.docs)
        v = meta["v"]
        n_words = meta["T"] * v
        rng = stream_rng(seed, STREAM_MASKING)
        if args.max_docs:
            docs = docs[: args.max_docs]
        attns = []
        toks = []
        for doc in docs:
            md = mask_document(doc, mask_cfg, rng, n_words)
            attns.append(attention_weights(params, md.masked_tokens))
            toks.append(md.masked_tokens)
        rep = attention_class_report(attns, toks, v, debias=not args.no_debias)
        save_report(os.path.join(out, "attention_classes.json"), rep)
        outputs.append("attention_classes.json")

    if args.block_report:
        import numpy as np

        if args.tensor == "E":
            M = params.W_E.T @ params.W_E
            label = "gram"
        else:
            M = getattr(params, args.tensor)
            label = args.tensor
        n_words = M.shape[0] - 1
        if args.v is None or n_words % args.v:
            raise ValueError("--block-report needs --v dividing the word count")
        T = n_words // args.v
        rep = block_report(M, T, args.v)
        save_report(os.path.join(out, "block_report.json"), rep)
        save_matrix_csv(os.path.join(out, f"{label}.csv"), np.asarray(M))
        outputs += ["block_report.json", f"{label}.csv"]

    if not outputs:
        raise ValueError("nothing to analyze: pass --attention-classes or --block-report")
    _write_manifest(out, "analyze", args, outputs)
    return 0


# ---------------------------------------------------------------------------
# replay

def cmd_replay(args) -> int:
    with open(args.manifest) as fh:
        record = json.load(fh)
    sub = record["subcommand"]
    handler = _HANDLERS[sub]
    stored = dict(record["args"])
    stored["out"] = args.out
    replayed = argparse.Namespace(**stored)
    return handler(replayed)


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "verify": cmd_verify,
    "landscape": cmd_landscape,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topicmlm",
        description="Masked-language-model workbench on synthetic topic corpora",
    )
    parser.add_argument("--config", default=None,
                        help="key=value file supplying flag defaults")
    parser.add_argument("--threads", type=_positive_int, default=None,
                        help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", help="sample a corpus (optionally masked)")
    _add_corpus_flags(p)
    _add_masking_flags(p)
    p.add_argument("--count", type=_positive_int, required=True)
    p.add_argument("--masked", action="store_true",
                   help="also export a masked version of every document")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the single-layer model")
    _add_corpus_flags(p, require=False)
    _add_masking_flags(p)
    p.add_argument("--docs", default=None, help="train on a corpus file instead of sampling")
    p.add_argument("--remask", choices=("per-step", "fixed"), default="per-step",
                   help="fresh masks every step, or one fixed mask per document")
    p.add_argument("--emb", choices=("one-hot", "trained"), default="one-hot")
    p.add_argument("--d", type=_positive_int, default=None, help="embedding width")
    p.add_argument("--da", type=_positive_int, default=None, help="attention width")
    p.add_argument("--attn", choices=("trained", "uniform"), default="trained",
                   help="uniform freezes W_K = W_Q = 0 (exactly uniform attention)")
    p.add_argument("--wv", choices=("trained", "frozen-optimal", "frozen-diagonal",
                                    "frozen-identity"), default="trained")
    p.add_argument("--bpred", choices=("trained", "zero", "analytic"), default="trained")
    p.add_argument("--biases", choices=("on", "off"), default="on")
    p.add_argument("--freeze", default="", help="comma list of extra tensors to freeze")
    p.add_argument("--loss", choices=("squared", "ce"), default="squared")
    p.add_argument("--opt", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--l2-tensors", default="W_V")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--batch", type=_positive_int, default=16)
    p.add_argument("--sigma0", type=float, default=0.1)
    p.add_argument("--schedule", choices=("joint", "two-stage"), default="joint")
    p.add_argument("--lr-decay", choices=("none", "linear"), default="none")
    p.add_argument("--stage1", type=int, default=400)
    p.add_argument("--stage2-wv", choices=("stage1", "analytic"), default="stage1")
    p.add_argument("--log-every", type=_positive_int, default=10)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="check closed forms against oracles")
    p.add_argument("--check", required=True,
                   choices=("wv-l2", "embedding", "attention-block",
                            "attention-diagonal"))
    p.add_argument("--T", type=_positive_int, default=10)
    p.add_argument("--v", type=_positive_int, default=10)
    p.add_argument("--tau", type=_positive_int, default=2)
    _add_masking_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("landscape", help="sweep the attention-level loss surface")
    p.add_argument("--case", choices=("block", "diagonal"), required=True)
    p.add_argument("--T", type=_positive_int, default=100)
    p.add_argument("--v", type=_positive_int, default=300)
    p.add_argument("--tau", type=_positive_int, default=20)
    _add_masking_flags(p)
    p.add_argument("--grid", type=_positive_int, default=50)
    p.add_argument("--lo", type=float, default=1e-4)
    p.add_argument("--hi", type=float, default=1e7)
    p.add_argument("--mc-cells", default="",
                   help="semicolon list of alpha,beta grid indices to spot-check")
    p.add_argument("--mc-positions", type=_positive_int, default=10_000)
    p.add_argument("--doc-len", type=_positive_int, default=2000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("analyze", help="reports from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attention-classes", action="store_true")
    p.add_argument("--docs", default=None)
    p.add_argument("--max-docs", type=int, default=200)
    p.add_argument("--no-debias", action="store_true")
    p.add_argument("--block-report", action="store_true")
    p.add_argument("--tensor", choices=("W_V", "E"), default="W_V")
    p.add_argument("--v", type=_positive_int, default=None)
    _add_masking_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("replay", help="re-run a recorded manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # --threads must act before numpy is imported anywhere
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS"):
                os.environ.setdefault(var, argv[idx + 1])
    if "--config" in argv:
        idx = argv.index("--config")
        try:
            extra = _read_config(argv[idx + 1])
        except (OSError, ValueError, IndexError) as exc:
            print(f"error: bad --config: {exc}", file=sys.stderr)
            return 2
        # config entries go right after the subcommand so real flags win
        head = argv[: idx]
        tail = argv[idx + 2:]
        rest = head + tail
        if rest:
            rest = rest[:1] + extra + rest[1:]
        argv = rest
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


if __name__ == "__main__":
    sys.exit(main())
