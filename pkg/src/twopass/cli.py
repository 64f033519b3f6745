"""``twopass`` command line: data generation, training, decoding, evaluation
and reporting.  Exit status 0 on success, 1 on usage errors, 2 on data or
checkpoint errors."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import KEYS, Config, ConfigError, build_config, format_config, parse_config_text
from .data import FormatError, Vocab, generate_corpus, read_corpus, utterance_id, write_corpus

ATTENTION_FLAGS = {"both": "both", "acoustic": "acoustics_only", "text": "text_only"}
STAGE_FLAGS = {"rnnt": "rnnt", "delib-ce": "delib_ce", "mwer": "mwer", "joint": "joint"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v]


def _str_list(value: str) -> list[str]:
    return [v for v in value.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="twopass", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, seed_required=False):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any configuration key")
        p.add_argument("--seed", type=int, required=seed_required)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p, seed_required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out")
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--successors", type=int)

    p = sub.add_parser("train", help="run one training stage")
    common(p, seed_required=True)
    p.add_argument("--stage", choices=list(STAGE_FLAGS), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--init", help="checkpoint to start from")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="CSV training log")
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--attention", choices=list(ATTENTION_FLAGS))
    p.add_argument("--hyps", type=int)
    p.add_argument("--ae", type=_on_off)
    p.add_argument("--lam", type=float)
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("decode", help="two-pass decoding")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["beam", "rescore"])
    p.add_argument("--attention", choices=list(ATTENTION_FLAGS))
    p.add_argument("--hyps", type=int)
    p.add_argument("--ae", type=_on_off)
    p.add_argument("--b1", type=int)
    p.add_argument("--b2", type=int)
    p.add_argument("--first-pass", action="store_true", help="write first-pass beams only")
    p.add_argument("--nbest", action="store_true")

    p = sub.add_parser("eval", help="WER of a decode output against a corpus")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--hyp", required=True)

    p = sub.add_parser("flops", help="second-pass complexity estimate")
    common(p)
    p.add_argument("--mb", type=float, required=True)
    p.add_argument("--md", type=float, required=True)
    p.add_argument("--n", type=float, required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--b", type=float, required=True)
    p.add_argument("--frames", type=float, required=True)
    p.add_argument("--lpad", type=float, required=True)
    p.add_argument("--attn-params", type=float, default=2e6)

    p = sub.add_parser("heatmap", help="export text-attention weights")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--hyps", type=int)
    p.add_argument("--out", required=True, help="output prefix (.csv and .pgm)")

    p = sub.add_parser("ablate", help="run the ablation matrix")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--hyps", dest="hyps_list", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--modes", type=_str_list, default=list(ATTENTION_FLAGS))
    p.add_argument("--ae", dest="ae_list", type=lambda v: [_on_off(x) for x in _str_list(v)],
                   default=[False, True])
    p.add_argument("--decodes", type=_str_list, default=["beam", "rescore"])
    return parser


# ---------------------------------------------------------------- config

def _flag_values(args) -> dict[str, object]:
    """Configuration keys given as named flags."""
    mapping = {
        "seed": "seed", "threads": "threads", "noise_sigma": "noise_sigma",
        "successors": "successors", "steps": "steps", "lr": "lr", "batch_size": "batch_size",
        "optimizer": "optimizer", "hyps": "hyps", "ae": "ae", "lam": "lam", "alpha": "alpha",
        "b1": "b1", "b2": "b2",
    }
    out = {key: getattr(args, attr) for attr, key in mapping.items()
           if getattr(args, attr, None) is not None}
    if getattr(args, "attention", None):
        out["attention"] = ATTENTION_FLAGS[args.attention]
    if getattr(args, "stage", None):
        out["stage"] = STAGE_FLAGS[args.stage]
    if getattr(args, "mode", None):
        out["decode"] = args.mode
    return out


def _user_values(args) -> dict[str, object]:
    """File values, then ``--set`` values, then named flags (later wins)."""
    values: dict[str, object] = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        values.update(parse_config_text(item, "--set"))
    values.update(_flag_values(args))
    return values


def _resolve(args, model=None) -> Config:
    values = _user_values(args)
    if model is None:
        return build_config(values)
    base = {**dataclasses.asdict(model.cfg), **dataclasses.asdict(model.data_cfg)}
    return build_config(base, values)


def _print_config(cfg: Config) -> None:
    print("# resolved config")
    print(format_config(cfg), end="")
    print(f"# seed {cfg.seed}", flush=True)


def _load_model(path, cfg_values: dict[str, object]):
    from .model import TwoPassModel
    if not Path(path).is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    overrides = {k: v for k, v in cfg_values.items() if KEYS[k][0] == "model"}
    model = TwoPassModel.load(path, **overrides)
    data_over = {k: v for k, v in cfg_values.items() if KEYS[k][0] == "data"}
    if data_over:
        model.data_cfg = dataclasses.replace(model.data_cfg, **data_over)
        model._build()
    return model


def _read_corpus(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"corpus not found: {path}")
    return read_corpus(path)


# -------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    _print_config(cfg)
    vocab = Vocab.default(cfg.data.n_symbols)
    utts = generate_corpus(args.count, cfg.seed, vocab, cfg.data)
    write_corpus(args.out, utts)
    if args.vocab_out:
        vocab.save(args.vocab_out)
    print(f"wrote {len(utts)} utterances to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .model import TwoPassModel
    from .training import TrainLog, train
    values = _user_values(args)
    if args.init:
        model = _load_model(args.init, values)
        cfg = _resolve(args, model)
        model.seed = cfg.seed
    else:
        if STAGE_FLAGS[args.stage] in ("delib_ce", "mwer"):
            raise UsageError(f"--stage {args.stage} requires --init")
        cfg = _resolve(args)
        model = TwoPassModel(cfg.model, cfg.data, cfg.seed)
    _print_config(cfg)
    utts = _read_corpus(args.data)
    log = train(model, utts, cfg, TrainLog(args.log))
    model.save(args.out)
    losses = log.losses
    print(f"{cfg.train.stage}: {len(losses)} steps, first loss {losses[0]:.6f}, "
          f"last loss {losses[-1]:.6f}")
    print(f"saved {args.out}")
    return 0


def cmd_decode(args) -> int:
    from .decoding import decode_corpus, first_pass_corpus, write_decode_output
    from .metrics import compute_wer
    values = _user_values(args)
    model = _load_model(args.model, values)
    cfg = _resolve(args, model)
    _print_config(cfg)
    utts = _read_corpus(args.data)
    dc = cfg.decode
    firsts = first_pass_corpus(model, utts, dc.b1, dc.max_symbols, dc.threads)
    if args.first_pass:
        beams = [fp.beam for fp in firsts]
    else:
        beams = decode_corpus(model, utts, dc, cfg.model.attention, firsts)
    write_decode_output(args.out, beams, model.vocab,
                        [utterance_id(k) for k in range(len(utts))], nbest=args.nbest)
    wer = compute_wer([u.reference for u in utts], [b[0].tokens for b in beams])
    print(f"decoded {len(utts)} utterances to {args.out}; WER {wer:.6f}")
    return 0


def cmd_eval(args) -> int:
    from .decoding import read_decode_output
    from .metrics import compute_wer
    cfg = _resolve(args)
    _print_config(cfg)
    utts = _read_corpus(args.data)
    vocab = Vocab.default(cfg.data.n_symbols)
    try:
        hyps = read_decode_output(args.hyp, vocab)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{args.hyp}: malformed decode output ({exc})") from None
    ids = [utterance_id(k) for k in range(len(utts))]
    missing = [i for i in ids if i not in hyps]
    if missing:
        raise FormatError(f"{args.hyp}: no hypothesis for {missing[0]}")
    wer = compute_wer([u.reference for u in utts], [hyps[i][0][0] for i in ids])
    print(f"WER {wer:.6f} over {len(utts)} utterances")
    return 0


def cmd_flops(args) -> int:
    from .flops import FlopsInput, estimate_flops, las_configuration, split_attention
    cfg = _resolve(args)
    _print_config(cfg)
    f = FlopsInput(args.mb, args.md, args.n, args.h, args.b, args.frames, args.lpad,
                   split_attention(args.attn_params))
    delib = estimate_flops(f)
    las = estimate_flops(las_configuration(f))
    print(f"deliberation GFLOPS {delib / 1e9:.4f}")
    print(f"LAS configuration GFLOPS {las / 1e9:.4f}")
    print(f"ratio {delib / las:.4f}" if las else "ratio undefined")
    return 0


def cmd_heatmap(args) -> int:
    from .decoding import decode_two_pass, run_first_pass
    from .report import export_heatmap, text_attention
    values = _user_values(args)
    model = _load_model(args.model, values)
    cfg = _resolve(args, model)
    _print_config(cfg)
    utts = _read_corpus(args.data)
    if not 0 <= args.index < len(utts):
        raise UsageError(f"--index must be in [0, {len(utts)})")
    utt = utts[args.index]
    first = run_first_pass(model, utt, cfg.decode.b1, cfg.decode.max_symbols)
    best = decode_two_pass(model, utt, cfg.decode, cfg.model.attention, first)[0]
    weights, sources, outputs = text_attention(model, first, best.tokens, cfg.decode.hyps)
    csv_path, pgm_path = export_heatmap(weights, sources, outputs, args.out)
    print(f"wrote {csv_path} and {pgm_path} ({weights.shape[0]}x{weights.shape[1]})")
    return 0


def cmd_ablate(args) -> int:
    from .report import AblationCell, checkpoint_name, run_ablation_suite
    cfg = _resolve(args)
    _print_config(cfg)
    for mode in args.modes:
        if mode not in ATTENTION_FLAGS:
            raise UsageError(f"unknown attention mode {mode!r}")
    for d in args.decodes:
        if d not in ("beam", "rescore"):
            raise UsageError(f"unknown decode mode {d!r}")
    matrix = [AblationCell(ATTENTION_FLAGS[m], h, a, d)
              for h in args.hyps_list for m in args.modes for a in args.ae_list
              for d in args.decodes]
    ckpts = {c.key: Path(args.ckpt_dir) / checkpoint_name(*c.key) for c in matrix}
    utts = _read_corpus(args.data)
    report = run_ablation_suite(utts, ckpts, matrix, cfg.decode)
    report.write_csv(args.out)
    for r in report.rows:
        print(f"{r.config_id:40s} WER {r.wer:.4f}  GFLOPS {r.gflops:.6f}")
    print(f"wrote {args.out}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data, "train": cmd_train, "decode": cmd_decode, "eval": cmd_eval,
    "flops": cmd_flops, "heatmap": cmd_heatmap, "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("twopass: error: a subcommand is required")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(exc, file=sys.stderr)
        return 1
    except (FormatError, OSError, ValueError) as exc:
        print(f"twopass: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
