"""Command-line entry point: ``mcmark {generate,detect,attack,sweep,etn}``.

Exit codes: 0 success, 2 configuration error, 3 input-data error,
4 provider or transport error. Errors are also written to stderr as one JSON
object per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from ..analysis import closed_form_etn_moments, expected_etn_uniform, token_replacement_attack, tradeoff_sweep
from ..core import TokenSequence, WatermarkError, derive_partition
from ..detector import detect
from ..generator import generate_sequence
from .config import ConfigError, RunConfig, build_provider, load_config
from .remote import HttpProvider, ProviderError

__all__ = ["main", "read_token_file", "EXIT_OK", "EXIT_CONFIG", "EXIT_INPUT", "EXIT_PROVIDER"]

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_PROVIDER = 0, 2, 3, 4

log = logging.getLogger("mcmark")


def _err(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


class _Output:
    """Line writer for ``--out`` or stdout."""

    def __init__(self, path: Optional[str]):
        self.path = path
        self.fh = open(path, "w") if path else sys.stdout

    def write(self, obj: dict) -> None:
        self.fh.write(json.dumps(obj, sort_keys=True) + "\n")

    def close(self):
        if self.path:
            self.fh.close()


def _write_meta(cfg: RunConfig, command: str) -> None:
    if cfg.out:
        meta = {"command": command, "config": cfg.echo(), "config_hash": cfg.config_hash()}
        Path(cfg.out + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _record_rng(seed: int, index: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index, stream]))


# -- token files ----------------------------------------------------------------

def read_token_file(path: str, vocab_size: Optional[int] = None):
    """Yield ``(id, TokenSequence)`` or ``(id, error message)`` per non-blank line.

    Each line is ``{"id": str, "tokens": [ints], "prompt_len": int}``; the
    first ``prompt_len`` tokens are the prompt.
    """
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rid = f"line-{lineno}"
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not a JSON object")
                rid = str(rec.get("id", rid))
                tokens = rec["tokens"]
                prompt_len = int(rec.get("prompt_len", 0))
                if not isinstance(tokens, list) or not all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
                    raise ValueError("tokens must be a list of integers")
                if not 0 <= prompt_len <= len(tokens):
                    raise ValueError("prompt_len must lie in [0, len(tokens)]")
                seq = TokenSequence(tokens=tokens[prompt_len:], prompt=tokens[:prompt_len])
                if vocab_size is not None:
                    seq.validate(vocab_size)
            except (ValueError, KeyError, TypeError, WatermarkError) as exc:
                yield rid, f"{type(exc).__name__}: {exc}"
                continue
            yield rid, seq


def _token_record(rid: str, seq: TokenSequence, config_hash: str) -> dict:
    return {
        "id": rid,
        "tokens": seq.full.tolist(),
        "prompt_len": int(seq.prompt.size),
        "config_hash": config_hash,
    }


# -- commands -------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    params = cfg.params()
    provider = build_provider(cfg)
    if cfg.l > provider.vocab_size:
        raise ConfigError(f"l={cfg.l} exceeds vocabulary size {provider.vocab_size}")
    part = derive_partition(params.secret_key, provider.vocab_size, params.l)
    chash = cfg.config_hash()
    out = _Output(cfg.out)
    records = _Output(cfg.out + ".records.jsonl" if cfg.out else None) if cfg.out else None
    failures = 0
    try:
        for idx in range(cfg.num_sequences):
            rid = f"seq-{idx:06d}"
            rng = _record_rng(cfg.seed, idx, 0)
            prompt = rng.integers(0, provider.vocab_size, size=cfg.prompt_len)
            try:
                rec = generate_sequence(provider, params, part, prompt=prompt, T=cfg.length, rng=rng)
            except ProviderError as exc:
                failures += 1
                _err("provider", str(exc), id=rid)
                continue
            out.write(_token_record(rid, rec.tokens, chash))
            if records is not None:
                records.write(
                    {
                        "id": rid,
                        "channels": rec.channels.tolist(),
                        "hits": rec.hits.astype(int).tolist(),
                        "hit_count": rec.hit_count,
                        "seed": [cfg.seed, idx],
                        "config_hash": chash,
                    }
                )
    finally:
        out.close()
        if records is not None:
            records.close()
    _write_meta(cfg, "generate")
    return EXIT_PROVIDER if failures else EXIT_OK


def _require_vocab(cfg: RunConfig) -> int:
    if cfg.vocab_size is None:
        if cfg.provider:
            return build_provider(cfg).vocab_size
        raise ConfigError("vocab_size is required")
    return cfg.vocab_size


def cmd_detect(cfg: RunConfig, token_file: str) -> int:
    params = cfg.params()
    N = _require_vocab(cfg)
    part = derive_partition(params.secret_key, N, params.l)
    chash = cfg.config_hash()
    out = _Output(cfg.out)
    counts = {"records": 0, "errors": 0, "watermarked": 0}
    try:
        for rid, item in read_token_file(token_file, N):
            counts["records"] += 1
            if isinstance(item, str):
                counts["errors"] += 1
                out.write({"id": rid, "error": item, "config_hash": chash})
                continue
            rep = detect(item, params, part)
            counts["watermarked"] += rep.watermarked
            out.write({"id": rid, **rep.to_dict(), "config_hash": chash})
    finally:
        out.close()
    _write_meta(cfg, "detect")
    print(json.dumps({"summary": counts, "config_hash": chash}), file=sys.stderr)
    return EXIT_INPUT if counts["errors"] else EXIT_OK


def cmd_attack(cfg: RunConfig, token_file: str) -> int:
    N = _require_vocab(cfg)
    chash = cfg.config_hash()
    out = _Output(cfg.out)
    errors = 0
    try:
        for idx, (rid, item) in enumerate(read_token_file(token_file, N)):
            if isinstance(item, str):
                errors += 1
                out.write({"id": rid, "error": item, "config_hash": chash})
                continue
            attacked = token_replacement_attack(item, cfg.epsilon, N, _record_rng(cfg.seed, idx, 1))
            out.write(_token_record(rid, attacked, chash))
    finally:
        out.close()
    _write_meta(cfg, "attack")
    return EXIT_INPUT if errors else EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    params = cfg.params()
    provider = build_provider(cfg)
    result = tradeoff_sweep(
        cfg.l_values,
        provider,
        params,
        T=cfg.length,
        epsilons=cfg.epsilons,
        trials=cfg.trials,
        seed=cfg.seed,
        fpr=cfg.fpr,
        prompt_len=cfg.prompt_len,
        progress=lambda l: log.info("finished l=%d", l),
    )
    chash = cfg.config_hash()
    result.metadata["config_hash"] = chash
    if cfg.out:
        Path(cfg.out).write_text(result.to_jsonl())
        Path(cfg.out + ".csv").write_text(result.to_csv())
        _write_meta(cfg, "sweep")
    else:
        sys.stdout.write(result.to_jsonl())
    if cfg.plot:
        _plot_sweep(result, cfg.plot)
    return EXIT_OK


def _plot_sweep(result, path: str) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        _err("config", "matplotlib is not installed; skipping plot")
        return
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for eps in sorted({r["epsilon"] for r in result.rows}):
        ls, med = result.series(eps, "median_log10_p")
        _, tpr = result.series(eps, "tpr")
        axes[0].plot(ls, med, marker="o", label=f"eps={eps:g}")
        axes[1].plot(ls, tpr, marker="o", label=f"eps={eps:g}")
    for ax in axes:
        ax.set_xscale("log")
        ax.set_xlabel("number of channels l")
        ax.legend()
    axes[0].set_ylabel("median log10 p-value")
    axes[1].set_ylabel(f"TPR at FPR={result.metadata['fpr']:g}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_etn(cfg: RunConfig) -> int:
    rows = [("mcmark2", None), ("sta", None)] + [("dipmark", a) for a in cfg.alphas]
    print(f"{'method':<16}{'mean (quad)':>14}{'mean (closed)':>15}{'var (quad)':>13}{'var (closed)':>14}")
    for method, alpha in rows:
        try:
            mean, var = expected_etn_uniform(method, alpha)
        except WatermarkError as exc:
            raise ConfigError(str(exc)) from None
        cmean, cvar = closed_form_etn_moments(method, alpha)
        name = method if alpha is None else f"dipmark({alpha:g})"
        print(f"{name:<16}{mean:>14.10f}{cmean:>15.10f}{var:>13.8f}{cvar:>14.8f}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--key", dest="secret_key", help="secret key as hex (or set $MCMARK_KEY)")
    common.add_argument("--l", type=int, help="number of channels")
    common.add_argument("--n", type=int, help="n-gram context width")
    common.add_argument("--p0", type=float, help="detection threshold on the p-value")
    common.add_argument("--vocab-size", dest="vocab_size", type=int)
    common.add_argument("--provider", help="dirichlet-iid[:k=v,..] | zipf-markov[:k=v,..] | file:PATH | URL")
    common.add_argument("--seed", type=int)
    common.add_argument("--epsilon", type=float, help="fraction of tokens to replace")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mcmark", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", parents=[common], help="generate watermarked token sequences")
    gen.add_argument("--num-sequences", dest="num_sequences", type=int)
    gen.add_argument("--length", type=int)
    gen.add_argument("--prompt-len", dest="prompt_len", type=int)
    det = sub.add_parser("detect", parents=[common], help="detect the watermark in a token file")
    det.add_argument("tokens", help="token file (JSON lines)")
    att = sub.add_parser("attack", parents=[common], help="apply the token replacement attack")
    att.add_argument("tokens", help="token file (JSON lines)")
    sw = sub.add_parser("sweep", parents=[common], help="robustness/detectability sweep over l")
    sw.add_argument("--length", type=int)
    sw.add_argument("--trials", type=int)
    sw.add_argument("--fpr", type=float)
    sw.add_argument("--l-values", dest="l_values", type=lambda s: [int(x) for x in s.split(",")])
    sw.add_argument("--epsilons", type=lambda s: [float(x) for x in s.split(",")])
    sw.add_argument("--plot", help="write a PNG of the sweep (needs matplotlib)")
    etn = sub.add_parser("etn", parents=[common], help="expected true-negative rate comparison")
    etn.add_argument("--alphas", type=lambda s: [float(x) for x in s.split(",")])
    return parser


_OVERRIDES = (
    "secret_key", "l", "n", "p0", "vocab_size", "provider", "seed", "epsilon", "out",
    "num_sequences", "length", "prompt_len", "trials", "fpr", "l_values", "epsilons", "plot", "alphas",
)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: getattr(args, k) for k in _OVERRIDES if hasattr(args, k)}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, args.tokens)
        if args.command == "attack":
            return cmd_attack(cfg, args.tokens)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_etn(cfg)
    except (ConfigError, TypeError) as exc:
        _err("config", str(exc))
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        _err("input", f"{exc.filename}: {exc.strerror}")
        return EXIT_INPUT
    except ProviderError as exc:
        _err("provider", str(exc))
        return EXIT_PROVIDER
    except WatermarkError as exc:
        _err("input", str(exc))
        return EXIT_INPUT
