"""``cwsep`` command-line entry point.

Exit codes::

    0   success
    1   fb-verify ran but reconstruction SNR is below 60 dB
    2   filter-bank design infeasible
    3   non-finite loss during training
    4   checkpoint does not match the requested architecture
    64  usage error
    65  bad or missing input data
    73  output cannot be created
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import index_dataset, read_wav, write_wav
from .config import DEFAULTS, TrainConfig, dump_train_config, load_train_config
from .exceptions import (
    ConfigError,
    CwsError,
    DatasetError,
    DesignError,
    IncompatibleCheckpointError,
    NumericError,
)
from .validation import BAND_COUNTS

log = logging.getLogger("cwsep")

EX_OK = 0
EX_BELOW_FLOOR = 1
EX_DESIGN = 2
EX_NONFINITE = 3
EX_MISMATCH = 4
EX_USAGE = 64
EX_DATAERR = 65
EX_CANTCREAT = 73

LOG_ENV = "CWSEP_LOG_LEVEL"
SNR_FLOOR_DB = 60.0


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EX_USAGE, f"{self.prog}: error: {message}\n")


def _band_count(text):
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid K {text!r}") from None
    if k not in BAND_COUNTS:
        raise argparse.ArgumentTypeError(f"K must be one of {', '.join(map(str, BAND_COUNTS))}")
    return k


def _writable_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PermissionError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path


def _write_text(path, text):
    path = Path(path)
    if path.parent != Path("."):
        _writable_dir(path.parent)
    path.write_text(text)


# -- fb-verify -----------------------------------------------------------------

def cmd_fb_verify(args):
    from .filterbank import analyze, design_filterbank, reconstruction_snr, save_filterbank, synthesize

    try:
        bank = design_filterbank(args.k, args.taps, args.attenuation)
    except DesignError as exc:
        print(f"design failed: {exc} (achieved {exc.achieved_attenuation:.2f} dB)")
        return EX_DESIGN
    rng = np.random.default_rng(args.seed)
    sr = args.sample_rate
    if args.signal == "noise":
        signals = [rng.standard_normal(int(args.seconds * sr))]
        label = f"white noise, {args.seconds:g} s"
    else:
        clip = read_wav(args.signal)
        sr = clip.sample_rate
        signals = [ch.astype(np.float64) for ch in clip.samples]
        label = str(args.signal)

    def roundtrip(x):
        return reconstruction_snr(x, synthesize(analyze(x, bank), bank))

    snr = min(roundtrip(x) for x in signals)
    n = max(bank.taps * 8, 4096)
    t = np.arange(n)
    sweep = []
    for f in np.linspace(0.01, 0.49, args.sweep_tones):
        sweep.append((f * sr, roundtrip(np.sin(2 * np.pi * f * t + 0.3))))
    worst = min(v for _, v in sweep) if sweep else float("nan")
    atten = "n/a" if bank.prototype is None else f"{bank.prototype.stopband_attenuation:.3f}"
    lines = [
        f"K {bank.K}",
        f"taps {bank.taps}",
        f"stopband_attenuation_db {atten}",
        f"signal {label}",
        f"snr_db {snr:.3f}",
        f"sweep_worst_db {worst:.3f}",
        "# tone_hz snr_db",
    ] + [f"{f:.3f} {v:.3f}" for f, v in sweep]
    report = "\n".join(lines) + "\n"
    print(f"K={bank.K} taps={bank.taps} reconstruction SNR {snr:.2f} dB, "
          f"tone sweep worst {worst:.2f} dB")
    if args.report:
        _write_text(args.report, report)
    if args.coeffs:
        save_filterbank(args.coeffs, bank)
    return EX_OK if snr >= SNR_FLOOR_DB else EX_BELOW_FLOOR


# -- train -----------------------------------------------------------------------

def cmd_train(args):
    from .nn.checkpoint import save_checkpoint
    from .separator import build_model
    from .training import fit

    cfg = load_train_config(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_steps is not None:
        overrides["max_steps"] = args.max_steps
    if overrides:
        cfg = TrainConfig(**{**cfg.__dict__, **overrides})
    train_index = index_dataset(args.data, "train")
    valid_index = index_dataset(args.data, "valid")
    if len(train_index) == 0 or len(valid_index) == 0:
        raise DatasetError(f"{args.data}: train and valid splits must both contain songs")
    first = train_index[0].load()[0]
    out = _writable_dir(args.out)
    ckpt = out / "best.ckpt"
    net = build_model(cfg, first.channels)
    extra = {"K": cfg.K, "sample_rate": first.sample_rate, "channels": first.channels}

    def on_improve(model, record):
        save_checkpoint(ckpt, model, {**extra, "step": record.steps,
                                      "valid_loss": record.best_valid})

    stop = {"flag": False}

    def handler(signum, frame):
        log.warning("signal %d received, stopping after the current step", signum)
        stop["flag"] = True

    previous = {s: signal.signal(s, handler) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        record = fit(net, train_index, valid_index, cfg, sample_rate=first.sample_rate,
                     dtype=np.float32, on_improve=on_improve, should_stop=lambda: stop["flag"])
    finally:
        for s, h in previous.items():
            signal.signal(s, h)
    if record.best_step is None:
        save_checkpoint(ckpt, net, {**extra, "step": record.steps})
    (out / "train.log").write_text(record.to_log())
    (out / "config.ini").write_text(dump_train_config(cfg))
    print(f"stopped after {record.steps} steps ({record.stop_reason}); "
          f"best valid {record.best_valid:.5f} at step {record.best_step}; checkpoint {ckpt}")
    return EX_OK


# -- separate --------------------------------------------------------------------

def cmd_separate(args):
    from .pipeline import SeparationJob, constant_masks, separate

    if args.identity_mask:
        if args.k is None:
            raise UsageError("--identity-mask needs --k")
        job = SeparationJob(args.input, K=args.k, mask_fn=constant_masks(1.0, 1.0))
    else:
        if args.model is None:
            raise UsageError("--model is required unless --identity-mask is given")
        job = SeparationJob(args.input, checkpoint=args.model, K=args.k)
    job.segment_s = args.segment_s
    job.crossfade_s = args.crossfade_s
    if not Path(args.input).is_file():
        raise FileNotFoundError(f"no such input file: {args.input}")
    out = _writable_dir(args.out)
    vocal, acc = separate(job)
    write_wav(out / "vocal.wav", vocal)
    write_wav(out / "accompaniment.wav", acc)
    print(f"wrote {out / 'vocal.wav'} and {out / 'accompaniment.wav'} "
          f"({vocal.n_samples} samples at {vocal.sample_rate} Hz)")
    return EX_OK


# -- evaluate --------------------------------------------------------------------

def _first_existing(directory, names):
    for name in names:
        p = directory / name
        if p.is_file():
            return p
    return None


def cmd_evaluate(args):
    from .bsseval import aggregate, eval_windowed, format_report, summary_table

    est_root, ref_root = Path(args.est), Path(args.ref)
    for root in (est_root, ref_root):
        if not root.is_dir():
            raise DatasetError(f"no such directory: {root}")
    vocal_scores, acc_scores = [], []
    for song_dir in sorted(p for p in ref_root.iterdir() if p.is_dir()):
        ref_v = _first_existing(song_dir, ("vocals.wav", "vocal.wav"))
        ref_a = _first_existing(song_dir, ("accompaniment.wav",))
        if ref_v is None or ref_a is None:
            log.warning("reference %s lacks stems, skipped", song_dir.name)
            continue
        est_dir = est_root / song_dir.name
        est_v = _first_existing(est_dir, ("vocal.wav", "vocals.wav"))
        est_a = _first_existing(est_dir, ("accompaniment.wav",))
        if est_v is None or est_a is None:
            log.warning("no estimate for song %s, skipped", song_dir.name)
            continue
        rv, ra, ev, ea = (read_wav(p) for p in (ref_v, ref_a, est_v, est_a))
        refs = [rv.samples, ra.samples]
        kw = dict(sample_rate=rv.sample_rate, window_s=args.window_s, hop_s=args.hop_s,
                  song=song_dir.name)
        vocal_scores.append(eval_windowed(ev.samples, refs, 0, **kw))
        acc_scores.append(eval_windowed(ea.samples, refs, 1, **kw))
    if not vocal_scores:
        raise DatasetError("no songs in common between estimates and references")
    report = format_report(vocal_scores, acc_scores)
    if args.report:
        _write_text(args.report, report)
    table = summary_table(aggregate(vocal_scores), aggregate(acc_scores))
    print("  ".join(f"{k} {v:.2f}" for k, v in table.items()))
    return EX_OK


# -- profile ---------------------------------------------------------------------

def cmd_profile(args):
    from .nn import build_network, count_flops
    from .spectral import CwsTransform

    channels, K = args.channels, args.k
    transform = CwsTransform(K, args.sample_rate).fit()
    n = int(round(args.seconds * args.sample_rate))
    frames = 1 + transform.band_length(n) // transform.hop_
    bins = transform.frame_len_ // 2 + 1
    planes = 2 * channels * K
    sources = DEFAULTS["profile"].getint("sources")
    net = build_network(args.arch, planes, sources * channels * K, seed=args.seed or 0)
    report = count_flops(net, (1, planes, bins, frames))
    print(f"arch {args.arch}  K {K}  input {planes}x{bins}x{frames}  "
          f"params {report.param_count} ({report.param_count / 1e6:.3f} M)  "
          f"GFLOPs {report.gflops:.3f}")
    return EX_OK


# -- entry -----------------------------------------------------------------------

def build_parser():
    prof = DEFAULTS["profile"]
    p = _Parser(prog="cwsep", description="Channel-wise subband music source separation.")
    p.add_argument("--version", action="version", version=f"cwsep {__version__}")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fb = sub.add_parser("fb-verify", help="design a filter bank and check reconstruction")
    fb.add_argument("--k", type=_band_count, required=True)
    fb.add_argument("--taps", type=int, default=None)
    fb.add_argument("--attenuation", type=float, default=None, help="stopband dB")
    fb.add_argument("--signal", default="noise", help="'noise' or a WAV path")
    fb.add_argument("--seconds", type=float, default=5.0, help="noise length")
    fb.add_argument("--sample-rate", type=int, default=prof.getint("sample_rate"))
    fb.add_argument("--sweep-tones", type=int, default=50)
    fb.add_argument("--report", default=None)
    fb.add_argument("--coeffs", default=None, help="write coefficients to this text file")
    fb.set_defaults(func=cmd_fb_verify)

    tr = sub.add_parser("train", help="train a mask estimator")
    tr.add_argument("--config", default=None)
    tr.add_argument("--data", required=True, help="root with train/ and valid/ splits")
    tr.add_argument("--out", required=True)
    tr.add_argument("--max-steps", type=int, default=None)
    tr.set_defaults(func=cmd_train)

    sp = sub.add_parser("separate", help="separate a mixture into vocal and accompaniment")
    sp.add_argument("--input", required=True)
    sp.add_argument("--model", default=None)
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=_band_count, default=None)
    sp.add_argument("--identity-mask", action="store_true", help="bypass the network, mask = 1")
    sp.add_argument("--segment-s", type=float, default=DEFAULTS["pipeline"].getfloat("segment_s"))
    sp.add_argument("--crossfade-s", type=float,
                    default=DEFAULTS["pipeline"].getfloat("crossfade_s"))
    sp.set_defaults(func=cmd_separate)

    ev = sub.add_parser("evaluate", help="windowed SDR/SIR/SAR against references")
    ev.add_argument("--est", required=True)
    ev.add_argument("--ref", required=True)
    ev.add_argument("--report", default=None)
    ev.add_argument("--window-s", type=float, default=DEFAULTS["eval"].getfloat("window_s"))
    ev.add_argument("--hop-s", type=float, default=DEFAULTS["eval"].getfloat("hop_s"))
    ev.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("profile", help="parameter count and GFLOPs of an architecture")
    pr.add_argument("--arch", choices=("unet5", "unet6", "mdn"), default="unet5")
    pr.add_argument("--k", type=_band_count, default=1)
    pr.add_argument("--seconds", type=float, default=prof.getfloat("seconds"))
    pr.add_argument("--channels", type=int, default=prof.getint("channels"))
    pr.add_argument("--sample-rate", type=int, default=prof.getint("sample_rate"))
    pr.set_defaults(func=cmd_profile)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cwsep: error: {exc}", file=sys.stderr)
        return EX_USAGE
    except IncompatibleCheckpointError as exc:
        print(f"cwsep: incompatible checkpoint: {exc}", file=sys.stderr)
        return EX_MISMATCH
    except NumericError as exc:
        print(f"cwsep: training diverged: {exc}", file=sys.stderr)
        return EX_NONFINITE
    except DesignError as exc:
        print(f"cwsep: {exc}", file=sys.stderr)
        return EX_DESIGN
    except PermissionError as exc:
        print(f"cwsep: {exc}", file=sys.stderr)
        return EX_CANTCREAT
    except ConfigError as exc:
        print(f"cwsep: bad config: {exc}", file=sys.stderr)
        return EX_USAGE
    except (CwsError, OSError, ValueError) as exc:
        print(f"cwsep: {exc}", file=sys.stderr)
        return EX_DATAERR


if __name__ == "__main__":
    sys.exit(main())
