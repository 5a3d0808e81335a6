"""Command-line entry point.

Exit codes: 0 ok, 1 usage, 2 domain error, 3 internal error. With ``--out``
each run writes its result plus ``manifest.json`` into that directory and
touches nothing else.
"""

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from . import __version__
from . import analysis, chain as chainmod, interop, plasma
from .config import ConfigError, digest, from_dict, read_json
from .crypto import Address, CurveError, KeyPair, get_curve, keygen
from .encoding import DecodeError
from .ledger import (
    OutPoint,
    TxError,
    UtxoTransaction,
    build_consolidation,
    build_joint_payment,
    build_transfer,
    tx_fee,
)

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_INTERNAL = 0, 1, 2, 3

DOMAIN_ERRORS = (
    TxError,
    chainmod.ChainError,
    chainmod.MiningExhausted,
    plasma.PlasmaError,
    interop.InteropError,
    ConfigError,
    DecodeError,
    CurveError,
    analysis.InfeasibleSecurity,
    analysis.Unreachable,
    ValueError,
    OSError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config_digest: Optional[str]
    seed: Optional[int]
    tool_version: str = __version__
    outputs: List[str] = field(default_factory=list)


# --- helpers ----------------------------------------------------------------

def _key(spec: str) -> KeyPair:
    """``name:<label>`` for a deterministic named key, else a keygen JSON file."""
    if spec.startswith("name:"):
        return KeyPair.from_name(spec[5:])
    data = read_json(spec)
    return KeyPair.from_private(int(data["private"], 16), get_curve(data.get("curve", "large")))


def _address(spec: str) -> Address:
    if spec.startswith("name:"):
        return KeyPair.from_name(spec[5:]).address
    return Address.decode(spec)


def _render(obj, fmt: str) -> str:
    if fmt == "csv":
        rows = obj if isinstance(obj, list) else [obj]
        buf = io.StringIO()
        cols = list(rows[0].keys()) if rows else []
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (json.dumps(v, sort_keys=True) if isinstance(v, (dict, list)) else v) for k, v in r.items()})
        return buf.getvalue()
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Output:
    def __init__(self, args, command: str, argv, config=None):
        self.args = args
        self.manifest = RunManifest(command, list(argv), digest(config) if config is not None else None,
                                    getattr(args, "seed", None))

    def emit(self, obj=None, text: Optional[str] = None, name: str = "result"):
        fmt = self.args.format
        body = text if (fmt == "text" and text is not None) else _render(obj, "csv" if fmt == "csv" else "json")
        sys.stdout.write(body)
        if self.args.out:
            ext = {"csv": "csv", "text": "txt"}.get(fmt, "json")
            self.write_file(f"{name}.{ext}", body.encode())

    def write_file(self, name: str, data: bytes):
        os.makedirs(self.args.out, exist_ok=True)
        path = os.path.join(self.args.out, name)
        with open(path, "wb") as fh:
            fh.write(data)
        self.manifest.outputs.append(name)
        return path

    def finish(self):
        if self.args.out:
            os.makedirs(self.args.out, exist_ok=True)
            with open(os.path.join(self.args.out, "manifest.json"), "w") as fh:
                json.dump(asdict(self.manifest), fh, indent=2, sort_keys=True)
                fh.write("\n")


def _tx_record(tx: UtxoTransaction, fee: int) -> dict:
    return {"txid": tx.txid.hex(), "raw": tx.raw.hex(), "fee": fee, "size": tx.size}


def _load_txs(paths) -> List[UtxoTransaction]:
    return [UtxoTransaction.parse(bytes.fromhex(read_json(p)["raw"])) for p in paths or []]


# --- commands -----------------------------------------------------------------

def cmd_keygen(args, out: Output):
    kp = keygen(args.seed, get_curve(args.curve))
    rec = {"curve": args.curve, "private": format(kp.private, "x"), "public": kp.pubkey_bytes.hex(),
           "address": kp.address.encoded}
    out.emit(rec, text=f"{kp.address.encoded}\n", name="key")


def cmd_tx(args, out: Output):
    chain = chainmod.load_chain(args.chain)
    state = chain.utxo
    if args.tx_cmd == "create":
        recipients = [(_address(args.to), args.amount)]
        tx = build_transfer(_key(args.key), recipients, state, fee=args.fee)
    elif args.tx_cmd == "consolidate":
        tx = build_consolidation(_key(args.key), state, fee=args.fee)
    else:
        keys = [_key(k) for k in args.key]
        contributions = []
        for spec in args.input:
            txid, _, idx = spec.partition(":")
            contributions.append(OutPoint(bytes.fromhex(txid), int(idx)))
        tx = build_joint_payment(keys, contributions, _address(args.to), args.amount, state)
    rec = _tx_record(tx, tx_fee(tx, state))
    out.emit(rec, text=f"{rec['txid']}\n", name="tx")


def cmd_mine(args, out: Output):
    chain = chainmod.load_chain(args.chain)
    txs = _load_txs(args.tx)
    miner = _address(args.miner)
    mined = []
    for i in range(args.blocks):
        b = chain.mine_next(miner, txs if i == 0 else [])
        mined.append({"height": chain.height, "id": b.id.hex(), "txs": len(b.transactions)})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        chainmod.save_chain(chain, os.path.join(args.out, "chain.bin"))
        out.manifest.outputs.append("chain.bin")
    out.emit(mined, text="".join(f"{m['height']} {m['id']}\n" for m in mined), name="mined")


def cmd_chain(args, out: Output):
    if args.chain_cmd == "init":
        params = chainmod.ChainParams.regtest(args.bits_of_work)
        chain = chainmod.Chain(params)
        if not args.out:
            raise UsageError("chain init needs --out")
        os.makedirs(args.out, exist_ok=True)
        chainmod.save_chain(chain, os.path.join(args.out, "chain.bin"))
        out.manifest.outputs.append("chain.bin")
        out.emit({"height": 0, "genesis": chain.tip_id.hex()}, text=f"genesis {chain.tip_id.hex()}\n")
        return
    params, blocks = chainmod.read_snapshot(args.chain)
    try:
        chain = chainmod.audit_chain(blocks, params)
    except chainmod.ChainAuditError as exc:
        rec = {"valid": False, "height": exc.height, "error": f"{type(exc.cause).__name__}: {exc.cause}"}
        out.emit(rec, text=f"INVALID at height {exc.height}: {rec['error']}\n", name="audit")
        raise
    rec = {"valid": True, "height": chain.height, "tip": chain.tip_id.hex(), "utxo_total": chain.utxo.total()}
    if args.chain_cmd == "audit":
        rec["blocks"] = [{"height": h, "id": b.id.hex(), "txs": len(b.transactions),
                          "difficulty": str(b.header.difficulty)} for h, b in enumerate(chain.blocks)]
    out.emit(rec, text=f"valid height={chain.height} tip={chain.tip_id.hex()}\n", name="audit")


def cmd_sim(args, out: Output, config):
    from . import netsim  # pulls in numpy and networkx, so only on demand
    cfg = from_dict(netsim.SimConfig, config or {}, "sim config")
    if args.seed is not None:
        cfg.seed = args.seed
    res = netsim.run(cfg)
    m = res.metrics.as_dict()
    m["config"] = asdict(cfg)
    if args.format == "csv":
        out.emit({k: v for k, v in m.items() if k != "config"}, name="metrics")
    else:
        out.emit(m, name="metrics")
    if args.out and cfg.trace:
        out.write_file("trace.json", json.dumps(res.trace, indent=1).encode())


def _floats(s: str) -> List[float]:
    return [float(x) for x in s.split(",")]


def _ints(s: str) -> List[int]:
    out = []
    for part in s.split(","):
        lo, _, hi = part.partition("..")
        out.extend(range(int(lo), int(hi) + 1) if hi else [int(lo)])
    return out


def cmd_analyze(args, out: Output):
    if args.an_cmd == "finality":
        rows = analysis.finality_table(_ints(args.k), _floats(args.q))
        for r in rows:
            r["p_success_beta"] = analysis.finality_prob_beta(r["k"], r["q"])
        text = "".join(f"{r['p_success']:.12g}\n" for r in rows) if len(rows) == 1 else \
            "k,q,P\n" + "".join(f"{r['k']},{r['q']},{r['p_success']:.12g}\n" for r in rows)
        out.emit(rows if len(rows) > 1 or args.format == "csv" else rows[0], text=text, name="finality")
    elif args.an_cmd == "difficulty":
        p_max = analysis.max_mining_prob(args.q, args.epsilon, args.delta, args.n, args.honest_threshold)
        rec = {"q": args.q, "epsilon": args.epsilon, "delta": args.delta, "n": args.n,
               "honest_threshold": args.honest_threshold, "p_max": p_max,
               "target": int(p_max * 2 ** 256) if p_max < 1 else 2 ** 256}
        out.emit(rec, text=f"{p_max:.12g}\n", name="difficulty")
    elif args.an_cmd == "unfairness":
        rec = {"q": args.q, "honest_share_bound": analysis.unfairness_bound(args.q)}
        out.emit(rec, text=f"{rec['honest_share_bound']:.6f}\n", name="unfairness")
    else:
        params = analysis.SecurityParams(n=args.n, p=args.p, q=args.q, epsilon=args.epsilon, delta=args.delta)
        rec = {"n": args.n, "p": args.p, "delta": args.delta, "efficiency": analysis.efficiency(params),
               "rounds_per_block": analysis.rounds_per_block(args.p, args.n), "security_holds": analysis.security_holds(params)}
        out.emit(rec, text=f"{rec['efficiency']:.12g}\n", name="efficiency")


def cmd_plasma(args, out: Output, config):
    if args.plasma_cmd == "demo":
        doc = plasma.run_paper_example()
        body = plasma.transcript_json(doc)
        sys.stdout.write(body)
        if args.out:
            out.write_file("plasma_demo.json", body.encode())
        return
    if config is None:
        raise UsageError("plasma run needs --config")
    script = config.get("actions")
    balances = config.get("layer1_balances")
    extra = sorted(set(config) - {"actions", "layer1_balances"})
    if extra or not isinstance(script, list) or not isinstance(balances, dict):
        raise ConfigError(f"plasma config needs 'actions' (list) and 'layer1_balances' (object); unknown {extra}")
    out.emit(plasma.run_script(script, balances), name="plasma_run")


def cmd_swap(args, out: Output, config):
    cfg = from_dict(interop.SwapConfig, config or {}, "swap config") if config else interop.SwapConfig()
    doc = interop.run_atomic_swap(args.scenario, cfg)
    if args.explore:
        doc["exploration"] = interop.explore_swaps(cfg.alice_expiry, cfg.bob_expiry, cfg.claim_latency, cfg.horizon)
        doc["exploration"].pop("mixed_examples")
    out.emit(doc, name="swap")


@dataclass
class BridgeRun:
    transfers: int = 1000
    n_x: int = 1000
    n_y: int = 1000
    mode: str = interop.POOLED


def cmd_bridge(args, out: Output, config):
    cfg = from_dict(BridgeRun, config or {}, "bridge config")
    doc = interop.random_bridge_run(cfg.transfers, args.seed or 0, cfg.n_x, cfg.n_y, cfg.mode)
    doc["config"] = asdict(cfg)
    out.emit(doc, name="bridge")


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help="JSON config file (unknown fields are rejected)")
    common.add_argument("--out", default=None, help="directory for artifacts and manifest.json")
    common.add_argument("--format", choices=("json", "csv", "text"), default="text")

    p = _Parser(prog="deskchain", description="Desk-scale blockchain workbench.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    k = sub.add_parser("keygen", parents=[common], help="generate a key pair")
    k.add_argument("--curve", default="large")

    t = sub.add_parser("tx", help="build signed transactions")
    tsub = t.add_subparsers(dest="tx_cmd", required=True, parser_class=_Parser)
    for name in ("create", "consolidate", "joint"):
        tp = tsub.add_parser(name, parents=[common])
        tp.add_argument("--chain", required=True, help="chain snapshot giving the UTXO set")
        if name == "joint":
            tp.add_argument("--key", action="append", required=True)
            tp.add_argument("--input", action="append", required=True, help="TXID:INDEX")
        else:
            tp.add_argument("--key", required=True, help="name:<label> or keygen JSON file")
        if name != "consolidate":
            tp.add_argument("--to", required=True)
            tp.add_argument("--amount", type=int, required=True, help="base units (1 coin = 1e8)")
        if name != "joint":
            tp.add_argument("--fee", type=int, default=0)

    m = sub.add_parser("mine", parents=[common], help="mine blocks onto a snapshot")
    m.add_argument("--chain", required=True)
    m.add_argument("--miner", required=True)
    m.add_argument("--tx", action="append", help="transaction JSON from `tx`")
    m.add_argument("--blocks", type=int, default=1)

    c = sub.add_parser("chain", help="create and check chain snapshots")
    csub = c.add_subparsers(dest="chain_cmd", required=True, parser_class=_Parser)
    ci = csub.add_parser("init", parents=[common])
    ci.add_argument("--bits-of-work", type=int, default=8)
    for name in ("validate", "audit"):
        cp = csub.add_parser(name, parents=[common])
        cp.add_argument("--chain", required=True)

    s = sub.add_parser("sim", help="network simulation")
    ssub = s.add_subparsers(dest="sim_cmd", required=True, parser_class=_Parser)
    ssub.add_parser("run", parents=[common])

    a = sub.add_parser("analyze", help="security formulas")
    asub = a.add_subparsers(dest="an_cmd", required=True, parser_class=_Parser)
    af = asub.add_parser("finality", parents=[common])
    af.add_argument("--q", default="0.1", help="comma list")
    af.add_argument("--k", default="6", help="comma list or range a..b")
    ad = asub.add_parser("difficulty", parents=[common])
    au = asub.add_parser("unfairness", parents=[common])
    ae = asub.add_parser("efficiency", parents=[common])
    for sp in (ad, ae):
        sp.add_argument("--q", type=float, default=0.25)
        sp.add_argument("--epsilon", type=float, default=0.1)
        sp.add_argument("--delta", type=float, default=2)
        sp.add_argument("--n", type=int, default=100)
    ad.add_argument("--honest-threshold", type=float, default=analysis.HONEST_THRESHOLD)
    ae.add_argument("--p", type=float, default=1e-3)
    au.add_argument("--q", type=float, default=0.49)

    pl = sub.add_parser("plasma", help="layer-2 scenarios")
    plsub = pl.add_subparsers(dest="plasma_cmd", required=True, parser_class=_Parser)
    plsub.add_parser("demo", parents=[common])
    plsub.add_parser("run", parents=[common])

    sw = sub.add_parser("swap", help="atomic swap scenarios")
    swsub = sw.add_subparsers(dest="swap_cmd", required=True, parser_class=_Parser)
    swr = swsub.add_parser("run", parents=[common])
    swr.add_argument("--scenario", choices=interop.SCENARIOS, default="honest")
    swr.add_argument("--explore", action="store_true", help="also model-check all interleavings")

    br = sub.add_parser("bridge", help="bridge scenarios")
    brsub = br.add_subparsers(dest="bridge_cmd", required=True, parser_class=_Parser)
    brsub.add_parser("run", parents=[common])
    return p


def dispatch(argv: List[str]) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    command = " ".join(x for x in (args.cmd, getattr(args, "tx_cmd", None), getattr(args, "chain_cmd", None),
                                   getattr(args, "sim_cmd", None), getattr(args, "an_cmd", None),
                                   getattr(args, "plasma_cmd", None), getattr(args, "swap_cmd", None),
                                   getattr(args, "bridge_cmd", None)) if x)
    try:
        config = read_json(args.config) if getattr(args, "config", None) else None
        out = Output(args, command, argv, config)
        handlers = {
            "keygen": lambda: cmd_keygen(args, out),
            "tx": lambda: cmd_tx(args, out),
            "mine": lambda: cmd_mine(args, out),
            "chain": lambda: cmd_chain(args, out),
            "sim": lambda: cmd_sim(args, out, config),
            "analyze": lambda: cmd_analyze(args, out),
            "plasma": lambda: cmd_plasma(args, out, config),
            "swap": lambda: cmd_swap(args, out, config),
            "bridge": lambda: cmd_bridge(args, out, config),
        }
        handlers[args.cmd]()
        out.finish()
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DOMAIN_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main(argv: Optional[List[str]] = None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
