"""Command-line front end: ``python -m hierdt <command> CONFIG [--out DIR] [--seed N]``.

Exit codes: 0 success, 1 engine / numeric error, 2 configuration or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from .config import ExperimentConfig, load_config
from .data import merge_datasets, read_dataset
from .errors import ConfigurationError, WorkbenchError
from .evaluation import evaluate
from .fed import AggregationMetric, EvalConfig, FLConfig, write_round_history
from .grammar import GrammarSpec, Vocab
from .ledger import CommLedger
from .hierarchy import HierarchyConfig, run_flat_fl, run_hierarchy, run_local_only
from .merge import MergeConfig, merge_report_rows, write_merge_report
from .model import ToyModel, fit, load_model, save_model
from .pardecode import (DraftHeads, learn_online, served_contexts, simulate_decode, stationary_stream,
                        write_kl_trace, write_sweep)
from .partition import client_entropy, partition_dirichlet, partition_groups, size_entropy, write_manifest
from .rng import derive_seed, stream
from .sampling import SamplingStrategy
from .trueput import LatencyModel, TrueputProfile, optimal_k, strategy_grid_search, sweep_rows

MODES = ("hierarchy", "flat_fl", "merge_only", "local_only")
OUT_ENV = "HIERDT_OUT"


class Run:
    """Output directory bookkeeping; timings go to meta/ so data files stay deterministic."""

    def __init__(self, out_dir: str, cfg: ExperimentConfig, command: str):
        self.out = out_dir
        self.timing: dict[str, float] = {}
        os.makedirs(os.path.join(out_dir, "meta"), exist_ok=True)
        with open(self.path("config.json"), "w", encoding="utf-8") as fh:
            json.dump({"command": command, **cfg.to_dict()}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.manifest = open(self.path("manifest.jsonl"), "w", encoding="utf-8")
        self.record("config", command=command, seed=cfg.seed)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def record(self, kind: str, **fields):
        self.manifest.write(json.dumps({"record": kind, **fields}, sort_keys=True) + "\n")
        self.manifest.flush()

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        yield
        self.timing[name] = time.perf_counter() - start

    def close(self):
        self.manifest.close()
        with open(os.path.join(self.out, "meta", "timing.json"), "w", encoding="utf-8") as fh:
            json.dump({"finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"), "stages_s": self.timing}, fh, indent=2)


def write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


# -- shared setup ---------------------------------------------------------------------------------

def _grammar(cfg: ExperimentConfig) -> GrammarSpec:
    return GrammarSpec(tuple(tuple(p) for p in cfg.grammar.pairs), cfg.grammar.max_depth)


def _vocab(cfg: ExperimentConfig, grammar: GrammarSpec) -> Vocab:
    return Vocab.from_file(cfg.dataset.vocab) if cfg.dataset.vocab else grammar.vocab()


def _init_model(cfg: ExperimentConfig, vocab: Vocab) -> ToyModel:
    if cfg.model.init == "gaussian":
        return ToyModel.gaussian(vocab, cfg.model.context_len, derive_seed(cfg.seed, "init"), cfg.model.init_sigma)
    return ToyModel.uniform(vocab, cfg.model.context_len)


def _eval_strategy(cfg: ExperimentConfig) -> SamplingStrategy:
    return SamplingStrategy.from_dict(cfg.eval.strategy)


class _Data:
    def __init__(self, cfg: ExperimentConfig):
        self.grammar = _grammar(cfg)
        self.vocab = _vocab(cfg, self.grammar)
        self.pool = read_dataset(cfg.dataset.train)
        self.validation = merge_datasets(read_dataset(cfg.dataset.validation), "validation")
        self.test = (merge_datasets(read_dataset(cfg.dataset.test), "test") if cfg.dataset.test
                     else self.validation)
        for ds in self.pool + [self.validation, self.test]:
            missing = ds.tokens() - set(self.vocab.symbols)
            if missing:
                raise ConfigurationError(f"dataset tokens outside the vocab: {sorted(missing)}")
        if not self.pool or sum(len(d) for d in self.pool) == 0:
            raise ConfigurationError("training dataset is empty")


def _partition(cfg: ExperimentConfig, data: _Data):
    p = cfg.partition
    clients = partition_dirichlet(data.pool, p.alpha, p.n_clients, derive_seed(cfg.seed, "partition"))
    groups, isolated = partition_groups(clients, p.n_groups, p.n_isolated, derive_seed(cfg.seed, "groups"))
    return clients, groups, isolated


def _require_partition(cfg: ExperimentConfig):
    if cfg.partition is None:
        raise ConfigurationError("config needs a 'partition' section")
    cfg.dataset.require()


# -- commands -------------------------------------------------------------------------------------

def cmd_partition(cfg: ExperimentConfig, out_dir: str) -> str:
    _require_partition(cfg)
    run = Run(out_dir, cfg, "partition")
    try:
        with run.stage("partition"):
            data = _Data(cfg)
            clients, groups, isolated = _partition(cfg, data)
        write_manifest(clients, groups, isolated, run.path("manifest.tsv"))
        summary = {
            "n_clients": len(clients),
            "n_samples": sum(len(c) for c in clients),
            "groups": groups,
            "isolated": isolated,
            "empty_clients": [i for i, c in enumerate(clients) if "empty" in c.flags],
            "size_entropy": size_entropy(clients),
            "mean_tag_entropy": float(np.mean([client_entropy(c) for c in clients])),
        }
        with open(run.path("partition.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        run.record("partition", n_clients=len(clients), empty_clients=summary["empty_clients"])
    finally:
        run.close()
    return out_dir


def _metric(kind: str, cfg: ExperimentConfig, data: _Data, tag: str) -> AggregationMetric:
    if kind == "sample_ratio":
        return AggregationMetric("sample_ratio")
    ec = EvalConfig(data.validation, data.grammar, cfg.eval.metric_samples, _eval_strategy(cfg),
                    derive_seed(cfg.seed, "metric", tag), cfg.eval.max_len)
    return AggregationMetric(kind, ec)


def cmd_run(cfg: ExperimentConfig, mode: str, out_dir: str) -> str:
    modes = MODES if mode == "all" else (mode,)
    if any(m not in MODES for m in modes):
        raise ConfigurationError(f"unknown mode {mode!r}")
    _require_partition(cfg)
    run = Run(out_dir, cfg, f"run:{mode}")
    try:
        data = _Data(cfg)
        clients, groups, isolated = _partition(cfg, data)
        init = _init_model(cfg, data.vocab)
        strategy = _eval_strategy(cfg)

        def accuracy(model):
            rep = evaluate(model, data.test, data.grammar, cfg.eval.n_samples, strategy,
                           derive_seed(cfg.seed, "test"), cfg.eval.max_len)
            return rep.syntax_accuracy, rep.semantic_accuracy

        snapshot = EvalConfig(data.validation, data.grammar, cfg.eval.metric_samples, strategy,
                              derive_seed(cfg.seed, "snapshot"), cfg.eval.max_len)
        fl_cfg = FLConfig(cfg.fl.rounds, cfg.fl.participation, cfg.fl.epochs_per_round, cfg.fl.lr,
                          _metric(cfg.fl.metric, cfg, data, "fl"), derive_seed(cfg.seed, "fl"),
                          cfg.fl.zero_score_fallback, snapshot, cfg.workers)
        merge_cfg = MergeConfig(cfg.merge.method, cfg.merge.drop_rate, init,
                                _metric(cfg.merge.metric, cfg, data, "merge"), derive_seed(cfg.seed, "merge"),
                                cfg.fl.zero_score_fallback)
        local_epochs = cfg.merge.local_epochs

        with run.stage("init_eval"):
            init_acc = accuracy(init)
        run.record("stage", mode="init", stage="init", syntax_accuracy=init_acc[0], semantic_accuracy=init_acc[1])
        results = {}
        for m in modes:
            with run.stage(m):
                if m in ("hierarchy", "merge_only"):
                    hg, hi = (groups, isolated) if m == "hierarchy" else ((), list(range(len(clients))))
                    hcfg = HierarchyConfig(hg, hi, fl_cfg, merge_cfg, init, local_epochs, cfg.merge.outer_rounds,
                                           cfg.workers)
                    model, ledger, audit = run_hierarchy(clients, hcfg)
                    for g, recs in enumerate(audit.group_rounds):
                        write_round_history(recs, run.path(f"rounds_{m}_group{g}.csv"))
                    write_merge_report(merge_report_rows(audit.merge_models, audit.merge_scores, merge_cfg,
                                                         audit.merge_ids), run.path(f"merge_{m}.csv"))
                    for name, sub in zip(audit.merge_ids, audit.merge_models):
                        if name.startswith("group"):
                            s, sm = accuracy(sub)
                            run.record("stage", mode=m, stage=name, syntax_accuracy=s, semantic_accuracy=sm)
                    syn, sem = accuracy(model)
                elif m == "flat_fl":
                    model, ledger, recs = run_flat_fl(clients, fl_cfg, init)
                    write_round_history(recs, run.path("rounds_flat_fl.csv"))
                    syn, sem = accuracy(model)
                else:
                    epochs = local_epochs if local_epochs is not None else cfg.fl.rounds * cfg.fl.epochs_per_round
                    locals_ = run_local_only(clients, init, epochs, cfg.fl.lr, derive_seed(cfg.seed, "local"))
                    accs = [accuracy(lm) for lm in locals_]
                    syn = float(np.mean([a[0] for a in accs]))
                    sem = float(np.mean([a[1] for a in accs]))
                    model = None
                    ledger = CommLedger(len(init.params) * 8)
            if model is not None:
                save_model(model, run.path(f"model_{m}.npz"))
            run.record("stage", mode=m, stage="final", syntax_accuracy=syn, semantic_accuracy=sem)
            run.record("ledger", mode=m, **ledger.totals())
            results[m] = {"syntax_accuracy": syn, "semantic_accuracy": sem, **ledger.totals()}
        write_csv(run.path("comparison.csv"),
                  ["mode", "syntax_accuracy", "semantic_accuracy", "central_transfers", "group_transfers"],
                  [[m, r["syntax_accuracy"], r["semantic_accuracy"], r["central_transfers"], r["group_transfers"]]
                   for m, r in results.items()])
        summary = {"init": {"syntax_accuracy": init_acc[0], "semantic_accuracy": init_acc[1]},
                   "modes": results, "n_groups": len(groups), "n_isolated": len(isolated)}
        with open(run.path("summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    finally:
        run.close()
    return out_dir


def _grid_model(cfg: ExperimentConfig, data: _Data) -> ToyModel:
    choice = cfg.trueput.grid_model
    if choice == "uniform":
        return ToyModel.uniform(data.vocab, cfg.model.context_len)
    if choice == "central":
        model, _ = fit(_init_model(cfg, data.vocab), merge_datasets(data.pool), cfg.trueput.central_epochs, cfg.fl.lr)
        return model
    return load_model(choice)


def cmd_trueput(cfg: ExperimentConfig, out_dir: str, what: str = "all") -> str:
    tp = cfg.trueput
    needs_data = what in ("grid", "all") or tp.p == "measured"
    if needs_data:
        cfg.dataset.require()
    run = Run(out_dir, cfg, f"trueput:{what}")
    try:
        data = _Data(cfg) if needs_data else None
        model = _grid_model(cfg, data) if data is not None else None
        p = tp.p
        if p == "measured":
            p = evaluate(model, data.validation, data.grammar, cfg.eval.n_samples, _eval_strategy(cfg),
                         derive_seed(cfg.seed, "p"), cfg.eval.max_len).semantic_accuracy
            run.record("measured_p", p=p)
        if what in ("sweep", "all"):
            with run.stage("sweep"):
                curves, table = [], []
                for cap in tp.capacities:
                    lat = LatencyModel(tp.latency.kind, tp.latency.t0, tp.latency.per_sample, int(cap))
                    prof = TrueputProfile(float(p), lat, tp.k_max)
                    best = optimal_k(prof, tp.normalization)
                    table.append([int(cap), best.k, best.trueput])
                    curves.extend([int(cap), r["k"], r["pass_at_k"], r["latency"], r["trueput"]]
                                  for r in sweep_rows(prof, tp.normalization))
            write_csv(run.path("sweep.csv"), ["capacity", "k", "pass_at_k", "latency", "trueput"], curves)
            write_csv(run.path("optimal_k.csv"), ["capacity", "k_star", "trueput_star"], table)
            run.record("optimal_k", table=table)
        if what in ("grid", "all"):
            grid = [SamplingStrategy(**s) for s in tp.grid]
            with run.stage("grid"):
                ranked, rejected = strategy_grid_search(model, data.validation, data.grammar, grid, tp.budget_samples,
                                                        derive_seed(cfg.seed, "grid"), cfg.eval.max_len)
            write_csv(run.path("grid.csv"), ["rank", "strategy", "hyperparams", "syntax_accuracy", "n_designs"],
                      [[i + 1, r.strategy.label(), json.dumps(r.strategy.hyperparams(), sort_keys=True),
                        r.syntax_accuracy, r.n_designs] for i, r in enumerate(ranked)])
            write_csv(os.path.join(out_dir, "meta", "grid_timing.csv"), ["strategy", "wall_time"],
                      [[r.strategy.label(), r.wall_time] for r in ranked])
            for strat, why in rejected:
                run.record("rejected_strategy", strategy=repr(strat), reason=why)
    finally:
        run.close()
    return out_dir


def decode_setup(cfg: ExperimentConfig):
    """Target model and prompts for the decoding simulator."""
    d = cfg.decode
    if d.target == "synthetic":
        vocab = Vocab(tuple(f"t{i}" for i in range(d.vocab_size - 1)) + ("<eos>",))
        base = ToyModel.gaussian(vocab, d.context_len, derive_seed(cfg.seed, "decode-target"), d.target_sigma)
        table = base.logit_table.copy()
        table[:, vocab.eos_id] -= d.eos_penalty
        target = ToyModel.from_table(vocab, d.context_len, table)
    else:
        try:
            target = load_model(d.target)
        except OSError as exc:
            raise ConfigurationError(f"cannot load decode target {d.target!r}: {exc}") from None
    rng = stream(cfg.seed, "decode-prompts")
    non_eos = [i for i in range(len(target.vocab)) if i != target.vocab.eos_id]
    prompts = [[non_eos[j] for j in rng.integers(0, len(non_eos), d.prompt_len)] for _ in range(d.n_prompts)]
    return target, prompts


def train_heads(cfg: ExperimentConfig, target: ToyModel, prompts):
    d = cfg.decode
    pool = served_contexts(target, prompts, d.max_len)
    heads = DraftHeads.uniform(target.vocab, target.context_len, d.depth)
    contexts = stationary_stream(pool, d.learn_steps, derive_seed(cfg.seed, "serve")) if d.learn_steps else []
    return learn_online(heads, target, contexts, d.learn_lr, d.kl_direction)


def cmd_decode(cfg: ExperimentConfig, out_dir: str, what: str = "all") -> str:
    d = cfg.decode
    run = Run(out_dir, cfg, f"decode:{what}")
    try:
        target, prompts = decode_setup(cfg)
        with run.stage("learn"):
            heads, kls = train_heads(cfg, target, prompts)
        if what in ("learn", "all"):
            write_kl_trace(kls, run.path("learn.csv"))
        if what in ("sweep", "all"):
            with run.stage("sweep"):
                stats = [simulate_decode(target, heads, prompts, int(s), d.ceiling, d.max_len) for s in d.tree_sizes]
            write_sweep(stats, run.path("sweep.csv"))
            best = max(range(len(stats)), key=lambda i: (stats[i].speedup, -i))
            run.record("decode_peak", tree_size=stats[best].tree_size, speedup=stats[best].speedup)
    finally:
        run.close()
    return out_dir


def cmd_report(run_dirs: list[str], out_dir: str) -> str:
    rows = []
    peaks = []
    for rd in run_dirs:
        summary = os.path.join(rd, "summary.json")
        if os.path.isfile(summary):
            with open(summary, encoding="utf-8") as fh:
                s = json.load(fh)
            rows.append([rd, "init", s["init"]["syntax_accuracy"], s["init"]["semantic_accuracy"], 0, 0])
            for mode, r in s["modes"].items():
                rows.append([rd, mode, r["syntax_accuracy"], r["semantic_accuracy"], r["central_transfers"],
                             r["group_transfers"]])
        opt = os.path.join(rd, "optimal_k.csv")
        if os.path.isfile(opt):
            with open(opt, encoding="utf-8") as fh:
                for rec in csv.DictReader(fh):
                    peaks.append([rd, "trueput", f"capacity={rec['capacity']}", rec["k_star"], rec["trueput_star"]])
        sweep = os.path.join(rd, "sweep.csv")
        if os.path.isfile(sweep) and not os.path.isfile(opt):
            with open(sweep, encoding="utf-8") as fh:
                recs = list(csv.DictReader(fh))
            if recs:
                best = max(recs, key=lambda r: float(r["speedup"]))
                peaks.append([rd, "decode", "tree_size", best["tree_size"], best["speedup"]])
    if not rows and not peaks:
        raise ConfigurationError("no run outputs found in the given directories")
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "comparison.csv"),
              ["run", "mode", "syntax_accuracy", "semantic_accuracy", "central_transfers", "group_transfers"], rows)
    write_csv(os.path.join(out_dir, "optima.csv"), ["run", "kind", "knob", "argmax", "value"], peaks)
    return out_dir


# -- entry point ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hierdt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_config=True):
        if with_config:
            p.add_argument("config", help="experiment config (JSON)")
            p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV}/<command>)")

    common(sub.add_parser("partition", help="partition the dataset across clients"))
    p_run = sub.add_parser("run", help="train with one of the pipelines")
    common(p_run)
    p_run.add_argument("--mode", choices=MODES + ("all",), default="hierarchy")
    p_tp = sub.add_parser("trueput", help="optimal-k sweep and sampling-strategy grid search")
    p_tp.add_argument("what", nargs="?", choices=("sweep", "grid", "all"), default="all")
    common(p_tp)
    p_dec = sub.add_parser("decode", help="parallel decoding tree-size sweep and online KL learning")
    p_dec.add_argument("what", nargs="?", choices=("sweep", "learn", "all"), default="all")
    common(p_dec)
    p_rep = sub.add_parser("report", help="join results of several runs")
    p_rep.add_argument("runs", nargs="+")
    common(p_rep, with_config=False)
    return parser


def _default_out(command: str) -> str:
    return os.path.join(os.environ.get(OUT_ENV, "hierdt_runs"), command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or _default_out(args.command)
    try:
        if args.command == "report":
            cmd_report(args.runs, out)
            return 0
        cfg = load_config(args.config, args.seed)
        if args.command == "partition":
            cmd_partition(cfg, out)
        elif args.command == "run":
            cmd_run(cfg, args.mode, out)
        elif args.command == "trueput":
            cmd_trueput(cfg, out, args.what)
        else:
            cmd_decode(cfg, out, args.what)
    except (ConfigurationError, OSError) as exc:
        print(f"hierdt: error: {exc}", file=sys.stderr)
        return 2
    except (WorkbenchError, ArithmeticError) as exc:
        print(f"hierdt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0
