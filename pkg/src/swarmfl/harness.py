"""Experiment orchestration: the per-tick loop, metrics and batch suites."""

from __future__ import annotations

import ast
import configparser
import csv
import dataclasses
import hashlib
import io
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import arena, byzantine, chain, contract, learner, netsim
from .byzantine import ByzantineKind

METRIC_COLUMNS = ("sim_time", "round", "average_loss", "tokens_honest", "tokens_byz", "chain_bytes", "aggregations")


@dataclass(frozen=True)
class ExperimentConfig:
    world: arena.WorldConfig = arena.WorldConfig()
    model: learner.ModelConfig = learner.ModelConfig()
    train: learner.TrainConfig = learner.TrainConfig()
    expiration: float = 750.0
    security: bool = True
    byzantine_kind: str = "faulty"
    byzantine_count: int = 0
    quorum_fraction: float = 0.5
    fee: float = 5.0
    threshold: float = 0.05
    reward_weights: tuple = (1, 1, 1, 1, 1, -1, -1)
    initial_tokens: float = 21.0
    train_period: float = 100.0
    block_period: float = 10.0
    sync_window: float = 30.0  # forced full-connectivity time after the run
    validation_duration: float = 500.0
    validation_size: int = 500
    name: str = "run"

    def __post_init__(self):
        w = self.world
        if not 0 <= self.byzantine_count <= w.n_robots:
            raise ValueError("byzantine_count must be within [0, n_robots]")
        ByzantineKind(self.byzantine_kind)
        for label, period in (("train_period", self.train_period), ("block_period", self.block_period)):
            if period <= 0 or not arena._divides(w.tick, period):
                raise ValueError(f"{label} must be a positive multiple of the tick")
        if self.expiration < 0:
            raise ValueError("expiration must be non-negative")
        self.contract_params()  # validates quorum vs reward weights

    def contract_params(self) -> contract.ContractParams:
        return contract.ContractParams(
            n_robots=self.world.n_robots,
            n_weights=self.model.n_weights,
            quorum_fraction=self.quorum_fraction,
            fee=self.fee,
            threshold=self.threshold,
            reward_weights=tuple(self.reward_weights),
            initial_tokens=self.initial_tokens,
            security_enabled=self.security,
        )

    @property
    def byzantine_ids(self) -> frozenset:
        return frozenset(range(self.byzantine_count))


# ---------------------------------------------------------------------------
# config file (INI)

_SECTIONS = {"world": arena.WorldConfig, "model": learner.ModelConfig, "train": learner.TrainConfig}


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(v) if v.strip().lstrip("+-").isdigit() else float(v) for v in raw.split(","))
    return raw.strip()


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def config_to_ini(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    top = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _SECTIONS:
            cp[f.name] = {g.name: _format_value(getattr(v, g.name)) for g in dataclasses.fields(v)}
        else:
            top[f.name] = _format_value(v)
    cp["experiment"] = top
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_from_ini(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    base = ExperimentConfig()
    kwargs = {}
    for name, cls in _SECTIONS.items():
        default = getattr(base, name)
        if cp.has_section(name):
            sub = {}
            known = {g.name for g in dataclasses.fields(cls)}
            for key, raw in cp[name].items():
                if key not in known:
                    raise ValueError(f"unknown key [{name}] {key}")
                sub[key] = _parse_value(raw, getattr(default, key))
            kwargs[name] = replace(default, **sub)
    if cp.has_section("experiment"):
        known = {f.name for f in dataclasses.fields(base)} - set(_SECTIONS)
        for key, raw in cp["experiment"].items():
            if key not in known:
                raise ValueError(f"unknown key [experiment] {key}")
            kwargs[key] = _parse_value(raw, getattr(base, key))
    return replace(base, **kwargs)


def load_config(path) -> ExperimentConfig:
    return config_from_ini(Path(path).read_text())


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsRow:
    sim_time: float
    round: int
    average_loss: float
    tokens_honest: float
    tokens_byz: float
    chain_bytes: int
    aggregations: int


def average_loss(participants, validation, model_cfg=learner.ModelConfig()) -> float:
    """Sample-weighted validation MSE of a round's participant models.

    ``participants`` is a sequence of (weights, n_samples).
    """
    ws = np.stack([np.asarray(w, dtype=np.float64) for w, _ in participants])
    n = np.array([float(k) for _, k in participants])
    losses = learner.loss_many(ws, validation, model_cfg)
    return float(np.dot(n, losses) / n.sum())


def tokens_gained(balances_end, balances_start, byz_ids) -> tuple[float, float]:
    """Mean token change of the honest and the Byzantine robots (0 if a group is empty)."""
    delta = np.asarray(balances_end, dtype=np.float64) - np.asarray(balances_start, dtype=np.float64)
    byz = np.zeros(len(delta), dtype=bool)
    byz[list(byz_ids)] = True
    honest = float(delta[~byz].mean()) if (~byz).any() else 0.0
    bad = float(delta[byz].mean()) if byz.any() else 0.0
    return honest, bad


def write_metrics_csv(rows, path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow([
                f"{r.sim_time:.1f}", r.round, repr(float(r.average_loss)),
                repr(float(r.tokens_honest)), repr(float(r.tokens_byz)), r.chain_bytes, r.aggregations,
            ])
    finally:
        if own:
            fh.close()


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [
            MetricsRow(float(r["sim_time"]), int(r["round"]), float(r["average_loss"]),
                       float(r["tokens_honest"]), float(r["tokens_byz"]), int(r["chain_bytes"]),
                       int(r["aggregations"]))
            for r in csv.DictReader(fh)
        ]


def final_loss(rows: list[MetricsRow], window: float = 500.0) -> float:
    """Mean average_loss over aggregation rows in the last ``window`` seconds.

    The terminal row carries the last aggregation's loss and is used on its
    own when no aggregation falls inside the window.
    """
    end = rows[-1].sim_time
    body = [r.average_loss for r in rows[:-1] if r.sim_time >= end - window]
    return float(np.mean(body)) if body else rows[-1].average_loss


# ---------------------------------------------------------------------------
# simulation


def validation_set(cfg: ExperimentConfig, seed: int):
    """Held-out trajectories from a separate world simulated with collection only."""
    wcfg = replace(cfg.world, duration=cfg.validation_duration, rng_seed=int(
        np.random.SeedSequence([seed, 0x7A11]).generate_state(1)[0]))
    world = arena.init_world(wcfg)
    n = wcfg.n_robots
    recorders = [arena.TrajectoryRecorder(n, cfg.model.trajectory_length) for _ in range(n)]
    samples = []
    per_second = int(round(1.0 / wcfg.tick))
    tick = 0
    # keep simulating past the nominal duration if too few windows completed
    while tick < wcfg.n_ticks or (len(samples) < cfg.validation_size and tick < 20 * max(wcfg.n_ticks, 1)):
        arena.step_world(world)
        tick += 1
        if tick % per_second == 0:
            samples.extend(_collect(world, recorders))
    if not samples:
        raise RuntimeError("validation world produced no trajectories")
    rng = np.random.default_rng([seed, 0x7A12])
    pick = np.sort(rng.choice(len(samples), size=min(cfg.validation_size, len(samples)), replace=False))
    positions = np.stack([samples[i].positions for i in pick])
    return learner.encode(positions, cfg.model)


def _collect(world, recorders):
    in_range, ranges, bearings = arena.sense_all(world)
    now = world.now
    out = []
    for i, rec in enumerate(recorders):
        ids = np.flatnonzero(in_range[i])
        out.extend(rec.record(world.pose(i), ids, ranges[i, ids], bearings[i, ids], now))
    return out


@dataclass
class RobotState:
    robot_id: int
    kind: ByzantineKind
    recorder: arena.TrajectoryRecorder
    dataset: arena.LocalDataset
    node: chain.ChainNode
    rng: np.random.Generator
    submissions: int = 0


@dataclass
class RunResult:
    config: ExperimentConfig
    seed: int
    rows: list
    blocks: list
    events: list
    final_state: contract.ContractState
    head: str
    delivery_log: netsim.DeliveryLog | None = None
    node_logs: dict = field(default_factory=dict)
    graph_log: list = field(default_factory=list)


def _genesis_weights(cfg: ExperimentConfig, seed: int) -> np.ndarray:
    w = learner.init_weights(int(np.random.SeedSequence([seed, 0x1417]).generate_state(1)[0]), cfg.model)
    # the chain stores float32, so start from a float32-representable model
    return w.astype(np.float32).astype(np.float64)


def _robot_kind(cfg: ExperimentConfig, i: int) -> ByzantineKind:
    return ByzantineKind(cfg.byzantine_kind) if i < cfg.byzantine_count else ByzantineKind.HONEST


def run(cfg: ExperimentConfig, seed: int, log_deliveries: bool = False) -> RunResult:
    """Simulate one experiment; metrics are read from the canonical chain."""
    wcfg = replace(cfg.world, rng_seed=seed)
    n = wcfg.n_robots
    tick_ms = wcfg.tick_ms
    train_ticks = int(round(cfg.train_period / wcfg.tick))
    sample_ticks = int(round(1.0 / wcfg.tick))
    params = cfg.contract_params()
    g0 = contract.genesis_state(params, _genesis_weights(cfg, seed))
    ccfg = chain.ChainConfig(
        n_robots=n, block_period_ms=int(round(cfg.block_period * 1000)), tick_ms=tick_ms,
        rotation=chain.seeded_rotation(n, seed),
    )
    nodes, store = chain.make_network(n, g0, ccfg)
    world = arena.init_world(wcfg)
    robots = [
        RobotState(
            i, _robot_kind(cfg, i),
            arena.TrajectoryRecorder(n, cfg.model.trajectory_length),
            arena.LocalDataset(expiration=cfg.expiration),
            nodes[i],
            np.random.default_rng([seed, 0xB0B, i]),
        )
        for i in range(n)
    ]
    byz_ids = cfg.byzantine_ids
    log = netsim.DeliveryLog() if log_deliveries else None
    outboxes: dict[int, list] = {i: [] for i in range(n)}
    cycle = 0
    graph = prev_close = None
    graph_log: list = []  # (first tick, edges) at every topology change

    for tick in range(1, wcfg.n_ticks + 1):
        arena.step_world(world)
        if tick % sample_ticks == 0:
            in_range, ranges, bearings = arena.sense_all(world)
            now = world.now
            for i, r in enumerate(robots):
                ids = np.flatnonzero(in_range[i])
                r.dataset.samples.extend(r.recorder.record(world.pose(i), ids, ranges[i, ids], bearings[i, ids], now))
        if tick % train_ticks == 0:
            cycle += 1
            for r, msgs in zip(robots, _training_cycle(cfg, robots, world.now, seed, cycle, byz_ids, tick * tick_ms)):
                outboxes[r.robot_id].extend(msgs)
        close = netsim.adjacency(world.positions, wcfg.comm_range)
        if graph is None or not np.array_equal(close, prev_close):
            graph, prev_close = netsim.graph_from_adjacency(close, world.now), close
            if log is not None:
                graph_log.append((tick, sorted(graph.edges)))
        outboxes = chain.network_tick(nodes, graph, outboxes, tick, log)

    # forced full-connectivity sync window: no sealing, no new work
    full = netsim.complete_graph(n)
    tick = wcfg.n_ticks
    if log is not None:
        graph_log.append((tick + 1, sorted(full.edges)))
    for k in range(int(round(cfg.sync_window / wcfg.tick))):
        tick += 1
        outboxes = chain.network_tick(nodes, full, outboxes, tick, log, seal=False)
        if len({nd.head for nd in nodes}) == 1 and k >= 2:
            break
    heads = {nd.head for nd in nodes}
    if len(heads) != 1:
        raise RuntimeError("nodes failed to agree on a head after the sync window")

    blocks = nodes[0].chain()
    rows, events, final_state = _metrics(cfg, seed, g0, blocks, byz_ids, wcfg.duration)
    return RunResult(cfg, seed, rows, blocks, events, final_state, nodes[0].head.hex(), log,
                     {nd.owner: nd.log for nd in nodes if nd.log}, graph_log)


def _training_cycle(cfg, robots, now, seed, cycle, byz_ids, now_ms):
    """Build every robot's submission for this cycle; returns per-robot messages."""
    honest_jobs = []
    subs: dict[int, tuple] = {}
    for r in robots:
        arena.expire(r.dataset, now)
        state = r.node.state
        if cfg.security and state.balances[r.robot_id] < cfg.fee:
            continue
        n_local = len(r.dataset)
        if r.kind is ByzantineKind.HONEST:
            if n_local:
                honest_jobs.append(r)
        elif r.kind is ByzantineKind.FAULTY:
            if n_local:
                subs[r.robot_id] = byzantine.faulty_submission(r.rng, cfg.model.n_weights, n_local)
        elif r.kind is ByzantineKind.MALICIOUS:
            if n_local:
                subs[r.robot_id] = byzantine.malicious_submission(state, n_local)
        else:
            fallback = [s.n_samples for s in state.pending if s.robot not in byz_ids]
            claim = byzantine.claimed_samples(state, byz_ids, int(np.median(fallback)) if fallback else 1)
            subs[r.robot_id] = byzantine.smart_submission(state.shared_weights, state.prev_shared_weights, r.rng, claim)
    if honest_jobs:
        data = [learner.encode(r.dataset.positions(), cfg.model) for r in honest_jobs]
        starts = [r.node.state.shared_weights for r in honest_jobs]
        seeds = [[seed, 0x7EA, r.robot_id, cycle] for r in honest_jobs]
        for r, res in zip(honest_jobs, learner.train_many(starts, data, cfg.train, seeds, cfg.model)):
            subs[r.robot_id] = res
    out = []
    for r in robots:
        msgs = []
        if r.robot_id in subs:
            w, k = subs[r.robot_id]
            tx = r.node.new_tx("submit", w, k, now_ms)
            r.submissions += 1
            msgs.append(chain.TxGossip(tx))
        out.append(msgs)
    return out


def _metrics(cfg, seed, g0, blocks, byz_ids, duration):
    val = validation_set(cfg, seed)
    start = g0.balances
    state = g0
    rows, log = [], []
    cum = 0
    aggs = 0
    last_loss = learner.loss(g0.shared_weights, val, cfg.model)
    for b in blocks:
        cum += b.nbytes
        for tx in b.txs:
            state, events = contract.apply_tx(state, tx)
            for ev in events:
                ev = dict(ev, block=b.index, time=b.timestamp)
                if ev["event"] == "aggregated":
                    aggs += 1
                    last_loss = average_loss(list(zip(ev.pop("_weights"), ev["n_samples"])), val, cfg.model)
                    ev["average_loss"] = last_loss
                    th, tb = tokens_gained(state.balances, start, byz_ids)
                    rows.append(MetricsRow(b.timestamp, state.round, last_loss, th, tb, cum, aggs))
                log.append(ev)
    th, tb = tokens_gained(state.balances, start, byz_ids)
    rows.append(MetricsRow(float(duration), state.round, last_loss, th, tb, cum, aggs))
    return rows, log, state


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(result.rows, out / "metrics.csv")
    chain.write_block_log(result.blocks, out / "blocks.jsonl")
    with open(out / "events.jsonl", "w") as fh:
        for ev in result.events:
            fh.write(json.dumps(ev, separators=(",", ":")) + "\n")
    if result.delivery_log is not None:
        result.delivery_log.to_jsonl(out / "deliveries.jsonl")
        with open(out / "graphs.jsonl", "w") as fh:
            for tick, edges in result.graph_log:
                fh.write(json.dumps({"tick": tick, "edges": edges}, separators=(",", ":")) + "\n")
    (out / "config.ini").write_text(config_to_ini(result.config))
    (out / "run.json").write_text(json.dumps({"seed": result.seed, "head": result.head}) + "\n")
    return out


def audit_run(run_dir) -> dict:
    """Replay a written run and check its invariants; returns a report dict."""
    d = Path(run_dir)
    cfg = load_config(d / "config.ini")
    meta = json.loads((d / "run.json").read_text())
    blocks = chain.read_block_log(d / "blocks.jsonl")
    g0 = contract.genesis_state(cfg.contract_params(), _genesis_weights(cfg, meta["seed"]))
    ccfg = chain.ChainConfig(n_robots=cfg.world.n_robots, block_period_ms=int(round(cfg.block_period * 1000)),
                             tick_ms=cfg.world.tick_ms)
    problems = []
    if blocks[0].hash != chain.GENESIS.hash:
        problems.append("first block is not genesis")
    nonces = (0,) * cfg.world.n_robots
    for parent, child in zip(blocks, blocks[1:]):
        reason = chain.validate_block(child, parent, nonces, ccfg)
        if reason:
            problems.append(f"block {child.index}: {reason}")
        nonces = list(nonces)
        for tx in child.txs:
            nonces[tx.sender] += 1
        nonces = tuple(nonces)
    if blocks[-1].hash.hex() != meta["head"]:
        problems.append("head hash mismatch")
    state = g0
    for b in blocks:
        for tx in b.txs:
            state, _ = contract.apply_tx(state, tx)
            if cfg.security and abs(state.total_tokens - cfg.initial_tokens * cfg.world.n_robots) > 1e-6:
                problems.append(f"token conservation broken at block {b.index}")
    rows, _, _ = _metrics(cfg, meta["seed"], g0, blocks, cfg.byzantine_ids, cfg.world.duration)
    buf = io.StringIO()
    write_metrics_csv(rows, buf)
    if buf.getvalue() != (d / "metrics.csv").read_text():
        problems.append("metrics.csv does not match the replayed chain")
    if (d / "deliveries.jsonl").exists():
        bad = audit_delivery_files(d / "deliveries.jsonl", d / "graphs.jsonl", cfg.world.n_robots)
        if bad:
            problems.append(f"{bad} deliveries crossed a non-edge")
    return {"blocks": len(blocks), "round": state.round, "problems": problems, "ok": not problems}


def audit_delivery_files(deliveries_path, graphs_path, n: int) -> int:
    """Count delivery rows whose pair was not an edge at that tick."""
    with open(graphs_path) as fh:
        changes = [json.loads(line) for line in fh if line.strip()]
    starts = [c["tick"] for c in changes]
    graphs = [netsim.graph_from_edges(n, [tuple(e) for e in c["edges"]]) for c in changes]
    bad = 0
    with open(deliveries_path) as fh:
        for line in fh:
            row = json.loads(line)
            k = int(np.searchsorted(starts, row["tick"], side="right")) - 1
            if k < 0 or not graphs[k].connected(row["sender"], row["receiver"]):
                bad += 1
    return bad


# ---------------------------------------------------------------------------
# suites

SUITES = ("exp1", "exp2-faulty", "exp2-malicious", "exp3-smart")
# repetitions per configuration in the original experiments
DEFAULT_REPETITIONS = {"exp1": 5, "exp2-faulty": 20, "exp2-malicious": 20, "exp3-smart": 18}


def suite_configs(name: str, base: ExperimentConfig = ExperimentConfig()) -> list[ExperimentConfig]:
    if name == "exp1":
        out = [replace(base, expiration=float(e), security=False, byzantine_count=0, name=f"exp1-exp{e}")
               for e in (250, 500, 750, 1000, 1250)]
        out.append(replace(base, security=False, byzantine_kind="faulty", byzantine_count=1, name="exp1-faulty1"))
        return out
    if name in ("exp2-faulty", "exp2-malicious", "exp3-smart"):
        kind = name.split("-")[1]
        return [replace(base, security=True, byzantine_kind=kind, byzantine_count=c, name=f"{name}-{c}")
                for c in range(8)]
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")


def _code_only(source: str) -> str:
    tree = ast.parse(source)
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if isinstance(body, list) and body and isinstance(body[0], ast.Expr) \
                and isinstance(body[0].value, ast.Constant) and isinstance(body[0].value.value, str):
            node.body = body[1:] or [ast.Pass()]
    return ast.dump(tree)


def source_digest() -> str:
    """Hash of the package code (comments and docstrings ignored)."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(_code_only(p.read_text()).encode())
    return h.hexdigest()[:16]


def storage_profile(blocks) -> list[tuple[int, int]]:
    """(cumulative SubmitModel txs, cumulative chain bytes) after every block."""
    out, subs, size = [], 0, 0
    for b in blocks:
        size += b.nbytes
        subs += sum(tx.kind == "submit" for tx in b.txs)
        out.append((subs, size))
    return out


@dataclass
class RunSummary:
    rows: list
    head: str
    storage: list  # storage_profile of the canonical chain


def cached_run(cfg: ExperimentConfig, seed: int, cache_dir) -> RunSummary:
    """Metrics of ``run(cfg, seed)``, memoised on disk.

    The key covers the package code, the full config and the seed, so a hit
    is exactly what a fresh run would produce.
    """
    ini = config_to_ini(replace(cfg, name="run"))
    key = hashlib.sha256(f"{source_digest()}|{seed}|{ini}".encode()).hexdigest()[:24]
    path = Path(cache_dir) / f"{key}.csv"
    side = path.with_suffix(".json")
    if path.exists() and side.exists():
        meta = json.loads(side.read_text())
        return RunSummary(read_metrics_csv(path), meta["head"], [tuple(x) for x in meta["storage"]])
    res = run(cfg, seed)
    summary = RunSummary(res.rows, res.head, storage_profile(res.blocks))
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = side.with_suffix(".tmp")
    tmp.write_text(json.dumps({"seed": seed, "name": cfg.name, "head": res.head, "storage": summary.storage}))
    tmp.replace(side)
    tmp = path.with_suffix(".tmp")
    write_metrics_csv(res.rows, tmp)
    tmp.replace(path)
    return summary


def bootstrap_ci(values, n_boot: int = 2000, seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of the median."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 1:
        return float(v[0]), float(v[0])
    rng = np.random.default_rng(seed)
    meds = np.median(v[rng.integers(0, len(v), size=(n_boot, len(v)))], axis=1)
    a = (1 - level) / 2
    return float(np.quantile(meds, a)), float(np.quantile(meds, 1 - a))


SUMMARY_COLUMNS = (
    "config", "n_seeds", "final_loss_median", "final_loss_lo", "final_loss_hi",
    "tokens_honest_median", "tokens_honest_lo", "tokens_honest_hi",
    "tokens_byz_median", "tokens_byz_lo", "tokens_byz_hi",
    "aggregations_median", "chain_bytes_median",
)


def summarize(results: dict[str, list[list[MetricsRow]]]) -> list[list]:
    table = []
    for name, runs in results.items():
        fl = [final_loss(r) for r in runs]
        th = [r[-1].tokens_honest for r in runs]
        tb = [r[-1].tokens_byz for r in runs]
        row = [name, len(runs)]
        for vals in (fl, th, tb):
            row.append(float(np.median(vals)))
            row.extend(bootstrap_ci(vals))
        row.append(float(np.median([r[-1].aggregations for r in runs])))
        row.append(float(np.median([r[-1].chain_bytes for r in runs])))
        table.append(row)
    return table


def experiment_suite(name: str, seeds, out_dir, base: ExperimentConfig = ExperimentConfig(),
                     cache_dir=None, progress=None) -> Path:
    """Run every configuration of a suite over ``seeds`` and write CSVs.

    One metrics CSV per (config, seed) plus ``summary.csv``. A failing run is
    reported in ``failures.txt`` and left out of the summary.
    """
    out = Path(out_dir) / name
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, list] = {}
    failures = []
    for cfg in suite_configs(name, base):
        results[cfg.name] = []
        for s in seeds:
            try:
                rows = cached_run(cfg, s, cache_dir).rows if cache_dir else run(cfg, s).rows
            except Exception as exc:  # one bad run must not sink the suite
                failures.append(f"{cfg.name} seed={s}: {exc!r}")
                continue
            write_metrics_csv(rows, out / f"{cfg.name}_seed{s}.csv")
            results[cfg.name].append(rows)
            if progress:
                progress(cfg.name, s)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(summarize({k: v for k, v in results.items() if v}))
    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n")
    return out
