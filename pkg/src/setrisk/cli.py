"""Configuration-driven runner.

Reads a JSON config describing a scenario tree, a payoff, and one or more
risk measure runs; performs the backward induction and writes frontier CSV
files, optional full JSON dumps, and strategy trace CSVs.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from importlib import resources

import numpy as np

from . import geometry, market, recursion, strategy, tree, vop
from .market import MarketModel, ModelError, TradingConstraint
from .recursion import InductionError, RunMode
from .riskmeasures import RiskSpec, SpecError
from .tree import TreeError, TreeParams

log = logging.getLogger("setrisk")

CONFIG_VERSION = 1


class ConfigError(Exception):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}")
    for key in ("tree", "payoff", "runs"):
        if key not in cfg:
            raise ConfigError(f"config is missing the {key!r} section")
    if isinstance(cfg["runs"], dict):
        cfg["runs"] = [cfg["runs"]]
    return cfg


def bundled_config(name: str) -> str:
    """Path of a packaged example config (ex71, ex72, ex73)."""
    ref = resources.files("setrisk").joinpath(f"configs/{name}.json")
    return str(ref)


def tree_params(cfg: dict) -> TreeParams:
    allowed = {"d", "t_steps", "horizon_years", "n", "nu", "mu", "sigma",
               "rho", "s0", "r", "gamma", "bond_compounding"}
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown tree keys: {sorted(unknown)}")
    try:
        return TreeParams(**cfg)
    except (TypeError, TreeError) as exc:
        raise ConfigError(f"bad tree parameters: {exc}") from exc


def payoff_values(scenario_tree, payoff: dict) -> dict:
    """Option payout W per terminal node, in asset counts (cash legs are
    converted from currency to bond units at settlement)."""
    d = scenario_tree.params.d
    kind = payoff.get("type")
    out = {}
    if kind == "put":
        if d != 2:
            raise ConfigError("put payoff needs d = 2")
        strike = float(payoff["strike"])
        settle = payoff.get("settlement", "mid")
        if settle not in ("mid", "bid", "ask"):
            raise ConfigError("settlement must be mid, bid or ask")
        for key in scenario_tree.terminal_keys():
            node = scenario_tree.nodes[key]
            s = float(getattr(node, settle)[0])
            out[key] = np.array([max(strike - s, 0.0) / node.bond, 0.0])
    elif kind == "binary":
        if d != 2:
            raise ConfigError("binary payoff needs d = 2")
        strike = float(payoff["strike"])
        payout = float(payoff["payout"])
        for key in scenario_tree.terminal_keys():
            node = scenario_tree.nodes[key]
            hit = node.ask[0] >= strike
            out[key] = np.array([payout / node.bond if hit else 0.0, 0.0])
    elif kind == "outperformance":
        if d != 3:
            raise ConfigError("outperformance payoff needs d = 3")
        strike = float(payoff["strike"])
        for key in scenario_tree.terminal_keys():
            node = scenario_tree.nodes[key]
            a1, a2 = float(node.ask[0]), float(node.ask[1])
            cash = -strike / node.bond if max(a1, a2) >= strike else 0.0
            out[key] = np.array([cash,
                                 1.0 if (a1 >= a2 and a1 >= strike) else 0.0,
                                 1.0 if (a2 >= a1 and a2 >= strike) else 0.0])
    elif kind == "custom":
        table = payoff.get("values", {})
        for key in scenario_tree.terminal_keys():
            node = scenario_tree.nodes[key]
            if node.id not in table:
                raise ConfigError(f"custom payoff misses terminal node {node.id}")
            vec = np.asarray(table[node.id], dtype=float)
            if vec.shape != (d,):
                raise ConfigError(f"custom payoff at {node.id} has wrong length")
            out[key] = vec
    else:
        raise ConfigError(f"unknown payoff type {kind!r}")
    return out


def claims_for(scenario_tree, payoff: dict, position: str) -> dict:
    values = payoff_values(scenario_tree, payoff)
    if position == "long":
        return values
    if position == "short":
        return {k: -v for k, v in values.items()}
    raise ConfigError("position must be 'long' or 'short'")


def risk_spec(cfg: dict, d: int) -> RiskSpec:
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    eligible = cfg.pop("eligible", list(range(d)))
    try:
        return RiskSpec(kind=kind, d=d, eligible=eligible, params=cfg)
    except SpecError as exc:
        raise ConfigError(f"bad risk measure: {exc}") from exc


def market_model(cfg) -> MarketModel | None:
    if cfg is None:
        return None
    model = cfg.get("model")
    constraint = None
    if "constraint" in cfg:
        constraint = TradingConstraint(
            A=np.atleast_2d(np.asarray(cfg["constraint"]["A"], float)),
            b=np.atleast_1d(np.asarray(cfg["constraint"]["b"], float)))
    if model == "cone":
        return MarketModel(kind="cone", constraint=constraint)
    if model == "convex_region":
        return MarketModel(kind="convex_region",
                           theta=np.asarray(cfg["theta"], float),
                           constraint=constraint)
    raise ConfigError(f"unknown market model {model!r}")


def run_mode(cfg: dict, spec: RiskSpec, mkt: MarketModel | None,
             jobs: int, epsilon=None) -> RunMode:
    cfg = dict(cfg or {})
    convex = bool(cfg.get("convex", False))
    needs_convex = spec.convex or (mkt is not None and mkt.kind == "convex_region")
    if needs_convex and not convex:
        raise ConfigError("this measure/market combination needs convex mode")
    eps = float(epsilon if epsilon is not None else cfg.get("epsilon_step", 0.0))
    try:
        return RunMode(convex=convex, epsilon_step=eps, jobs=jobs,
                       vmax=cfg.get("vmax"), solver=cfg.get("solver", "CLARABEL"))
    except InductionError as exc:
        raise ConfigError(str(exc)) from exc


def frontier_csv(results: dict, scenario_tree, spec: RiskSpec, t: int,
                 node_id: str | None = None) -> str:
    emb = spec.embedding()
    d = spec.d
    buf = io.StringIO()
    buf.write("node,time,v_index," + ",".join(f"x{i}" for i in range(d)) + "\n")
    keys = [k for k in scenario_tree.levels[t]
            if node_id is None or scenario_tree.nodes[k].id == node_id]
    if not keys:
        raise ConfigError(f"no node {node_id!r} at time {t}")
    dir_rows = []
    for key in keys:
        rset = results[key]
        nid = scenario_tree.nodes[key].id
        verts = sorted((emb @ v for v in rset.set.vertices), key=tuple)
        for i, v in enumerate(verts):
            buf.write(f"{nid},{t},{i},"
                      + ",".join(f"{x:.17g}" for x in v) + "\n")
        dirs = sorted((emb @ r for r in rset.set.directions), key=tuple)
        for i, r in enumerate(dirs):
            dir_rows.append(f"{nid},{t},{i},"
                            + ",".join(f"{x:.17g}" for x in r))
    buf.write("# directions\n")
    for row in dir_rows:
        buf.write(row + "\n")
    return buf.getvalue()


def parse_frontier_flag(value: str):
    if ":" in value:
        t, node_id = value.split(":", 1)
        return int(t), node_id
    return int(value), None


def build_path(scenario_tree, branch_text: str):
    """Turn a comma list of successor indices into a node key path."""
    key = scenario_tree.root.key
    path = [key]
    for part in branch_text.split(","):
        node = scenario_tree.nodes[key]
        try:
            idx = int(part)
            key = node.successors[idx][0]
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"bad branch index {part!r}") from exc
        path.append(key)
    if len(path) != scenario_tree.params.t_steps + 1:
        raise ConfigError("path must have one branch index per time step")
    return path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="setrisk",
        description="Backward induction of set-valued risk measures on "
                    "scenario trees.")
    ap.add_argument("--config", required=True, help="run configuration JSON")
    ap.add_argument("--run", action="append",
                    help="run only the named entries (repeatable)")
    ap.add_argument("--emit-frontier", action="append", metavar="T[:NODE]",
                    help="write frontier CSV for time T (optionally one node)")
    ap.add_argument("--dump-all", metavar="FILE",
                    help="write the full node->risk-set dump as JSON")
    ap.add_argument("--path", help="comma separated successor indices")
    ap.add_argument("--sample-path", type=int, metavar="SEED",
                    help="sample a path with this seed")
    ap.add_argument("--cost", help="comma separated cost vector for the "
                                   "forward pass (default 1,0,...)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--epsilon", type=float,
                    help="override the convex step error")
    ap.add_argument("--dump-tree", metavar="FILE", help="write the tree JSON")
    ap.add_argument("--bond-compounding", choices=["continuous", "simple"])
    ap.add_argument("--out-dir", default=".")
    args = ap.parse_args(argv)

    logging.basicConfig(level=os.environ.get("SETRISK_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        return _run(args)
    except (ConfigError, TreeError, SpecError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (InductionError, vop.VOPError) as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return 3


def _run(args) -> int:
    cfg = load_config(args.config)
    tree_cfg = dict(cfg["tree"])
    if args.bond_compounding:
        tree_cfg["bond_compounding"] = args.bond_compounding
    params = tree_params(tree_cfg)
    scenario_tree = tree.build_tree(params)
    log.info("tree built: %d nodes", len(scenario_tree.nodes))

    os.makedirs(args.out_dir, exist_ok=True)
    if args.dump_tree:
        with open(os.path.join(args.out_dir, args.dump_tree), "w") as fh:
            fh.write(tree.tree_to_json(scenario_tree))

    frontier_requests = [parse_frontier_flag(v) for v in (args.emit_frontier or [])]
    dumps = {}
    selected = cfg["runs"]
    if args.run:
        selected = [r for r in selected if r.get("name") in args.run]
        if not selected:
            raise ConfigError(f"no runs match {args.run}")

    for run_cfg in selected:
        name = run_cfg.get("name")
        if not name:
            raise ConfigError("every run needs a name")
        spec = risk_spec(run_cfg.get("risk", {}), params.d)
        mkt = market_model(run_cfg.get("market"))
        mode = run_mode(run_cfg.get("mode"), spec, mkt, args.jobs, args.epsilon)
        position = run_cfg.get("position", cfg["payoff"].get("position", "short"))
        claims = claims_for(scenario_tree, cfg["payoff"], position)
        log.info("run %s: %s, market=%s, convex=%s", name, spec.kind,
                 mkt.kind if mkt else "none", mode.convex)

        results = recursion.backward_induct(scenario_tree, spec, claims, mode,
                                            market=mkt)
        root = results[scenario_tree.root.key]
        print(f"run {name}: root vertices {root.set.vertices.shape[0]}, "
              f"epsilon_total {root.epsilon_total:.6g}")

        for t, node_id in frontier_requests:
            text = frontier_csv(results, scenario_tree, spec, t, node_id)
            suffix = f"_t{t}" + (f"_{node_id.replace(':', '_')}" if node_id else "")
            out = os.path.join(args.out_dir, f"{name}_frontier{suffix}.csv")
            with open(out, "w") as fh:
                fh.write(text)
            print(f"  wrote {out}")

        if args.dump_all:
            dumps[name] = json.loads(recursion.run_to_json(results))

        if args.path is not None or args.sample_path is not None:
            if args.path is not None:
                path = build_path(scenario_tree, args.path)
                seed = None
            else:
                seed = args.sample_path
                path = strategy.sample_path(scenario_tree, seed)
            if args.cost:
                cost_d = np.array([float(v) for v in args.cost.split(",")])
                if cost_d.shape != (params.d,):
                    raise ConfigError("cost vector has wrong length")
            else:
                cost_d = np.zeros(params.d)
                cost_d[0] = 1.0
            cost = spec.embedding().T @ cost_d
            verts = root.set.vertices
            z0 = verts[int(np.argmin(verts @ cost))]
            if mode.convex:
                m_dir = geometry.orthant(spec.qdim).interior_direction()
                z0 = z0 + root.epsilon_total * m_dir
            trace = strategy.forward_pass(results, scenario_tree, path, z0,
                                          cost, seed=seed)
            report = strategy.verify_trace(trace, results, scenario_tree, spec,
                                           claims, market=mkt)
            out = os.path.join(args.out_dir, f"{name}_trace.csv")
            with open(out, "w") as fh:
                fh.write(strategy.trace_to_csv(trace, scenario_tree, spec))
            status = "ok" if not report["violations"] else "VIOLATIONS"
            print(f"  wrote {out} (checks: {report['checks']}, {status})")
            for v in report["violations"]:
                print(f"    {v}")

    if args.dump_all:
        with open(os.path.join(args.out_dir, args.dump_all), "w") as fh:
            json.dump(dumps, fh, indent=1, sort_keys=True)
        print(f"wrote {os.path.join(args.out_dir, args.dump_all)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
