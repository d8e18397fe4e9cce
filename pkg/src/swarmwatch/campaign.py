"""Campaign orchestration: config, the round loop, and report emission.

A campaign runs a fixed number of rounds, each a bulk-synchronous pass:
assign regions, let every agent test-and-map its region, exercise the
output gate with live traffic, gather indicators, let the shepherd retune
parameters and regions. An optional learning epoch swaps the SUT map at a
round boundary; the campaign scores the discovered maps against the
scenario oracle before and after.

Everything is derived from one master seed (per-agent, per-metric, and
gate-traffic substreams), and the canonical report is byte-stable: sorted
keys, plain floats, no timestamps. Wall-clock runtime is kept on the
in-memory report object only.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .agent import (
    ACTION,
    INPUT,
    WatchdogAgent,
    AgentParams,
    Cluster,
    compress_actions,
    compress_inputs,
    _PRIORITY,
)
from .boxes import Box, sample_in_box
from .constraints import Category
from .parsing import parse_system
from .scenario import (
    POST,
    PRE,
    Scenario,
    ScoreCard,
    build_stock_scenario,
    score,
)
from .shepherd import PerformanceIndicators, Shepherd
from .spaces import Assignment, Variable, VariableSpace
from .sut import LearningSut, SutFault, SutSpec, make_reference_sut, shutdown

log = logging.getLogger(__name__)

#: Inversion attempts each agent may spend per round confirming action boxes.
INVERSIONS_PER_ROUND = 3

#: Monte Carlo points per region when estimating settled/violating volume.
VOLUME_SAMPLES = 512


class ConfigError(ValueError):
    """Bad campaign configuration; reported before anything runs."""


@dataclass(frozen=True)
class CampaignConfig:
    seed: int
    agents: int = 3
    rounds: int = 10
    learning_round: int = 0  # 0 = the SUT never learns during the campaign
    scenario_kind: str = "stock"
    constraints_path: str | None = None
    sut_path: str | None = None
    params: AgentParams = field(default_factory=AgentParams)
    block_inefficient: bool = False
    gate_traffic_per_round: int = 20
    shutdown_drill: int = 5
    report_path: str = "report.json"
    trace_path: str = "trace.csv"

    def validate(self) -> None:
        if self.agents < 1:
            raise ConfigError("agents must be >= 1")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.learning_round < 0 or (
            self.learning_round and self.learning_round >= self.rounds
        ):
            raise ConfigError("learning_round must be 0 or inside [1, rounds)")
        if self.gate_traffic_per_round < 0 or self.shutdown_drill < 0:
            raise ConfigError("gate traffic counts must be >= 0")
        if self.scenario_kind == "custom":
            if not self.constraints_path or not self.sut_path:
                raise ConfigError("custom scenarios need constraints and sut paths")
        elif self.scenario_kind != "stock":
            raise ConfigError(f"unknown scenario kind {self.scenario_kind!r}")
        try:
            self.params.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "agents": self.agents,
            "rounds": self.rounds,
            "learning_round": self.learning_round,
            "scenario_kind": self.scenario_kind,
            "constraints_path": self.constraints_path,
            "sut_path": self.sut_path,
            "params": self.params.to_dict(),
            "block_inefficient": self.block_inefficient,
            "gate_traffic_per_round": self.gate_traffic_per_round,
            "shutdown_drill": self.shutdown_drill,
        }

    @classmethod
    def from_toml(cls, path: str | Path) -> "CampaignConfig":
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "CampaignConfig":
        campaign = data.get("campaign", {})
        if "seed" not in campaign:
            raise ConfigError("campaign.seed is mandatory (no wall-clock seeding)")
        scenario = data.get("scenario", {})
        gate = data.get("gate", {})
        output = data.get("output", {})
        try:
            params = AgentParams(**data.get("agent_defaults", {}))
        except TypeError as exc:
            raise ConfigError(f"bad agent_defaults: {exc}") from exc
        cfg = cls(
            seed=int(campaign["seed"]),
            agents=int(campaign.get("agents", 3)),
            rounds=int(campaign.get("rounds", 10)),
            learning_round=int(campaign.get("learning_round", 0)),
            scenario_kind=str(scenario.get("kind", "stock")),
            constraints_path=scenario.get("constraints"),
            sut_path=scenario.get("sut"),
            params=params,
            block_inefficient=bool(gate.get("block_inefficient", False)),
            gate_traffic_per_round=int(campaign.get("gate_traffic_per_round", 20)),
            shutdown_drill=int(campaign.get("shutdown_drill", 5)),
            report_path=str(output.get("report", "report.json")),
            trace_path=str(output.get("trace", "trace.csv")),
        )
        cfg.validate()
        return cfg


@dataclass
class CampaignReport:
    config: dict
    header: dict
    rounds: list[dict]
    scorecards: dict
    totals: dict
    trace_rows: list[tuple]
    runtime_seconds: float
    #: mean wall-clock seconds per gate decision; measured, no threshold.
    #: Timings stay off the canonical form to keep reports byte-stable.
    gate_latency_seconds: float | None = None

    def canonical_dict(self) -> dict:
        """Everything that belongs in the byte-stable report file."""
        return {
            "config": self.config,
            "header": self.header,
            "rounds": self.rounds,
            "scorecards": self.scorecards,
            "totals": self.totals,
        }

    def canonical_json(self) -> str:
        return json.dumps(
            self.canonical_dict(), sort_keys=True, indent=2, allow_nan=False
        ) + "\n"


# --------------------------------------------------------------------------
# custom scenario loading


def _space_from_decls(decls: list[dict]) -> VariableSpace:
    return VariableSpace(
        tuple(
            Variable(
                d["name"],
                d["kind"],
                float(d.get("lo", 0.0)),
                float(d.get("hi", 1.0)),
                tuple(d["values"]) if d.get("values") else None,
            )
            for d in decls
        )
    )


def load_custom(constraints_path: str, sut_path: str):
    """Custom bench: a constraint file (grammar) plus a SUT spec JSON."""
    try:
        text = Path(constraints_path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read constraints {constraints_path}: {exc}") from exc
    system = parse_system(text)
    try:
        sut_doc = json.loads(Path(sut_path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read sut {sut_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed sut file {sut_path}: {exc}") from exc
    input_space = _space_from_decls(sut_doc["input_space"])
    action_space = _space_from_decls(sut_doc.get("action_space", []))
    if len(action_space) == 0:
        action_space = system.space
    spec = SutSpec(
        sut_doc["spec"]["kind"],
        int(sut_doc["spec"].get("seed", 0)),
        sut_doc["spec"].get("params", {}),
    )
    if system.space.names != action_space.names:
        raise ConfigError("constraint variables must match the SUT action space")
    return input_space, action_space, system, spec


# --------------------------------------------------------------------------
# the round loop


def _volume_fractions(
    clusters: list[Cluster],
    region: Box,
    space: VariableSpace,
    rng: np.random.Generator,
    epsilon: float,
) -> tuple[float, float]:
    """Monte Carlo (settled fraction, settled-H' fraction) of a region."""
    settled = [c for c in clusters if c.space_tag == INPUT and c.settled(epsilon)]
    if not settled:
        return 0.0, 0.0
    hits = 0
    h_hits = 0
    for _ in range(VOLUME_SAMPLES):
        p = sample_in_box(rng, region, space)
        for c in settled:
            if c.box.contains(p):
                hits += 1
                if c.label is Category.H_PRIME:
                    h_hits += 1
                break
    return hits / VOLUME_SAMPLES, h_hits / VOLUME_SAMPLES


def _new_violation_boxes(scenario: Scenario) -> tuple[Box, ...]:
    gained = set(scenario.gained_names()) & set(scenario.hard_violation_names(POST))
    return scenario.boxes_of(gained)


def _found_new_violation(
    agents: list[WatchdogAgent], scenario: Scenario, epsilon: float
) -> bool:
    targets = _new_violation_boxes(scenario)
    for agent in agents:
        for cl in agent.clusters:
            if cl.label is not Category.H_PRIME or not cl.settled(epsilon):
                continue
            if cl.space_tag == ACTION:
                footprint = [cl.box]
            else:
                footprint = scenario.image_boxes(POST, cl.box)
            if any(f.intersect(t) is not None for f in footprint for t in targets):
                return True
    return False


def run_campaign(config: CampaignConfig) -> CampaignReport:
    """Execute the full campaign and return its report."""
    config.validate()
    started = time.perf_counter()

    if config.scenario_kind == "stock":
        scenario = build_stock_scenario(seed=config.seed)
        input_space = scenario.input_space
        action_space = scenario.action_space
        system = scenario.system
        sut_spec = scenario.sut_spec
        header = {"scenario": scenario.to_dict(), "input_space": list(input_space.names),
                  "action_space": list(action_space.names)}
    else:
        scenario = None
        input_space, action_space, system, sut_spec = load_custom(
            config.constraints_path, config.sut_path
        )
        header = {"scenario": None, "input_space": list(input_space.names),
                  "action_space": list(action_space.names)}

    n = config.agents
    master = np.random.SeedSequence(config.seed)
    agent_seeds = master.spawn(n)
    metric_seeds = master.spawn(n)
    gate_rng = np.random.default_rng(master.spawn(1)[0])
    metric_rngs = [np.random.default_rng(s) for s in metric_seeds]

    trace_rows: list[tuple] = []

    def tracer(t, agent_id, kind, x, v, classification, verdict):
        if classification is None:
            cat, psi = "", ""
        else:
            cat, psi = classification.category.value, classification.psi
        trace_rows.append((t, agent_id, kind, x, v, cat, psi, verdict))

    agents = [
        WatchdogAgent(
            i,
            make_reference_sut(sut_spec, input_space, action_space),
            system,
            config.params,
            agent_seeds[i],
            trace=tracer,
            block_inefficient=config.block_inefficient,
        )
        for i in range(n)
    ]
    shepherd = Shepherd(config.params)
    global_box = Box.of_space(input_space)
    assignment = shepherd.assign_regions(n, global_box)
    params_list = [config.params] * n

    prev_h_volume = [0.0] * n
    stagnation = [0] * n
    round_records: list[dict] = []
    score_pre: ScoreCard | None = None
    score_post: ScoreCard | None = None
    latency: int | None = None
    scoring_eps = config.params.epsilon
    gate_time = 0.0
    gate_calls = 0

    for t in range(1, config.rounds + 1):
        agent_records = []
        indicators: list[PerformanceIndicators] = []

        for i, agent in enumerate(agents):
            agent.params = params_list[i]
            region = assignment[i]
            probes0 = agent.probes
            attempts0, successes0 = agent.inversion_attempts, agent.inversion_successes
            blocked0, released0 = agent.gate.blocked, agent.gate.released

            round_ = agent.run_round(region, t)
            in_clusters = compress_inputs(round_, agent.params.risk_ratio)
            act_clusters = compress_actions(round_, agent.params.risk_ratio)
            current: list[Cluster] = []
            for cl in sorted(in_clusters, key=lambda c: _PRIORITY[c.label]):
                leaves, samples = agent.partition_with_samples(cl, t)
                current.extend(leaves)
                current.extend(agent.action_clusters_from_leaves(leaves, samples, t))
            current.extend(act_clusters)
            try:
                agent.confirm_action_clusters(
                    agent.clusters, t, round_, INVERSIONS_PER_ROUND
                )
            except SutFault as exc:
                log.warning("agent %d inversion hit a SUT fault: %s", i, exc)
            agent.clusters = agent.adapt(agent.clusters, current, round_, t)

            counts = {c.value: 0 for c in Category}
            for lab in round_.labels():
                counts[lab.value] += 1
            agent_records.append(
                {
                    "agent": i,
                    "region": region.as_lists(),
                    "params": agent.params.to_dict(),
                    "samples": len(round_),
                    "counts": counts,
                    "fault": round_.fault,
                    "probes0": probes0,
                    "attempts0": attempts0,
                    "successes0": successes0,
                    "blocked0": blocked0,
                    "released0": released0,
                }
            )

        # live gate traffic over the whole input space, routed by region owner
        for _ in range(config.gate_traffic_per_round):
            xv = sample_in_box(gate_rng, global_box, input_space)
            owner = next(
                (i for i in range(n) if assignment[i].contains(xv)), 0
            )
            gate_started = time.perf_counter()
            agents[owner].gatekeep(Assignment(input_space, xv), t)
            gate_time += time.perf_counter() - gate_started
            gate_calls += 1

        for i, agent in enumerate(agents):
            rec = agent_records[i]
            settled_frac, h_frac = _volume_fractions(
                agent.clusters, assignment[i], input_space, metric_rngs[i],
                agent.params.epsilon,
            )
            settled_clusters = [
                c for c in agent.clusters if c.settled(agent.params.epsilon)
            ]
            purity = (
                sum(c.confidence for c in settled_clusters) / len(settled_clusters)
                if settled_clusters
                else 0.0
            )
            attempts = agent.inversion_attempts - rec.pop("attempts0")
            successes = agent.inversion_successes - rec.pop("successes0")
            rate = successes / attempts if attempts else 1.0
            spend = agent.probes - rec.pop("probes0")
            blocked = agent.gate.blocked - rec.pop("blocked0")
            released = agent.gate.released - rec.pop("released0")
            if h_frac > prev_h_volume[i] + 1e-9:
                stagnation[i] = 0
            else:
                stagnation[i] += 1
            prev_h_volume[i] = h_frac
            ind = PerformanceIndicators(
                settled_volume=min(settled_frac, 1.0),
                h_prime_volume=min(h_frac, 1.0),
                purity_mean=min(purity, 1.0),
                inversion_success_rate=min(rate, 1.0),
                compute_spend=float(spend),
                gate_blocks=blocked,
                stagnation=stagnation[i],
            )
            indicators.append(ind)
            rec.update(
                {
                    "indicators": ind.to_dict(),
                    "probes": spend,
                    "inversions": {"attempts": attempts, "successes": successes},
                    "gate": {"released": released, "blocked": blocked},
                    "clusters": [c.to_dict() for c in agent.clusters],
                }
            )

        params_list = shepherd.influence(params_list, indicators)
        fired = shepherd.last_fired
        next_assignment = shepherd.assign_regions(
            n, global_box, indicators, assignment, input_space
        )
        round_records.append(
            {
                "t": t,
                "agents": agent_records,
                "shepherd": {
                    "fired": fired,
                    "params_next": [p.to_dict() for p in params_list],
                    "regions_next": [b.as_lists() for b in next_assignment.regions],
                },
            }
        )
        assignment = next_assignment

        if scenario is not None and config.learning_round and t == config.learning_round:
            score_pre = score(
                _all_clusters(agents), scenario, PRE, epsilon=scoring_eps
            )
            for agent in agents:
                if isinstance(agent.sut, LearningSut):
                    agent.sut.force_epoch()
        if (
            scenario is not None
            and config.learning_round
            and t > config.learning_round
            and latency is None
            and _found_new_violation(agents, scenario, scoring_eps)
        ):
            latency = t - config.learning_round

    if scenario is not None:
        if config.learning_round:
            score_post = score(
                _all_clusters(agents),
                scenario,
                POST,
                epsilon=scoring_eps,
                new_violation_latency=latency,
            )
        else:
            score_pre = score(_all_clusters(agents), scenario, PRE, epsilon=scoring_eps)

    # shutdown drill: close every gate, then prove nothing escapes
    if config.shutdown_drill:
        for agent in agents:
            shutdown(agent.sut, agent.gate)
        for _ in range(config.shutdown_drill):
            xv = sample_in_box(gate_rng, global_box, input_space)
            for agent in agents:
                agent.gatekeep(Assignment(input_space, xv), config.rounds + 1)

    totals = {
        "probes": sum(a.probes for a in agents),
        "inversion_evals": sum(a.inversion_evals for a in agents),
        "inversion_attempts": sum(a.inversion_attempts for a in agents),
        "inversion_successes": sum(a.inversion_successes for a in agents),
        "gate_released": sum(a.gate.released for a in agents),
        "gate_blocked": sum(a.gate.blocked for a in agents),
        "rounds": config.rounds,
    }
    report = CampaignReport(
        config=config.to_dict(),
        header=header,
        rounds=round_records,
        scorecards={
            "pre": score_pre.to_dict() if score_pre else None,
            "post": score_post.to_dict() if score_post else None,
        },
        totals=totals,
        trace_rows=trace_rows,
        runtime_seconds=time.perf_counter() - started,
        gate_latency_seconds=gate_time / gate_calls if gate_calls else None,
    )
    log.info("campaign finished in %.2fs: %s", report.runtime_seconds, totals)
    return report


def _all_clusters(agents: list[WatchdogAgent]) -> list[Cluster]:
    out: list[Cluster] = []
    for agent in agents:
        out.extend(agent.clusters)
    return out


# --------------------------------------------------------------------------
# emission


def emit_report(report: CampaignReport, report_path: str | Path, trace_path: str | Path) -> None:
    """Write the canonical JSON report and the CSV probe/gate trace."""
    report_path, trace_path = Path(report_path), Path(trace_path)
    try:
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(report.canonical_json())
    except OSError as exc:
        raise OSError(f"cannot write report {report_path}: {exc}") from exc

    in_names = report.header["input_space"]
    act_names = report.header["action_space"]
    headers = (
        ["t", "agent", "kind"]
        + [f"x_{nm}" for nm in in_names]
        + [f"v_{nm}" for nm in act_names]
        + ["category", "psi", "verdict"]
    )
    try:
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(headers)
            blank_v = [""] * len(act_names)
            for t, agent_id, kind, x, v, cat, psi, verdict in report.trace_rows:
                row = [t, agent_id, kind]
                row.extend(x)
                row.extend(v if v is not None else blank_v)
                row.extend([cat, psi, verdict])
                writer.writerow(row)
    except OSError as exc:
        raise OSError(f"cannot write trace {trace_path}: {exc}") from exc


def clusters_from_record(record: dict) -> list[Cluster]:
    """Rebuild Cluster objects from one round record (for score/replay)."""
    out = []
    for rec in record["agents"]:
        for d in rec["clusters"]:
            out.append(
                Cluster(
                    space_tag=d["space"],
                    box=Box(tuple(d["box"][0]), tuple(d["box"][1])),
                    label=Category(d["label"]),
                    confidence=d["confidence"],
                    support=d["support"],
                    born_t=d["born_t"],
                    last_confirmed_t=d["last_confirmed_t"],
                    stale=d["stale"],
                )
            )
    return out
