"""Experiment orchestration: scenario grids, CSV outputs, audit pass.

Every experiment derives one seed per grid cell and replication from the
master seed, so any row can be reproduced in isolation and the two
collection policies of a replication share their random draws (paired
comparison). Rows are sorted by cell key before writing, which makes the
output independent of execution order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import statistics
import time
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .config import ScenarioConfig, derive_seed, sample_thresholds
from .dynamics import (
    PolicyKind,
    apply_penalty,
    detect_free_riders,
    privacy_saving,
    run_collection_year,
    run_collection_years,
    savings_snapshot,
)
from .errors import OutputError
from .manifest import write_manifest
from .market import (
    Bid,
    ConsumerOffer,
    Federation,
    Provider,
    SealedDeal,
    compute_scaling,
    make_bid,
    seal_deal,
    settle,
)
from .privacy import AggregationMode, AlphabetSpec, ReportBatch
from .shapley import ShapleyResult, ThresholdGame, shapley_exact, shapley_pruned, shapley_sampled
from .valuation import ExponentialValuation

_POLICIES = (PolicyKind.CATALYZING, PolicyKind.NON_CATALYZING)


def build_federation(
    fed_id: str,
    n: int,
    config: ScenarioConfig,
    rng: np.random.Generator,
    delta_threshold: float | None = None,
) -> Federation:
    """Sample provider thresholds and assemble a federation.

    The member with the largest information limit is elected
    representative.
    """
    thresholds = sample_thresholds(config.thresholds, n, rng)
    providers = tuple(
        Provider(id=f"p{i:03d}", d_p=config.data_points, eps_threshold=float(eps))
        for i, eps in enumerate(thresholds)
    )
    representative = max(providers, key=lambda p: p.information_limit).id
    return Federation(
        id=fed_id,
        members=providers,
        representative=representative,
        delta_threshold=delta_threshold if delta_threshold is not None else config.delta_thresholds[0],
        tolerance_window=config.tolerance_window,
    )


def seal_single_federation_deal(
    federation: Federation,
    offer: ConsumerOffer,
    mode: AggregationMode,
    spec: AlphabetSpec,
) -> tuple[Bid, float, SealedDeal]:
    bid = make_bid(federation, offer, mode, spec)
    w_star = compute_scaling([bid], offer)
    return bid, w_star, seal_deal([bid], offer, w_star)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Mapping]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_render(row[name]) for name in header])
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


def _render(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_json(path: Path, payload) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc}") from exc
    return path


DEAL_HEADER = (
    "experiment",
    "cell",
    "policy",
    "replication",
    "seed",
    "budget",
    "w_star",
    "promised_eps",
    "price",
    "achieved_eps",
    "payout",
)


def experiment_rounds(config: ScenarioConfig, out_dir: str | Path) -> list[dict]:
    """Rounds-to-target grid over federation sizes, targets, and policies.

    Per replication one federation is sampled and its deal sealed with a
    budget priced exactly at the cell's target; both policies then run
    the warmup years plus one measured year on identical draws.
    """
    out_dir = Path(out_dir)
    spec = AlphabetSpec(config.k)
    valuation = ExponentialValuation(config.k1, config.k2)
    rows: list[dict] = []
    deal_rows: list[dict] = []
    seeds: dict[str, int] = {}

    for n in config.federation_sizes:
        for target in config.targets:
            for rep in range(config.replications):
                build_seed = derive_seed(config.master_seed, "rounds-build", n, target, rep)
                run_seed = derive_seed(config.master_seed, "rounds-run", n, target, rep)
                seeds[f"rounds/n={n}/target={target}/rep={rep}"] = run_seed
                federation = build_federation(
                    f"F{n}", n, config, np.random.default_rng(build_seed)
                )
                offer = ConsumerOffer(budget=valuation.invert(target), valuation=valuation)
                _, w_star, deal = seal_single_federation_deal(
                    federation, offer, config.aggregation, spec
                )
                term = deal.terms[federation.id]
                for policy_kind in _POLICIES:
                    policy = config.collection_policy(policy_kind)
                    rng = np.random.default_rng(run_seed)
                    ledgers = run_collection_years(
                        federation,
                        term.promised_eps,
                        policy,
                        years=config.warmup_years + 1,
                        max_rounds=config.max_rounds,
                        mode=config.aggregation,
                        rng=rng,
                        spec=spec,
                    )
                    measured = ledgers[-1]
                    payout = settle(deal, federation, measured.achieved, config.aggregation)
                    rows.append(
                        {
                            "n": n,
                            "target": float(target),
                            "policy": policy_kind.value,
                            "replication": rep,
                            "rounds_used": measured.rounds_used if measured.reached else config.max_rounds,
                            "achieved": measured.achieved,
                        }
                    )
                    deal_rows.append(
                        {
                            "experiment": "rounds",
                            "cell": f"n={n}/target={target}",
                            "policy": policy_kind.value,
                            "replication": rep,
                            "seed": run_seed,
                            "budget": offer.budget,
                            "w_star": w_star,
                            "promised_eps": term.promised_eps,
                            "price": term.price,
                            "achieved_eps": measured.achieved,
                            "payout": payout,
                        }
                    )

    rows.sort(key=lambda r: (r["n"], r["target"], r["policy"], r["replication"]))
    deal_rows.sort(key=lambda r: (r["cell"], r["policy"], r["replication"]))
    paths = [
        _write_csv(
            out_dir / "rounds.csv",
            ("n", "target", "policy", "replication", "rounds_used", "achieved"),
            rows,
        ),
        _write_csv(out_dir / "rounds_deals.csv", DEAL_HEADER, deal_rows),
    ]
    write_manifest(out_dir / "rounds_manifest.json", config, seeds, paths)
    return rows


def experiment_free_riders(config: ScenarioConfig, out_dir: str | Path) -> list[dict]:
    """Multi-year free-rider counts per federation size and tolerance.

    Years here have a fixed number of rounds (an open-ended collection
    target), so both policies face identical participation draws and
    differ only through the epsilon escalation; what is measured is the
    savings bookkeeping, not deal success. Each year past the tolerance
    window the federation snapshots savings, flags free riders, and
    excludes them; the reported count is the cumulative number of
    excluded providers at the end of the run.
    """
    out_dir = Path(out_dir)
    spec = AlphabetSpec(config.k)
    open_target = math.inf  # never reached: every year runs the full round count
    rows: list[dict] = []
    seeds: dict[str, int] = {}

    for n in config.freerider_sizes:
        for delta in config.delta_thresholds:
            for rep in range(config.replications):
                build_seed = derive_seed(config.master_seed, "freeriders-build", n, delta, rep)
                run_seed = derive_seed(config.master_seed, "freeriders-run", n, delta, rep)
                seeds[f"freeriders/n={n}/delta={delta}/rep={rep}"] = run_seed
                base = build_federation(
                    f"F{n}", n, config, np.random.default_rng(build_seed), delta_threshold=delta
                )
                for policy_kind in _POLICIES:
                    policy = config.freerider_policy(policy_kind)
                    rng = np.random.default_rng(run_seed)
                    federation = base
                    registry: dict = {}
                    ledgers = []
                    excluded_total = 0
                    for year in range(1, config.freerider_years + 1):
                        if not federation.active:
                            break
                        window = ledgers[-config.tolerance_window :]
                        savings = {
                            p.id: privacy_saving(window, p) for p in federation.members
                        }
                        ledgers.append(
                            run_collection_year(
                                federation,
                                open_target,
                                policy,
                                config.freerider_rounds_per_year,
                                config.aggregation,
                                rng,
                                savings=savings,
                                year=year,
                                spec=spec,
                            )
                        )
                        if year >= config.tolerance_window:
                            accounts = savings_snapshot(
                                ledgers[-config.tolerance_window :], federation.members
                            )
                            flagged = detect_free_riders(accounts, delta)
                            federation, registry = apply_penalty(federation, flagged, registry)
                            excluded_total += len(flagged)
                    rows.append(
                        {
                            "n": n,
                            "delta_f": float(delta),
                            "policy": policy_kind.value,
                            "replication": rep,
                            "free_rider_count": excluded_total,
                        }
                    )

    rows.sort(key=lambda r: (r["n"], r["delta_f"], r["policy"], r["replication"]))
    paths = [
        _write_csv(
            out_dir / "freeriders.csv",
            ("n", "delta_f", "policy", "replication", "free_rider_count"),
            rows,
        )
    ]
    write_manifest(out_dir / "freeriders_manifest.json", config, seeds, paths)
    return rows


def shares_digest(shares: Mapping[str, float]) -> str:
    canonical = json.dumps({pid: float(v).hex() for pid, v in shares.items()}, sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def timing_game(config: ScenarioConfig, n: int) -> ThresholdGame:
    """Random additive threshold game matching the experiment population."""
    rng = np.random.default_rng(derive_seed(config.master_seed, "timing", n))
    thresholds = sample_thresholds(config.thresholds, n, rng)
    players = tuple(
        (f"p{i:03d}", (ReportBatch(1, float(eps)),)) for i, eps in enumerate(thresholds)
    )
    total = float(np.sum(thresholds))
    return ThresholdGame(
        players=players,
        mode=AggregationMode.ADDITIVE_INFORMATION,
        target=config.timing_target_fraction * total,
        prize=config.timing_prize,
        spec=AlphabetSpec(config.k),
    )


def experiment_shapley_timing(config: ScenarioConfig, out_dir: str | Path) -> list[dict]:
    """Wall time of exact vs pruned evaluation on identical games.

    Per size: one warmup evaluation (excluded), then the median of
    ``timing_repeats`` monotonic-clock measurements. The shares digest
    proves both methods returned identical money.
    """
    out_dir = Path(out_dir)
    rows: list[dict] = []
    seeds: dict[str, int] = {}
    for n in config.timing_sizes:
        seeds[f"timing/n={n}"] = derive_seed(config.master_seed, "timing", n)
        game = timing_game(config, n)
        for method, evaluate in (("exact", shapley_exact), ("pruned", shapley_pruned)):
            evaluate(game)  # warmup, excluded from measurement
            times = []
            result: ShapleyResult | None = None
            for _ in range(config.timing_repeats):
                start = time.perf_counter()
                result = evaluate(game)
                times.append(time.perf_counter() - start)
            rows.append(
                {
                    "n": n,
                    "method": method,
                    "wall_time": statistics.median(times),
                    "shares_digest": shares_digest(result.shares),
                }
            )

    rows.sort(key=lambda r: (r["n"], r["method"]))
    paths = [
        _write_csv(
            out_dir / "timing.csv", ("n", "method", "wall_time", "shares_digest"), rows
        )
    ]
    write_manifest(out_dir / "timing_manifest.json", config, seeds, paths)
    return rows


def simulate(config: ScenarioConfig, out_dir: str | Path) -> dict:
    """One full pipeline run: broadcast, bid, seal, collect, settle, split.

    Uses the configured budget and the first federation size; writes the
    per-round trace, year ledgers, deal record, revenue shares, penalty
    snapshot, and the run manifest.
    """
    out_dir = Path(out_dir)
    spec = AlphabetSpec(config.k)
    valuation = ExponentialValuation(config.k1, config.k2)
    n = config.federation_sizes[0]
    seeds = {
        "simulate/build": derive_seed(config.master_seed, "simulate-build", n),
        "simulate/run": derive_seed(config.master_seed, "simulate-run", n),
        "simulate/shapley": derive_seed(config.master_seed, "simulate-shapley", n),
    }
    federation = build_federation(
        "F1", n, config, np.random.default_rng(seeds["simulate/build"])
    )
    offer = ConsumerOffer(budget=config.budget, valuation=valuation)
    bid, w_star, deal = seal_single_federation_deal(
        federation, offer, config.aggregation, spec
    )
    term = deal.terms[federation.id]

    policy = config.collection_policy(config.policy)
    rng = np.random.default_rng(seeds["simulate/run"])
    ledgers = run_collection_years(
        federation,
        term.promised_eps,
        policy,
        years=config.warmup_years + 1,
        max_rounds=config.max_rounds,
        mode=config.aggregation,
        rng=rng,
        spec=spec,
    )
    measured = ledgers[-1]
    payout = settle(deal, federation, measured.achieved, config.aggregation)

    by_provider: dict[str, list[ReportBatch]] = {p.id: [] for p in federation.members}
    for report in measured.reports:
        by_provider[report.provider_id].append(ReportBatch(report.d_t, report.eps_t))
    game = ThresholdGame(
        players=tuple((pid, tuple(batches)) for pid, batches in by_provider.items()),
        mode=config.aggregation,
        target=term.promised_eps,
        prize=payout,
        spec=spec,
    )
    if game.n <= 22:
        result = shapley_pruned(game)
    else:
        result = shapley_sampled(
            game, config.shapley_samples, np.random.default_rng(seeds["simulate/shapley"])
        )

    accounts = savings_snapshot(ledgers[-config.tolerance_window :], federation.members)
    flagged = detect_free_riders(accounts, federation.delta_threshold)
    reduced, registry = apply_penalty(federation, flagged, {})

    trace_rows = []
    for ledger in ledgers:
        for report, running in zip(ledger.reports, ledger.cumulative):
            trace_rows.append(
                {
                    "year": report.year,
                    "round": report.round,
                    "provider": report.provider_id,
                    "d_t": report.d_t,
                    "eps_t": report.eps_t,
                    "cumulative": running,
                }
            )
    paths = [
        _write_csv(
            out_dir / "trace.csv",
            ("year", "round", "provider", "d_t", "eps_t", "cumulative"),
            trace_rows,
        ),
        _write_json(
            out_dir / "ledgers.json",
            [
                {
                    "year": ledger.year,
                    "target": ledger.target,
                    "rounds_used": ledger.rounds_used,
                    "achieved": ledger.achieved,
                    "reached": ledger.reached,
                    "providers": {
                        pid: {"d_total": py.d_total, "eps_level": py.eps_level}
                        for pid, py in sorted(ledger.per_provider.items())
                    },
                }
                for ledger in ledgers
            ],
        ),
        _write_json(
            out_dir / "deal.json",
            {
                "budget": offer.budget,
                "federation": federation.id,
                "members": len(federation.members),
                "eps_threshold_fed": bid.eps_threshold_fed,
                "asking_price": bid.asking_price,
                "w_star": w_star,
                "promised_eps": term.promised_eps,
                "price": term.price,
                "achieved_eps": measured.achieved,
                "payout": payout,
                "aggregation": config.aggregation.value,
            },
        ),
        _write_json(
            out_dir / "shares.json",
            {
                "method": result.method,
                "sample_count": result.sample_count,
                "prize": payout,
                "shares": {pid: share for pid, share in sorted(result.shares.items())},
            },
        ),
        _write_json(
            out_dir / "penalties.json",
            {
                "savings": {a.provider_id: a.delta for a in accounts},
                "flagged": sorted(flagged),
                "registry": {
                    pid: {"demerits": state.demerits, "excluded": state.excluded}
                    for pid, state in sorted(registry.items())
                },
                "federation_active": reduced.active,
                "remaining_members": len(reduced.members),
            },
        ),
    ]
    write_manifest(out_dir / "manifest.json", config, seeds, paths)
    return {
        "w_star": w_star,
        "promised_eps": term.promised_eps,
        "achieved": measured.achieved,
        "payout": payout,
        "rounds_used": measured.rounds_used,
        "flagged": sorted(flagged),
    }


def audit_outputs(out_dir: str | Path) -> list[str]:
    """Re-verify settlement invariants over everything a run emitted.

    Checks every deal record: payouts never exceed the budget, meeting
    the promise pays exactly the sealed price, and missing it pays
    exactly zero.
    """
    out_dir = Path(out_dir)
    problems: list[str] = []
    audited = 0

    for path in sorted(out_dir.glob("*deals.csv")):
        with open(path, newline="") as handle:
            for row in csv.DictReader(handle):
                audited += 1
                where = f"{path.name}:{row['cell']}/{row['policy']}/rep={row['replication']}"
                budget = float(row["budget"])
                price = float(row["price"])
                promised = float(row["promised_eps"])
                achieved = float(row["achieved_eps"])
                payout = float(row["payout"])
                if payout > budget + 1e-9:
                    problems.append(f"{where}: payout {payout} exceeds budget {budget}")
                expected = price if achieved >= promised else 0.0
                if payout != expected:
                    problems.append(
                        f"{where}: payout {payout} != expected {expected} "
                        f"(achieved {achieved}, promised {promised})"
                    )

    deal_json = out_dir / "deal.json"
    if deal_json.exists():
        with open(deal_json) as handle:
            deal = json.load(handle)
        audited += 1
        if deal["payout"] > deal["budget"] + 1e-9:
            problems.append("deal.json: payout exceeds budget")
        expected = deal["price"] if deal["achieved_eps"] >= deal["promised_eps"] else 0.0
        if deal["payout"] != expected:
            problems.append(f"deal.json: payout {deal['payout']} != expected {expected}")

    if audited == 0:
        problems.append(f"no deal records found under {out_dir}")
    return problems
