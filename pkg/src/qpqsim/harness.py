"""
Seeded Monte Carlo scenarios and report aggregation.

Every trial draws from its own Philox stream keyed by ``(master_seed,
trial_index)``, so results do not depend on how trials are scheduled.
Trial outputs are reduced in trial order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Any, Callable, Iterable

import numpy as np

from . import chang_attacks, chang_protocol, postprocess, yu_attacks, yu_protocol
from .discrimination import helstrom_error, helstrom_measurement, unambiguous_feasible
from .postprocess import INCONCLUSIVE

SCENARIOS = (
    "yu-honest",
    "yu-bob-two-step",
    "yu-alice-inconclusive-checks",
    "chang-honest",
    "chang-bob-counting",
    "chang-alice-store-fake",
    "discriminate",
)

YU_KEYS = {"database_size", "substring_count", "check_fraction", "raw_length", "max_restarts"}
CHANG_KEYS = {
    "eta",
    "group_size",
    "group_count",
    "database_size",
    "substring_count",
    "significance",
    "one_sided_step3",
    "max_restarts",
}

# parameters each scenario accepts, with scenario-specific defaults
SCENARIO_PARAMS: dict[str, dict[str, Any]] = {
    "yu-honest": {"check_fraction": 0.05},
    "yu-bob-two-step": {"check_fraction": 0.05, "raw_length": 100_000},
    "yu-alice-inconclusive-checks": {"check_fraction": 0.5},
    "chang-honest": {},
    "chang-bob-counting": {"group_count": 10_000},
    "chang-alice-store-fake": {},
    "discriminate": {"raw_length": 100_000},
}
SCENARIO_KEYS = {
    "yu-honest": YU_KEYS,
    "yu-bob-two-step": {"check_fraction", "raw_length"},
    "yu-alice-inconclusive-checks": YU_KEYS,
    "chang-honest": CHANG_KEYS,
    "chang-bob-counting": {"eta", "group_size", "group_count"},
    "chang-alice-store-fake": CHANG_KEYS,
    "discriminate": {"raw_length"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    trials: int = 1
    master_seed: int = 0
    params: dict = field(default_factory=dict)
    workers: int = 1
    database_path: str | None = None

    def resolved_params(self) -> dict:
        return {**SCENARIO_PARAMS[self.scenario], **self.params}

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        extra = set(self.params) - SCENARIO_KEYS[self.scenario]
        if extra:
            raise ConfigError(f"scenario {self.scenario} does not take {', '.join(sorted(extra))}")
        try:
            if self.scenario.startswith("yu-") and self.scenario != "yu-bob-two-step":
                yp = self.yu_params()
                raw = yp.resolved_raw_length()
                if raw - yu_protocol.check_count(yp.check_fraction, raw) < yp.key_bits_needed:
                    raise ConfigError(f"raw length {raw} leaves fewer than k*N = {yp.key_bits_needed} bits")
                if self.database_path is not None:
                    self.database(np.random.default_rng(0), yp.database_size)
            elif self.scenario.startswith("chang-"):
                cp = self.chang_params()
                if self.scenario == "chang-bob-counting" and cp.group_size > chang_attacks.MAX_INFERENCE_GROUP:
                    raise ConfigError(f"counting inference supports groups of at most {chang_attacks.MAX_INFERENCE_GROUP}")
                if self.database_path is not None:
                    self.database(np.random.default_rng(0), cp.database_size)
            else:
                p = self.resolved_params()
                if p.get("raw_length", 1) < 1:
                    raise ConfigError("raw_length must be >= 1")
                if not 0 <= p.get("check_fraction", 0.0) < 1:
                    raise ConfigError("check_fraction must lie in [0, 1)")
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from exc

    def yu_params(self) -> yu_protocol.YuParams:
        p = self.resolved_params()
        return yu_protocol.YuParams(**{k: v for k, v in p.items() if k in YU_KEYS})

    def chang_params(self) -> chang_protocol.ChangParams:
        p = self.resolved_params()
        return chang_protocol.ChangParams(**{k: v for k, v in p.items() if k in CHANG_KEYS})

    def database(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.database_path is None:
            return postprocess.random_database(size, rng)
        db = postprocess.load_database(self.database_path)
        if len(db) != size:
            raise ValueError(f"database file holds {len(db)} items, expected {size}")
        return db

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "trials": self.trials,
            "master_seed": self.master_seed,
            "params": self.resolved_params(),
            "database_path": self.database_path,
        }


@dataclass
class Metric:
    """Running sum / sum of squares, merged in trial order."""

    total: float = 0.0
    total_sq: float = 0.0
    n: int = 0

    def add(self, values) -> None:
        arr = np.asarray(values, dtype=float).ravel()
        self.total += float(arr.sum())
        self.total_sq += float((arr * arr).sum())
        self.n += arr.size

    @property
    def mean(self) -> float:
        return self.total / self.n if self.n else float("nan")

    @property
    def stderr(self) -> float:
        if self.n < 2:
            return 0.0
        var = max(self.total_sq - self.n * self.mean**2, 0.0) / (self.n - 1)
        return math.sqrt(var / self.n)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n": self.n}


@dataclass
class TrialResult:
    metrics: dict[str, Any] = field(default_factory=dict)
    verdicts: dict[str, bool] = field(default_factory=dict)


@dataclass
class ExperimentReport:
    config: dict
    metrics: dict[str, dict]
    verdicts: dict[str, bool]
    seed: int
    duration_ms: float | None

    @property
    def scenario(self) -> str:
        return self.config["scenario"]

    def metric(self, name: str) -> dict:
        return self.metrics[name]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "mean", "stderr", "n"])
        for name in sorted(self.metrics):
            m = self.metrics[name]
            writer.writerow([name, repr(m["mean"]), repr(m["stderr"]), m["n"]])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        data = json.loads(text)
        return cls(**{k: data[k] for k in ("config", "metrics", "verdicts", "seed", "duration_ms")})


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Counter-based stream for one trial."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([master_seed, trial])))


# --- scenarios ------------------------------------------------------------


def _yu_run_metrics(outcome: yu_protocol.YuOutcome, database: np.ndarray, res: TrialResult) -> None:
    first = outcome.attempts[0] if outcome.attempts else None
    if first is not None:
        res.metrics["conclusive_fraction"] = first.conclusive_fraction
        res.metrics["post_drop_conclusive_fraction"] = first.post_drop_conclusive_fraction
        res.metrics["known_final_bits"] = first.known_count
        res.metrics["zero_known_bits"] = float(first.known_count == 0)
        res.metrics["achieved_check_fraction"] = first.checks / len(outcome.transcript)
    res.metrics["restarts"] = outcome.restarts
    res.metrics["detection_rate"] = float(outcome.verdict is yu_protocol.Verdict.ABORTED)
    tr = outcome.transcript
    conclusive = tr.conclusive
    res.verdicts["conclusive_values_correct"] = bool((tr.alice_values[conclusive] == tr.bob_bits[conclusive]).all())
    if outcome.final_key is not None:
        key = outcome.final_key
        res.verdicts["known_values_correct"] = all(key.bits[j] == v for j, v in key.alice_known.items())
        res.metrics["retrieval_correct"] = float(outcome.retrieved_bit == database[outcome.desired_index])
        correct = sum(int(database[t] == v) for t, v in outcome.recovered.items())
        res.metrics["database_recovery_fraction"] = correct / len(database)


def _yu_honest(config: ExperimentConfig, rng: np.random.Generator) -> TrialResult:
    params = config.yu_params()
    db = config.database(rng, params.database_size)
    res = TrialResult()
    _yu_run_metrics(yu_protocol.run_protocol(params, db, rng), db, res)
    return res


def _yu_alice_cheats(config: ExperimentConfig, rng: np.random.Generator) -> TrialResult:
    params = config.yu_params()
    db = config.database(rng, params.database_size)
    outcome = yu_protocol.run_protocol(params, db, rng, select_checks=yu_attacks.cheating_select_checks)
    res = TrialResult()
    _yu_run_metrics(outcome, db, res)
    tr = outcome.transcript
    budget = yu_protocol.check_count(params.check_fraction, len(tr))
    res.metrics["budget_covers_inconclusive"] = float((~tr.conclusive).sum() <= budget)
    return res


def _yu_two_step(config: ExperimentConfig, rng: np.random.Generator) -> TrialResult:
    p = config.resolved_params()
    length, fraction = int(p["raw_length"]), float(p["check_fraction"])
    prepared = yu_protocol.random_symbols(length, rng)
    announcements = yu_attacks.simulate_announcements(prepared, rng)
    tr = yu_protocol.ProtocolTranscript(
        prepared=prepared,
        bob_bits=np.full(length, INCONCLUSIVE, dtype=np.int8),
        announcements=announcements,
        alice_values=yu_protocol.infer_knowledge(prepared, announcements),
    )
    tr.checking_positions = yu_protocol.honest_select_checks(tr, fraction, rng)
    tr.check_replies = yu_attacks.two_step_replies(tr, tr.checking_positions, rng)
    tr.verdict = yu_protocol.verify_check_replies(tr, tr.check_replies)

    checked = tr.checking_positions
    wrong = [
        tr.check_replies[int(i)]
        is not yu_protocol.expected_reply(yu_protocol.PreparedSymbol(int(tr.prepared[i])), int(tr.announcements[i]))
        for i in checked
    ]
    # the guess is drawn for every round so its error is measured at the unconditional prior;
    # checked rounds are excluded separately because honest checks favour conclusive positions
    guesses = yu_attacks.simulate_guesses(prepared, announcements, rng)
    errors = (guesses != tr.conclusive).astype(float)
    keep = tr.remaining_positions()

    table = yu_attacks.branch_table()
    conclusive = tr.conclusive
    held_b = table.p_b1[prepared[conclusive], announcements[conclusive]]

    res = TrialResult()
    res.metrics["detection_rate"] = float(tr.verdict is yu_protocol.Verdict.FAIL)
    res.metrics["check_reply_error_rate"] = np.asarray(wrong, dtype=float)
    res.metrics["guess_error_rate"] = errors
    res.metrics["unchecked_guess_error_rate"] = errors[keep]
    res.metrics["guess_conclusive_rate"] = guesses.astype(float)
    res.metrics["conclusive_fraction"] = conclusive.astype(float)
    for a in (0, 1):
        res.metrics[f"conclusive_given_announcement_{a}"] = conclusive[announcements == a].astype(float)
    res.verdicts["conclusive_residual_matches_alice"] = bool(
        np.allclose(held_b, tr.alice_values[conclusive], rtol=0, atol=1e-12)
    )
    return res


def _chang_known(groups, res: TrialResult) -> None:
    bob, alice = chang_protocol.raw_key_arrays(groups)
    res.metrics["conclusive_fraction"] = (alice != INCONCLUSIVE).astype(float)
    res.verdicts["conclusive_values_correct"] = bool((alice[alice != INCONCLUSIVE] == bob[alice != INCONCLUSIVE]).all())


def _chang_honest(config: ExperimentConfig, rng: np.random.Generator) -> TrialResult:
    params = config.chang_params()
    db = config.database(rng, params.database_size)
    outcome = chang_protocol.run_protocol(params, db, rng)
    res = TrialResult()
    res.metrics["step3_structural_pass"] = float(outcome.step3.structural)
    res.metrics["step3_statistical_pass"] = float(outcome.step3.statistical)
    res.metrics["step4_structural_pass"] = np.array([v.structural for v in outcome.step4], dtype=float)
    res.metrics["step4_statistical_pass"] = np.array([v.statistical for v in outcome.step4], dtype=float)
    res.metrics["aborted"] = float(outcome.aborted)
    res.metrics["restarts"] = outcome.restarts
    _chang_known(outcome.groups, res)
    if outcome.final_key is not None:
        key = outcome.final_key
        res.metrics["known_final_bits"] = key.known_count
        res.metrics["retrieval_correct"] = float(outcome.retrieved_bit == db[outcome.desired_index])
        correct = sum(int(db[t] == v) for t, v in outcome.recovered.items())
        res.metrics["database_recovery_fraction"] = correct / len(db)
        res.verdicts["known_values_correct"] = all(key.bits[j] == v for j, v in key.alice_known.items())
    return res


def _chang_counting(config: ExperimentConfig, rng: np.random.Generator) -> TrialResult:
    params = config.chang_params()
    sample = chang_attacks.counting_leakage(params.resolved_group_count(), params, rng)
    res = TrialResult()
    res.metrics["posterior_mean"] = sample.posteriors
    res.metrics["posterior_abs_shift"] = sample.abs_shift()
    res.metrics["z_original_posterior_abs_shift"] = sample.abs_shift()[sample.z_original]
    res.metrics["certain_inference_rate"] = sample.certain().astype(float)
    res.metrics["prior"] = sample.prior
    return res


def _chang_store_fake(config: ExperimentConfig, rng: np.random.Generator) -> TrialResult:
    params = config.chang_params()
    db = config.database(rng, params.database_size)
    run = chang_attacks.run_store_fake(params, rng)
    res = TrialResult()
    res.metrics["step3_mismatches"] = run.step3.mismatches
    res.metrics["step3_statistical_pass"] = float(run.step3.statistical)
    res.metrics["step4_structural_failure_rate"] = np.array([not v.structural for v in run.step4], dtype=float)
    res.metrics["step4_statistical_failure_rate"] = np.array([not v.statistical for v in run.step4], dtype=float)
    res.metrics["step4_pooled_pass"] = float(run.step4_pooled.statistical)
    res.metrics["deterministic_check_failures"] = run.structural_failures
    disclosures = sum(len(d) for d in run.disclosures)
    res.metrics["fallback_rate"] = sum(p.fallbacks for p in run.plans) / max(disclosures, 1)
    res.metrics["forced_disclosure_rate"] = sum(p.forced for p in run.plans) / max(disclosures, 1)
    res.metrics["infeasible_group_probability"] = chang_attacks.infeasible_probability(params.group_size, params.eta)
    res.metrics["raw_key_recovery"] = float(np.array_equal(run.raw_key, run.bob_raw_key))
    res.metrics["raw_key_bit_agreement"] = (run.raw_key == run.bob_raw_key).astype(float)
    if len(run.raw_key) >= params.key_bits_needed:
        key = postprocess.fold_bits(run.bob_raw_key, run.raw_key, params.substring_count, params.database_size)
        j = int(rng.integers(params.database_size))
        i = int(rng.integers(params.database_size))
        shift = postprocess.announce_shift(j, i, "chang")
        ciphertext = postprocess.encrypt_database(db, key, shift, "chang")
        recovered = postprocess.recoverable_items(ciphertext, key, shift, "chang")
        res.metrics["database_recovery_fraction"] = sum(int(db[t] == v) for t, v in recovered.items()) / len(db)
    res.verdicts["undetected_deterministic"] = run.structural_failures == 0
    return res


def _discriminate(config: ExperimentConfig, rng: np.random.Generator) -> TrialResult:
    rounds = int(config.resolved_params()["raw_length"])
    pair = yu_attacks.discrimination_pair(0)
    res = TrialResult()
    res.metrics["helstrom_error"] = helstrom_error(pair)
    can_c, can_in = unambiguous_feasible(pair.rho1, pair.rho2)
    res.verdicts["unambiguous_identify_conclusive"] = can_c
    res.verdicts["unambiguous_identify_inconclusive"] = can_in
    # sample a hypothesis by prior, then a pure member of that ensemble; effect1 guesses "conclusive"
    meas = helstrom_measurement(pair)
    table = yu_attacks.branch_table()
    members = [(sym, s) for sym in yu_protocol.PreparedSymbol for s in (0,) if table.p_s1[sym] < 1]
    weights = np.array([0.25 * (1 - table.p_s1[sym]) for sym, _ in members])
    weights /= weights.sum()
    p_guess_c = np.array([meas.probability_first(table.residuals[sym, s]) for sym, s in members])
    truth_c = np.array([s != sym.bit() for sym, s in members])
    idx = rng.choice(len(members), size=rounds, p=weights)
    guess_c = rng.random(rounds) < p_guess_c[idx]
    res.metrics["mc_guess_error"] = (guess_c != truth_c[idx]).astype(float)
    return res


RUNNERS: dict[str, Callable[[ExperimentConfig, np.random.Generator], TrialResult]] = {
    "yu-honest": _yu_honest,
    "yu-bob-two-step": _yu_two_step,
    "yu-alice-inconclusive-checks": _yu_alice_cheats,
    "chang-honest": _chang_honest,
    "chang-bob-counting": _chang_counting,
    "chang-alice-store-fake": _chang_store_fake,
    "discriminate": _discriminate,
}


def _run_trial(config: ExperimentConfig, index: int) -> TrialResult:
    return RUNNERS[config.scenario](config, trial_rng(config.master_seed, index))


def run_scenario(config: ExperimentConfig, timing: bool = True) -> ExperimentReport:
    """Validate ``config``, run its trials and aggregate them in trial order."""
    config.validate()
    start = time.perf_counter()
    job = partial(_run_trial, config)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(job, range(config.trials)))
    else:
        results = [job(i) for i in range(config.trials)]

    metrics: dict[str, Metric] = {}
    verdicts: dict[str, bool] = {}
    for res in results:
        for name, values in res.metrics.items():
            metrics.setdefault(name, Metric()).add(values)
        for name, ok in res.verdicts.items():
            verdicts[name] = verdicts.get(name, True) and bool(ok)
    elapsed = (time.perf_counter() - start) * 1000 if timing else None
    return ExperimentReport(
        config=config.to_dict(),
        metrics={k: metrics[k].as_dict() for k in sorted(metrics)},
        verdicts=dict(sorted(verdicts.items())),
        seed=config.master_seed,
        duration_ms=elapsed,
    )


def summarize(reports: Iterable[ExperimentReport]) -> str:
    """CSV table with one row per report: parameters, then metric means and stderrs."""
    reports = list(reports)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if not reports:
        writer.writerow(["scenario", "seed", "trials"])
        return buf.getvalue()
    scenarios = {r.scenario for r in reports}
    if len(scenarios) > 1:
        raise ValueError(f"cannot tabulate different scenarios together: {', '.join(sorted(scenarios))}")
    param_names = sorted({k for r in reports for k in r.config["params"]})
    metric_names = sorted({k for r in reports for k in r.metrics})
    header = ["scenario", "seed", "trials", *param_names]
    for m in metric_names:
        header += [f"{m}_mean", f"{m}_stderr"]
    writer.writerow(header)
    for r in reports:
        row = [r.scenario, r.seed, r.config["trials"], *(r.config["params"].get(p, "") for p in param_names)]
        for m in metric_names:
            stat = r.metrics.get(m)
            row += [repr(stat["mean"]), repr(stat["stderr"])] if stat else ["", ""]
        writer.writerow(row)
    return buf.getvalue()
