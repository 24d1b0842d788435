"""Experiment orchestration: the federated round loop, metrics and outputs.

One run trains a global model with M clients for K rounds.  Client ids are
1..M.  Each round every client starts from the broadcast weights, takes tau
local SGD steps and submits ``(w_k - w_local) / eta``; the server aggregates
the submissions and steps ``w_{k+1} = w_k - eta * update``.  The attacker
(one of the clients) poisons its submission and, after aggregation, inverts
the observed model difference to reconstruct its peers' batches.
"""

from __future__ import annotations

import csv
import dataclasses
import inspect
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import adversary, aggregation, bound, model, privacy
from .adversary import AttackConfig
from .data import BatchIterator, Dataset, dirichlet_partition, downsample, load_idx
from .errors import ConfigError, CuriousFLError, NumericError
from .model import ModelSpec
from .privacy import DpConfig
from .rng import stream

log = logging.getLogger(__name__)

CSV_HEADER = ("round", "train_loss", "test_acc", "rmse_mean", "rmse_std", "surrogate_q",
              "selected_ids", "attacker_selected", "bound_value", "wall_ms")

# arguments the harness supplies itself, never read from config
_HARNESS_ARGS = {"updates", "rng", "reference", "round_idx", "total_rounds"}


@dataclass
class DataConfig:
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    downsample: int = 2
    n_classes: int = 10


@dataclass
class ModelConfig:
    arch: str = "mlp"
    hidden: tuple[int, ...] = (64,)
    activation: str = "relu"
    init: str = "kaiming_uniform"
    channels: tuple[int, ...] = (4, 8)
    kernel: int = 3
    stride: int = 2

    def build(self, d_in: int, n_classes: int) -> ModelSpec:
        if self.arch == "mlp":
            return model.mlp(d_in, n_classes, tuple(self.hidden), self.activation, self.init)
        if self.arch == "convnet":
            side = int(round(math.sqrt(d_in)))
            if side * side != d_in:
                raise ConfigError(f"convnet needs square inputs, d_in={d_in}")
            return model.convnet(side, n_classes, tuple(self.channels), self.kernel, self.stride,
                                 tuple(self.hidden), self.activation, self.init)
        raise ConfigError(f"model.arch must be 'mlp' or 'convnet', got {self.arch!r}")


@dataclass
class BoundConfig:
    probes: int = 2  # each L_psi probe costs two reconstructions
    recon_iterations: int = 50
    grad_sample: int = 256


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    n_clients: int = 4
    rounds: int = 10
    local_steps: int = 1
    batch_size: int = 4
    eta: float = 0.1
    alpha: float = 0.1
    per_client: int = 100
    seed: int = 0
    rule: str = "fedavg"
    rule_params: dict = field(default_factory=dict)
    dp: DpConfig = field(default_factory=DpConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    attacker_id: int = 1
    victims: tuple[int, ...] = ()  # empty means every benign client
    reference_size: int = 200
    bound: BoundConfig = field(default_factory=BoundConfig)
    threads: int = 1
    record_wall_time: bool = False
    out_dir: str = "runs/out"

    def __post_init__(self):
        if self.n_clients < 1:
            raise ConfigError("experiment.clients must be >= 1")
        if self.rounds < 1:
            raise ConfigError("experiment.rounds must be >= 1")
        if self.local_steps < 1:
            raise ConfigError("experiment.local_steps must be >= 1")
        if self.batch_size < 1 or self.per_client < 1:
            raise ConfigError("batch size and examples per client must be >= 1")
        if self.eta <= 0:
            raise ConfigError("experiment.eta must be positive")
        if not 1 <= self.attacker_id <= self.n_clients:
            raise ConfigError(f"attacker id must lie in 1..{self.n_clients}")
        bad = [v for v in self.victims if not 1 <= v <= self.n_clients or v == self.attacker_id]
        if bad:
            raise ConfigError(f"victims {bad} are not benign client ids")
        if self.threads < 1:
            raise ConfigError("experiment.threads must be >= 1")
        if self.bound.probes == 1 or self.bound.probes < 0:
            raise ConfigError("bound.probes must be 0 (off) or >= 2")
        fn = aggregation.RULES.get(self.rule)
        if fn is None:
            raise ConfigError(f"unknown aggregation rule {self.rule!r}; choose from {sorted(aggregation.RULES)}")
        allowed = set(inspect.signature(fn).parameters) - _HARNESS_ARGS
        extra = set(self.rule_params) - allowed
        if extra:
            raise ConfigError(f"aggregation.{self.rule} does not take {sorted(extra)}; allowed: {sorted(allowed)}")

    @property
    def victim_ids(self) -> list[int]:
        if self.victims:
            return sorted(self.victims)
        return [i for i in range(1, self.n_clients + 1) if i != self.attacker_id]


@dataclass
class RoundMetrics:
    round: int
    train_loss: float
    test_acc: float
    rmse_mean: float = float("nan")
    rmse_std: float = float("nan")
    surrogate_q: str = ""
    selected_ids: tuple[int, ...] = ()
    attacker_selected: bool = False
    bound_value: float = float("nan")
    wall_ms: float = 0.0


@dataclass
class RunResult:
    metrics: list[RoundMetrics]
    summary: dict
    params: np.ndarray


# ---------------------------------------------------------------------------
# pieces


def evaluate_model(spec: ModelSpec, params: np.ndarray, test: Dataset) -> float:
    """Top-1 accuracy; argmax ties resolve to the lowest class."""
    if len(test) == 0:
        return float("nan")
    return float(np.mean(model.predict(spec, params, test.images) == test.labels))


def load_datasets(cfg: DataConfig) -> tuple[Dataset, Dataset]:
    train = load_idx(cfg.train_images, cfg.train_labels, "train", cfg.n_classes)
    test = load_idx(cfg.test_images, cfg.test_labels, "test", cfg.n_classes)
    if cfg.downsample > 1:
        train, test = downsample(train, cfg.downsample), downsample(test, cfg.downsample)
    return train, test


def _local_update(spec, w, x_batches, y_batches, eta, dp: DpConfig, rng):
    """tau local SGD steps from ``w``; returns ``(w - w_local) / eta``.

    That delta is the sum of the step gradients, accumulated directly so a
    single step hands back its gradient bit for bit.
    """
    local = w.copy()
    total = np.zeros_like(w)
    for xb, yb in zip(x_batches, y_batches):
        if dp.enabled:
            per = model.per_example_grads(spec, local, xb, yb)
            g = privacy.privatize_batch(per, len(xb), dp.clip, dp.sigma, rng)
        else:
            g = model.batch_grad(spec, local, xb, yb)
        local = local - eta * g
        total = total + g
    return total


class _Client:
    def __init__(self, cid: int, indices: np.ndarray, train: Dataset):
        self.cid = cid
        self.indices = indices
        self.train = train

    def batches(self, seed: int, round_idx: int, steps: int, batch_size: int):
        it = BatchIterator(self.indices, batch_size, stream(seed, "batch", round_idx, self.cid))
        idx = [next(it) for _ in range(steps)]
        return [self.train.images[i] for i in idx], [self.train.labels[i] for i in idx]


def _poisoned_update(cfg: ExperimentConfig, spec, w, client: _Client, round_idx: int, pattern):
    """The attacker's submission: an honest protocol step, then its poison."""
    a = cfg.attack
    xs, ys = client.batches(cfg.seed, round_idx, cfg.local_steps, cfg.batch_size)
    if a.poison == "backdoor":
        pairs = [adversary.poison_backdoor(x, y, pattern, a.backdoor_label) for x, y in zip(xs, ys)]
        xs, ys = [p[0] for p in pairs], [p[1] for p in pairs]
    honest = _local_update(spec, w, xs, ys, cfg.eta, cfg.dp, stream(cfg.seed, "dp", round_idx, client.cid))
    if a.poison == "sign_flip":
        return adversary.poison_sign_flip(honest, a.flip_scale)
    if a.poison == "gaussian":
        return adversary.poison_gaussian(honest.size, a.gaussian_sigma,
                                         stream(cfg.seed, "poison", round_idx, client.cid))
    return honest


def _rule_kwargs(cfg: ExperimentConfig, round_idx: int, reference_update):
    params = dict(cfg.rule_params)
    accepted = inspect.signature(aggregation.RULES[cfg.rule]).parameters
    if "rng" in accepted:
        params["rng"] = stream(cfg.seed, "aggregate", round_idx)
    if "reference" in accepted:
        params["reference"] = reference_update
    if "round_idx" in accepted:
        params["round_idx"] = round_idx
    if "total_rounds" in accepted:
        params["total_rounds"] = cfg.rounds
    return params


def _reconstruction_due(cfg: ExperimentConfig, round_idx: int) -> bool:
    a = cfg.attack
    if not a.enabled or cfg.n_clients < 1:
        return False
    r = round_idx + 1  # rounds are reported 1-based
    return r >= a.start_round and (r - a.start_round) % a.cadence == 0


def preflight(out_dir) -> Path:
    """Create ``out_dir`` and prove it is writable before any work starts."""
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write_probe"
    with open(probe, "w") as fh:
        fh.write("ok")
    probe.unlink()
    return path


# ---------------------------------------------------------------------------
# the round loop


def run_experiment(cfg: ExperimentConfig, train: Dataset | None = None,
                   test: Dataset | None = None) -> RunResult:
    """Run every round and return metrics plus a JSON-ready summary.

    A module error aborts the loop; the summary then records the failing
    round and the error, and the exception is re-raised as ``exc.run_result``
    carrying the partial result.
    """
    if train is None or test is None:
        train, test = load_datasets(cfg.data)
    spec = cfg.model.build(train.d_in, train.n_classes)
    M, seed = cfg.n_clients, cfg.seed

    # a held-out server reference set, disjoint from every client and the test set
    order = stream(seed, "reference").permutation(len(train))
    ref_n = cfg.reference_size if cfg.rule == "balance" else 0
    ref_idx = np.sort(order[:ref_n])
    pool = np.sort(order[ref_n:])
    plan = dirichlet_partition(train, M, cfg.alpha, cfg.per_client, stream(seed, "partition"), pool=pool)
    clients = [_Client(m + 1, plan.indices[m], train) for m in range(M)]
    attacker = clients[cfg.attacker_id - 1]
    all_idx = np.concatenate(plan.indices)
    train_x, train_y = train.images[all_idx], train.labels[all_idx]

    w = model.init_params(spec, stream(seed, "init"))
    pattern = adversary.backdoor_pattern(spec.d_in, cfg.attack.backdoor_size, cfg.attack.backdoor_value)
    decoder = None
    if cfg.attack.enabled and cfg.attack.dummy == "decoder":
        a = cfg.attack
        decoder = adversary.pretrain_decoder(train.images[attacker.indices], stream(seed, "decoder"),
                                             a.latent_dim, a.decoder_hidden, a.decoder_epochs, a.decoder_lr)

    f0 = model.loss(spec, w, train_x, train_y)
    metrics: list[RoundMetrics] = []
    trace = [w.copy()]
    losses = [f0]
    observations = []  # (round, w_k, g_hat, own, rmse per pair)
    summary = {
        "seed": seed,
        "rounds_requested": cfg.rounds,
        "rounds_completed": 0,
        "n_params": spec.n_params,
        "d_in": spec.d_in,
        "initial_train_loss": f0,
        "partition_substitutions": int(plan.substitutions),
        "failed_round": None,
        "error": None,
    }
    pool_exec = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 else None
    try:
        for k in range(cfg.rounds):
            t0 = time.perf_counter()

            def client_job(c: _Client, w_k=w, k=k):
                if c is attacker:
                    return _poisoned_update(cfg, spec, w_k, c, k, pattern)
                xs, ys = c.batches(seed, k, cfg.local_steps, cfg.batch_size)
                return _local_update(spec, w_k, xs, ys, cfg.eta, cfg.dp, stream(seed, "dp", k, c.cid))

            if pool_exec is not None:
                # collected in id order whatever order they finish in
                updates = list(pool_exec.map(client_job, clients))
            else:
                updates = [client_job(c) for c in clients]
            reference_update = None
            if cfg.rule == "balance":
                it = BatchIterator(ref_idx, cfg.batch_size, stream(seed, "server", k))
                idx = [next(it) for _ in range(cfg.local_steps)]
                reference_update = _local_update(spec, w, [train.images[i] for i in idx],
                                                 [train.labels[i] for i in idx], cfg.eta, DpConfig(), None)
            ups = aggregation.ClientUpdateSet(k, [c.cid for c in clients], np.stack(updates), cfg.eta)
            outcome = aggregation.aggregate(cfg.rule, ups, **_rule_kwargs(cfg, k, reference_update))
            w_next = w - cfg.eta * outcome.update
            if not np.all(np.isfinite(w_next)):
                raise NumericError(f"global model became non-finite in round {k + 1}")

            row = RoundMetrics(
                round=k + 1,
                train_loss=model.loss(spec, w_next, train_x, train_y),
                test_acc=evaluate_model(spec, w_next, test),
                selected_ids=tuple(outcome.selected),
                attacker_selected=cfg.attacker_id in outcome.selected,
            )
            if _reconstruction_due(cfg, k):
                # a tau-step update sums tau gradients; the attacker knows tau and
                # inverts the per-step average
                g_hat = adversary.observe_global_grad(w, w_next, cfg.eta) / cfg.local_steps
                own = updates[cfg.attacker_id - 1] / cfg.local_steps if cfg.attack.known_own_update else None
                state = adversary.reconstruct(g_hat, spec, w, cfg.attack, stream(seed, "reconstruct", k),
                                              M, decoder=decoder, own_update=own)
                truth = np.concatenate([np.concatenate(clients[v - 1].batches(seed, k, cfg.local_steps,
                                                                              cfg.batch_size)[0])
                                        for v in cfg.victim_ids]) if cfg.victim_ids else np.zeros((0, spec.d_in))
                per, mean = adversary.rmse_eval(state.images, truth)
                row.rmse_mean = mean
                row.rmse_std = float(per.std()) if per.size else float("nan")
                row.surrogate_q = state.surrogate
                observations.append((k, w.copy(), g_hat, own, per))
            if cfg.record_wall_time:
                row.wall_ms = (time.perf_counter() - t0) * 1e3
            metrics.append(row)
            w = w_next
            trace.append(w.copy())
            losses.append(row.train_loss)
            summary["rounds_completed"] = k + 1
    except (CuriousFLError, ArithmeticError, ValueError) as exc:
        summary["failed_round"] = len(metrics) + 1
        summary["error"] = f"{type(exc).__name__}: {exc}"
        exc.run_result = RunResult(metrics, _finish_summary(summary, metrics, cfg), w)
        raise
    finally:
        if pool_exec is not None:
            pool_exec.shutdown()

    _fill_bound(cfg, spec, w, trace, losses, observations, metrics, summary, train_x, train_y, decoder)
    return RunResult(metrics, _finish_summary(summary, metrics, cfg), w)


def _fill_bound(cfg, spec, w, trace, losses, observations, metrics, summary, train_x, train_y, decoder):
    """Estimate the bound's constants once and fill ``bound_value`` per round."""
    if cfg.bound.probes < 2 or not observations:
        summary["bound"] = None
        return
    seed = cfg.seed
    rng = stream(seed, "bound")
    n = min(cfg.bound.grad_sample, len(train_x))
    sample = rng.choice(len(train_x), size=n, replace=False)
    xs, ys = train_x[sample], train_y[sample]
    k0, w0, g0, own0, per0 = observations[0]
    probe_cfg = AttackConfig(**{**asdict(cfg.attack), "restarts": 1,
                                "surrogates": (cfg.attack.surrogates[0],),
                                "iterations": cfg.bound.recon_iterations})

    def recon(g):
        st = adversary.reconstruct(g, spec, w0, probe_cfg, stream(seed, "bound-recon", k0), cfg.n_clients,
                                   decoder=decoder, own_update=own0)
        return st.images

    est = bound.estimate_constants(lambda p: model.batch_grad(spec, p, xs, ys), trace, recon, g0,
                                   losses, per0, train_x, cfg.bound.probes, rng)
    sigma = cfg.dp.sigma if cfg.dp.enabled else 0.0
    for row in metrics:
        if math.isnan(row.rmse_mean):
            continue
        inp = bound.BoundInputs(
            delta=bound.objective_gap(losses[0], losses[row.round]),
            L_g=max(est.L_g, 1e-12), L_psi=max(est.L_psi, 1e-12), C=cfg.dp.clip, sigma=sigma,
            M=cfg.n_clients, B=cfg.batch_size, d=spec.n_params, d_in=spec.d_in,
            upsilon=est.upsilon, e0=est.e0, k=row.round, eta=cfg.eta,
        )
        row.bound_value = bound.theorem_bound(inp)
    summary["bound"] = {
        "L_g": est.L_g, "L_psi": est.L_psi, "delta_final": est.delta, "e0": est.e0,
        "upsilon": est.upsilon, "assumption2_violated": est.assumption2_violated, "probes": est.n_probes,
    }


def _finish_summary(summary: dict, metrics: list[RoundMetrics], cfg: ExperimentConfig) -> dict:
    summary = dict(summary)
    summary["rounds"] = len(metrics)
    summary["final_test_acc"] = metrics[-1].test_acc if metrics else None
    summary["final_train_loss"] = metrics[-1].train_loss if metrics else None
    rm = [m.rmse_mean for m in metrics if not math.isnan(m.rmse_mean)]
    summary["rmse_mean_over_rounds"] = float(np.mean(rm)) if rm else None
    summary["attacker_selected_rounds"] = sum(m.attacker_selected for m in metrics)
    summary["rule"] = cfg.rule
    summary["poison"] = cfg.attack.poison
    if cfg.dp.enabled:
        q = min(1.0, cfg.batch_size / cfg.per_client)
        steps = cfg.rounds * cfg.local_steps
        summary["dp"] = {"sigma": cfg.dp.sigma, "clip": cfg.dp.clip, "delta": cfg.dp.delta,
                         "epsilon": privacy.report_epsilon(cfg.dp.sigma, q, steps, cfg.dp.delta, cfg.dp.c),
                         "epsilon_note": privacy.NOMINAL_NOTE}
    else:
        summary["dp"] = None
    return summary


# ---------------------------------------------------------------------------
# outputs


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def metrics_csv(metrics: list[RoundMetrics]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_HEADER)
    for m in metrics:
        wr.writerow([
            m.round, _fmt(m.train_loss), _fmt(m.test_acc), _fmt(m.rmse_mean), _fmt(m.rmse_std),
            m.surrogate_q, " ".join(str(i) for i in m.selected_ids), _fmt(m.attacker_selected),
            _fmt(m.bound_value), _fmt(float(round(m.wall_ms, 3))),
        ])
    return buf.getvalue()


def line_chart_svg(xs, series: dict[str, list[float]], title: str, ylabel: str,
                   width: int = 480, height: int = 300) -> str:
    """A minimal standalone SVG line chart; NaN points are skipped."""
    pad = 48
    vals = [v for ys in series.values() for v in ys if v is not None and math.isfinite(v)]
    lo, hi = (min(vals), max(vals)) if vals else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    x_lo, x_hi = (min(xs), max(xs)) if xs else (0, 1)
    x_span = max(x_hi - x_lo, 1)

    def px(x):
        return pad + (x - x_lo) / x_span * (width - 2 * pad)

    def py(y):
        return height - pad - (y - lo) / (hi - lo) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">round</text>',
           f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
           f'text-anchor="middle">{escape(ylabel)}</text>',
           f'<text x="{pad - 4}" y="{py(hi) + 4:.1f}" text-anchor="end" font-size="10">{hi:.3g}</text>',
           f'<text x="{pad - 4}" y="{py(lo) + 4:.1f}" text-anchor="end" font-size="10">{lo:.3g}</text>']
    for n, (name, ys) in enumerate(series.items()):
        pts = [f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys) if y is not None and math.isfinite(y)]
        color = colors[n % len(colors)]
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * n}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def emit_outputs(metrics: list[RoundMetrics], out_dir, summary: dict | None = None) -> dict[str, Path]:
    path = preflight(out_dir)
    summary = dict(summary or {})
    summary.setdefault("rounds", len(metrics))
    files = {
        "metrics": path / "metrics.csv",
        "summary": path / "summary.json",
        "rmse_chart": path / "rmse_vs_rounds.svg",
        "accuracy_chart": path / "accuracy_vs_rounds.svg",
    }
    files["metrics"].write_text(metrics_csv(metrics))
    files["summary"].write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n")
    xs = [m.round for m in metrics]
    files["rmse_chart"].write_text(line_chart_svg(xs, {"rmse": [m.rmse_mean for m in metrics]},
                                                  "Reconstruction RMSE", "RMSE"))
    files["accuracy_chart"].write_text(line_chart_svg(xs, {"test accuracy": [m.test_acc for m in metrics]},
                                                      "Test accuracy", "accuracy"))
    return files


def run_seeds(cfg: ExperimentConfig, seeds: list[int], out_dir=None) -> list[RunResult]:
    """Repeat one config over several seeds, writing ``seed_<n>/`` per run."""
    out = preflight(out_dir or cfg.out_dir)
    train, test = load_datasets(cfg.data)
    results = []
    for s in seeds:
        run_cfg = _with_seed(cfg, s)
        target = out / f"seed_{s}" if len(seeds) > 1 else out
        preflight(target)
        try:
            res = run_experiment(run_cfg, train, test)
        except Exception as exc:
            partial = getattr(exc, "run_result", None)
            if partial is not None:
                emit_outputs(partial.metrics, target, partial.summary)
            raise
        emit_outputs(res.metrics, target, res.summary)
        results.append(res)
    if len(seeds) > 1:
        accs = [r.summary["final_test_acc"] for r in results]
        rm = [r.summary["rmse_mean_over_rounds"] for r in results]
        agg = {"seeds": list(seeds), "final_test_acc": accs,
               "final_test_acc_mean": float(np.mean(accs)),
               "rmse_mean_over_rounds": rm}
        (out / "summary.json").write_text(json.dumps(_json_safe(agg), indent=2, sort_keys=True) + "\n")
    return results


def _with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return dataclasses.replace(cfg, seed=int(seed))


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise ConfigError(f"{os.fspath(path)} does not have the metrics.csv header")
        return [dict(zip(header, row)) for row in rd]
