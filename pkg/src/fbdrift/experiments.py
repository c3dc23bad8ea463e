"""Config-driven experiment runners.

Each runner consumes a validated config document and produces
ResultRecords plus CSV tables.  Sweep-style experiments honor the
worker count (order-preserving thread map over independent sweep
points); everything else is a single deterministic computation, so
results never depend on the worker layout.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from . import drifts, flows, formbound, krylov, mollify, pde, rng, sde, studies
from .records import ResultRecord


@dataclass
class ExperimentContext:
    experiment_id: str
    digest: str
    seed: int
    workers: int = 1
    started: float = field(default_factory=time.monotonic)

    def record(self, metric, value, stderr=None, params=None) -> ResultRecord:
        rec = ResultRecord(self.experiment_id, self.digest, metric, value,
                           stderr=stderr, params=params or {})
        rec.wall_time = time.monotonic() - self.started
        rec.timestamp = time.time()
        return rec


def _thread_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------


def run_formbound(doc: dict, ctx: ExperimentContext):
    spec = cfgmod.drift_from(doc["drift"])
    fam = cfgmod.family_from(doc.get("family"), spec.dimension,
                             float(doc.get("family_radius",
                                           drifts.support_radius(spec))))
    times = [float(t) for t in doc.get("times", [0.0])]
    rep = formbound.estimate_form_bound(spec, fam, times)
    recs = [ctx.record("formbound.delta_hat", rep.delta_hat),
            ctx.record("formbound.argmax", f"{rep.argmax_id[0]}@t={rep.argmax_id[1]:g}")]
    rows = [(m, t, v) for (m, t, v) in rep.quotients]
    return recs, {"quotients": (["member", "t", "quotient"], rows)}


def run_mollify(doc: dict, ctx: ExperimentContext):
    spec = cfgmod.drift_from(doc["drift"])
    sched = cfgmod.schedule_from(doc.get("schedule"))
    fam = cfgmod.family_from(doc.get("family", "radial"), spec.dimension,
                             float(doc.get("family_radius",
                                           drifts.support_radius(spec))))
    rep = mollify.build_approx_sequence(
        spec, sched, float(doc.get("box_half_width", drifts.support_radius(spec))),
        float(doc.get("horizon", 1.0)), family=fam)
    recs = [ctx.record("mollify.base_delta_hat", rep.base_delta_hat),
            ctx.record("mollify.final_distance", rep.final_distance),
            ctx.record("mollify.converged", rep.converged),
            ctx.record("mollify.form_bounds_ok", rep.all_form_bounds_ok)]
    for row in rep.rows:
        recs.append(ctx.record("mollify.l2_distance", row.l2_distance,
                               params={"m": row.level}))
        recs.append(ctx.record("mollify.delta_hat", row.delta_hat,
                               params={"m": row.level}))
    rows = [(r.level, r.width, r.mass_scale, r.l2_distance, r.delta_hat,
             r.sup_norm, r.form_bound_ok) for r in rep.rows]
    return recs, {"levels": (["m", "eps", "c_m", "l2_distance", "delta_hat",
                              "sup_norm", "form_bound_ok"], rows)}


def _cascade_config(doc: dict) -> pde.CascadeConfig:
    spec = cfgmod.drift_from(doc["drift"])
    sources = cfgmod.sources_from(doc["sources"])
    fam = cfgmod.family_from(doc.get("family"), spec.dimension,
                             float(doc.get("family_radius", 2.0)))
    return pde.CascadeConfig(
        drift=spec, sources=sources, alphas=[int(a) for a in doc["alphas"]],
        t0=float(doc.get("t0", 0.0)), t1=float(doc["t1"]),
        grid=cfgmod.grid_from(doc.get("grid", {})),
        eps_q=doc.get("eps_q"), beta_q=doc.get("beta_q"),
        delta_hat=doc.get("delta_hat"), nu_hat=doc.get("nu_hat"),
        delta_max=float(doc.get("delta_max", 0.05)),
        nu_max=float(doc.get("nu_max", 0.05)),
        disc_slack=float(doc.get("disc_slack", 0.25)), family=fam)


def run_pde_cascade(doc: dict, ctx: ExperimentContext):
    cfg = _cascade_config(doc)
    res = pde.run_cascade(cfg)
    recs = [ctx.record("cascade.delta_hat", res.delta_hat),
            ctx.record("cascade.nu_hat", res.nu_hat),
            ctx.record("cascade.c1", res.c1),
            ctx.record("cascade.c2", res.c2),
            ctx.record("cascade.k_bound", res.k_bound),
            ctx.record("cascade.u2_terminal", res.u2_terminal),
            ctx.record("cascade.e_u", res.e_u),
            ctx.record("cascade.link_ok", res.link_ok),
            ctx.record("cascade.ratios_ok", res.ratios_ok),
            ctx.record("cascade.boundary_leak", res.boundary_leak)]
    if res.k_hat is not None:
        recs.append(ctx.record("cascade.k_hat", res.k_hat))
    for k, e in sorted(res.energies.items()):
        recs.append(ctx.record("cascade.energy", e, params={"k": k}))
    for k, r in sorted(res.ratios.items()):
        recs.append(ctx.record("cascade.ratio", r, params={"k": k}))
    tables = {}
    lengths = [float(x) for x in doc.get("lengths", [])]
    ns = [int(x) for x in doc.get("ns", [])]
    if lengths or ns:
        import copy

        def run_len(span):
            c = copy.copy(cfg)
            c.t1 = cfg.t0 + span
            return pde.run_cascade(c).u2_terminal

        def run_n(n):
            c = copy.copy(cfg)
            c.sources = list(cfg.sources[:n])
            c.alphas = list(cfg.alphas[:n])
            return pde.run_cascade(c).u2_terminal

        rows = []
        if lengths:
            u2s = _thread_map(run_len, lengths, ctx.workers)
            for span, u2 in zip(lengths, u2s):
                recs.append(ctx.record("prop1.u2_by_length", u2,
                                       params={"length": span}))
                rows.append(("length", span, u2))
            pos = [u > 0 for u in u2s]
            if all(pos) and len(lengths) >= 2:
                slope = float(np.polyfit(np.log(lengths), np.log(u2s), 1)[0])
                recs.append(ctx.record("prop1.slope_in_length", slope))
        if ns:
            u2n = _thread_map(run_n, ns, ctx.workers)
            for n, u2 in zip(ns, u2n):
                recs.append(ctx.record("prop1.u2_by_n", u2, params={"n": n}))
                rows.append(("n", n, u2))
            for a, b_, n in zip(u2n[1:], u2n[:-1], ns[1:]):
                if b_ > 0:
                    recs.append(ctx.record("prop1.n_decay_factor", a / b_,
                                           params={"n": n}))
        tables["sweep"] = (["axis", "value", "u2_terminal"], rows)
    return recs, tables


def run_simulate(doc: dict, ctx: ExperimentContext):
    spec = cfgmod.drift_from(doc["drift"])
    x0 = cfgmod.point_from(doc["x0"], spec.dimension)
    ens = sde.simulate_ensemble(
        spec, x0, float(doc.get("s", 0.0)), float(doc["horizon"]),
        float(doc["dt"]), int(doc["n_paths"]), ctx.seed,
        store_paths=bool(doc.get("store_paths", True)))
    recs = [ctx.record("simulate.increment_checksum", ens.increment_checksum())]
    XT = ens.paths[..., -1, :] - x0
    M = ens.n_paths
    for j in range(spec.dimension):
        recs.append(ctx.record("simulate.mean", float(XT[..., j].mean()),
                               stderr=float(XT[..., j].std(ddof=1) / np.sqrt(M)),
                               params={"coord": j}))
        v = XT[..., j].var(ddof=1)
        recs.append(ctx.record("simulate.var", float(v),
                               stderr=float(v * np.sqrt(2.0 / (M - 1))),
                               params={"coord": j}))
    if doc.get("export_dir"):
        ens.save(doc["export_dir"])
    return recs, {}


def run_krylov(doc: dict, ctx: ExperimentContext):
    spec = cfgmod.drift_from(doc["drift"])
    x0 = cfgmod.point_from(doc["x0"], spec.dimension)
    ens = sde.simulate_ensemble(spec, x0, 0.0, float(doc["horizon"]),
                                float(doc["dt"]), int(doc["n_paths"]), ctx.seed)
    h = cfgmod.test_field_from(doc["h"])
    recs = []
    if "mu" in doc:
        rep = krylov.krylov_functional(ens, h, float(doc["mu"]))
        recs += [ctx.record("krylov.estimate", rep.estimate, stderr=rep.stderr,
                            params={"mu": rep.exponent}),
                 ctx.record("krylov.ref_norm", rep.ref_norm,
                            params={"mu": rep.exponent}),
                 ctx.record("krylov.ratio", rep.ratio, params={"mu": rep.exponent})]
    if "q" in doc:
        g = cfgmod.drift_from(doc["g"]) if doc.get("g") else None
        delta_hat = doc.get("delta_hat")
        if delta_hat is None:
            delta_hat = formbound.estimate_form_bound(spec).delta_hat
        rep = krylov.krylov_g_functional(ens, g, h, float(doc["q"]),
                                         float(delta_hat))
        recs += [ctx.record("krylov_g.estimate", rep.estimate, stderr=rep.stderr,
                            params={"q": rep.exponent}),
                 ctx.record("krylov_g.ref_norm", rep.ref_norm,
                            params={"q": rep.exponent}),
                 ctx.record("krylov_g.ratio", rep.ratio, params={"q": rep.exponent})]
    return recs, {}


def run_flow(doc: dict, ctx: ExperimentContext):
    spec = cfgmod.drift_from(doc["drift"])
    lat = doc.get("lattice", {})
    starts = flows.cubic_lattice(float(lat.get("half_extent", 0.8)),
                                 int(lat.get("per_axis", 5)), spec.dimension)
    r_values = tuple(int(r) for r in doc.get("r_values", (1, 2)))
    rep = flows.flow_decay_study(
        spec, starts, int(doc["n_paths"]), float(doc["horizon"]),
        float(doc["dt"]), ctx.seed, r_values=r_values,
        s_list=[float(s) for s in doc.get("s_list", [])],
        n_snapshots=int(doc.get("n_snapshots", 12)))
    recs = [ctx.record("flow.degenerate", rep.degenerate)]
    rows = []
    for r in r_values:
        recs.append(ctx.record("prop2i.envelope_k1", rep.envelopes[r],
                               params={"r": r}))
        for t, v in zip(rep.times, rep.norms[r]):
            recs.append(ctx.record("prop2i.norm", v, params={"r": r, "t": float(t)}))
            rows.append((r, float(t), v,
                         rep.envelopes[r] * float(t) ** (1.0 / (2 * r))))
    return recs, {"flow_norms": (["r", "t", "norm", "envelope"], rows)}


def run_regularity(doc: dict, ctx: ExperimentContext):
    spec = cfgmod.drift_from(doc["drift"])
    x0 = cfgmod.point_from(doc["x0"], spec.dimension)
    horizon = float(doc["horizon"])
    dt = float(doc["dt"])
    M = int(doc["n_paths"])
    r = int(doc.get("r", spec.dimension + 2))
    base = sde.simulate_ensemble(spec, x0, 0.0, horizon, dt, M, ctx.seed)
    x_gaps = [float(g) for g in doc.get("x_gaps", [])]
    s_gaps = [float(g) for g in doc.get("s_gaps", [])]
    t_gaps = [float(g) for g in doc.get("t_gaps", [])]
    x_keyed = None
    if x_gaps:
        _, x_keyed = studies.build_space_coupled(
            spec, x0, x_gaps, doc.get("direction", [1.0, 0.0, 0.0]),
            0.0, horizon, dt, M, ctx.seed)
    s_keyed = None
    if s_gaps:
        built = studies.build_start_coupled(spec, x0, [0.0] + s_gaps, horizon,
                                            dt, M, ctx.seed)
        base = built[0.0]
        s_keyed = {s: built[s] for s in s_gaps}
    rep = studies.regularity_statistics(base, spec, r, t_gaps=t_gaps,
                                        x_ensembles=x_keyed, s_ensembles=s_keyed,
                                        anchors=doc.get("anchors", (0.0,)))
    recs = [ctx.record("regularity.joint_constant", rep.joint_constant),
            ctx.record("regularity.increment_checksum", rep.increment_checksum)]
    for mode, slope in rep.slopes.items():
        recs.append(ctx.record("regularity.slope", slope, params={"mode": mode}))
    rows = [(p.mode, p.gap, p.moment, p.stderr, p.rhs, p.under_resolved)
            for p in rep.points]
    return recs, {"moduli": (["mode", "gap", "moment", "stderr", "rhs",
                              "under_resolved"], rows)}


def run_converge(doc: dict, ctx: ExperimentContext):
    spec = cfgmod.drift_from(doc["drift"])
    sched = cfgmod.schedule_from(doc.get("schedule"))
    rep = studies.convergence_study(
        spec, sched, cfgmod.point_from(doc["x0"], spec.dimension),
        float(doc["horizon"]), float(doc["dt"]), int(doc["n_paths"]), ctx.seed,
        kappa=float(doc.get("kappa", 0.01)), theta=doc.get("theta"),
        n_grid=int(doc.get("n_grid", 48)))
    recs = [ctx.record("converge.fitted_c1", rep.fitted_c1),
            ctx.record("converge.medians_non_increasing",
                       rep.medians_non_increasing_after_first),
            ctx.record("converge.increment_checksum", rep.increment_checksum)]
    rows = []
    for row in rep.rows:
        recs.append(ctx.record("converge.median_sup_gap", row.median_sup_gap,
                               params={"m_lo": row.level_lo, "m_hi": row.level_hi}))
        recs.append(ctx.record("converge.i1_ratio", row.ratio,
                               params={"m_lo": row.level_lo, "m_hi": row.level_hi}))
        rows.append((row.level_lo, row.level_hi, row.median_sup_gap,
                     row.p95_sup_gap, row.i1_estimate, row.i1_stderr,
                     row.rho_bound, row.ratio))
    return recs, {"pairs": (["m_lo", "m_hi", "median_sup_gap", "p95_sup_gap",
                             "i1_estimate", "i1_stderr", "rho_bound", "ratio"],
                            rows)}


def run_criticality(doc: dict, ctx: ExperimentContext):
    deltas = [float(x) for x in doc["deltas"]]
    x0 = cfgmod.point_from(doc["x0"])

    def one(delta):
        rep = studies.criticality_sweep(
            [delta], x0, float(doc["horizon"]), float(doc["dt"]),
            int(doc["n_paths"]), ctx.seed, float(doc["collapse_radius"]),
            level=float(doc.get("level", 100.0)),
            width=float(doc.get("width", 0.02)),
            cutoff_radius=float(doc.get("cutoff_radius", 2.0)))
        return rep.rows[0]

    rows = _thread_map(one, deltas, ctx.workers)
    recs = []
    table = []
    for row in rows:
        recs.append(ctx.record("criticality.collapse_fraction",
                               row.collapse_fraction, stderr=row.stderr,
                               params={"delta": row.delta}))
        table.append((row.delta, row.collapse_fraction, row.stderr,
                      row.end_fraction, row.end_stderr))
    fr = [r.collapse_fraction for r in rows]
    recs.append(ctx.record("criticality.monotone",
                           bool(all(fr[i + 1] >= fr[i] - 1e-12
                                    for i in range(len(fr) - 1)))))
    return recs, {"sweep": (["delta", "collapse_fraction", "stderr",
                             "end_fraction", "end_stderr"], table)}


RUNNERS = {
    "formbound": run_formbound,
    "mollify": run_mollify,
    "pde-cascade": run_pde_cascade,
    "simulate": run_simulate,
    "krylov": run_krylov,
    "flow": run_flow,
    "regularity": run_regularity,
    "converge": run_converge,
    "criticality": run_criticality,
}


def run_experiment(doc: dict, ctx: ExperimentContext):
    return RUNNERS[doc["experiment"]](doc, ctx)
