#include "dmplug/cli.hpp"

#include "dmplug/baseline.hpp"
#include "dmplug/config.hpp"
#include "dmplug/fixtures.hpp"
#include "dmplug/io.hpp"
#include "dmplug/metrics.hpp"
#include "dmplug/noise.hpp"
#include "dmplug/solver.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <thread>

namespace dmplug {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// blank cell for metrics that were not computed
std::string csv_cell(double v) { return std::isnan(v) ? std::string() : fmt17(v); }

// JSON has no NaN/inf; report those as null
ordered_json jnum(double v) {
    return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + p.string() + "' for writing");
    f << s;
    if (!f) throw FormatError("write failed for '" + p.string() + "'");
}

// ---------------------------------------------------------------- resolution

struct ResolvedNoise {
    std::string kind;
    double param;
};

// "default" maps to gaussian noise at sigma 0.08 for the denoising tasks and
// to clean measurements for everything else
ResolvedNoise resolve_noise_names(const ExperimentConfig& c) {
    std::string kind = c.noise.kind;
    double param = c.noise.param;
    if (kind == "default") {
        if (c.task == "denoise" || c.task == "regress") {
            kind = "gaussian_sigma";
            if (param < 0.0) param = 0.08;
        } else {
            kind = "none";
        }
    }
    return {kind, param};
}

std::optional<NoiseSpec> make_noise_spec(const ResolvedNoise& rn,
                                         const std::string& level) {
    if (rn.kind == "none") return std::nullopt;
    NoiseSpec sp;
    if (rn.kind == "gaussian_sigma") sp.kind = NoiseKind::GaussianSigma;
    else if (rn.kind == "gaussian_var") sp.kind = NoiseKind::GaussianVar;
    else if (rn.kind == "impulse") sp.kind = NoiseKind::Impulse;
    else if (rn.kind == "shot") sp.kind = NoiseKind::Shot;
    else sp.kind = NoiseKind::Speckle;
    sp.level = level == "high" ? NoiseLevel::High : NoiseLevel::Low;
    sp.param = rn.param;
    return sp;
}

struct PriorBundle {
    ScorePrior prior;
    NoiseSchedule schedule;
};

PriorBundle build_prior(const ExperimentConfig& c) {
    if (c.prior.kind == "checkpoint") {
        Checkpoint ck = load_checkpoint(c.prior.path);
        if (ck.net.data_dim != c.side * c.side)
            throw ConfigError("prior.path: checkpoint is for dimension " +
                              std::to_string(ck.net.data_dim) +
                              " but side " + std::to_string(c.side) +
                              " needs " + std::to_string(c.side * c.side));
        return {std::move(ck.net), std::move(ck.schedule)};
    }
    NoiseSchedule s = make_linear_schedule(c.schedule.T, c.schedule.beta_start,
                                           c.schedule.beta_end);
    if (c.prior.kind == "isotropic")
        return {make_isotropic_prior(c.side * c.side), std::move(s)};
    return {make_smooth_prior(c.side, c.prior.rank, c.prior.strength),
            std::move(s)};
}

EsConfig resolve_es(const ExperimentConfig& c, const ForwardOperator& op) {
    EsConfig def = default_es_config(op);
    EsConfig es;
    es.enabled = c.solver.es.enabled;
    es.window = c.solver.es.window == -1 ? def.window : c.solver.es.window;
    es.patience =
        c.solver.es.patience == -1 ? def.patience : c.solver.es.patience;
    return es;
}

ordered_json echo_config(const ExperimentConfig& c, const ResolvedNoise& rn,
                         const EsConfig* es, int actual_T) {
    ExperimentConfig e = c;
    e.noise.kind = rn.kind;
    e.noise.param = rn.param;
    if (es) {
        e.solver.es.enabled = es->enabled;
        e.solver.es.window = es->window;
        e.solver.es.patience = es->patience;
    }
    e.schedule.T = actual_T;
    return ordered_json::parse(config_to_json(e));
}

// ---------------------------------------------------------------- fixtures

struct Problem {
    ForwardOperator op; // as the solver sees it (blind variants: templates)
    Tensor x_true;
    Tensor y_clean;
    Tensor y;
    std::optional<Tensor> true_kernel;
    std::optional<Tensor> true_tilt;
};

// in-distribution ground truth: an exact prior draw for the analytic priors,
// a held-out smooth fixture image for trained checkpoints
Tensor draw_truth(const ExperimentConfig& c, const PriorBundle& pb, Rng& root) {
    if (const auto* g = std::get_if<GmmPrior>(&pb.prior)) {
        Rng r = root.derive("truth");
        return Tensor::from_data({c.side, c.side}, sample_gmm(*g, r));
    }
    uint64_t s = root.derive("truth").next_u64();
    return make_smooth_images(s, 1, c.side).images[0];
}

Problem build_problem(const ExperimentConfig& c, const PriorBundle& pb,
                      Rng& root) {
    Problem p;
    p.x_true = draw_truth(c, pb, root);
    Shape shape{c.side, c.side};

    if (c.task == "sr") {
        p.op = Downsample{c.op.factor};
    } else if (c.task == "denoise" || c.task == "regress") {
        p.op = Downsample{1}; // identity measurement
    } else if (c.task == "inpaint") {
        Rng mr = root.derive("mask");
        p.op = Inpaint{make_random_mask(shape, c.op.drop_fraction, mr)};
    } else if (c.task == "nblur") {
        p.op = NonlinearBlur{gaussian_kernel(c.op.kernel_side, c.op.kernel_sigma),
                             c.op.gamma};
    } else if (c.task == "bid") {
        p.true_kernel = gaussian_kernel(c.op.blind_side, c.op.kernel_sigma);
        p.op = BlindBlur{Tensor::zeros({c.op.blind_side, c.op.blind_side})};
    } else { // turbulence
        p.true_kernel = gaussian_kernel(c.op.blind_side, c.op.kernel_sigma);
        Rng tr = root.derive("tilt_truth");
        std::vector<double> tv(static_cast<size_t>(c.side) * c.side * 2);
        for (auto& v : tv)
            v = std::clamp(c.op.tilt_strength * tr.normal(), -c.op.max_tilt,
                           c.op.max_tilt);
        p.true_tilt = Tensor::from_data({c.side, c.side, 2}, std::move(tv));
        p.op = TiltThenBlur{Tensor::zeros({c.op.blind_side, c.op.blind_side}),
                            Tensor::zeros({c.side, c.side, 2}), c.op.max_tilt};
    }

    if (c.task == "bid")
        p.y_clean = conv_blur(p.x_true, *p.true_kernel);
    else if (c.task == "turbulence")
        p.y_clean = conv_blur(tilt_warp(p.x_true, *p.true_tilt, c.op.max_tilt),
                              *p.true_kernel);
    else
        p.y_clean = measure(p.op, p.x_true);

    auto spec = make_noise_spec(resolve_noise_names(c), c.noise.level);
    if (spec) {
        Rng nr = root.derive("noise");
        p.y = corrupt(p.y_clean, *spec, nr);
    } else {
        p.y = p.y_clean;
    }
    return p;
}

// ---------------------------------------------------------------- outputs

std::string trajectory_csv(const SolveTrace& tr) {
    std::ostringstream ss;
    ss << "iter,loss,psnr,ssim,var,fbe1,fbe2,fbe3,fbe4,fbe5\n";
    for (size_t i = 0; i < tr.loss.size(); ++i) {
        ss << i << ',' << csv_cell(tr.loss[i]) << ','
           << csv_cell(i < tr.psnr.size() ? tr.psnr[i] : kNan) << ','
           << csv_cell(i < tr.ssim.size() ? tr.ssim[i] : kNan) << ','
           << csv_cell(i < tr.var.size() ? tr.var[i] : kNan);
        for (size_t b = 0; b < 5; ++b)
            ss << ',' << csv_cell(i < tr.fbe.size() ? tr.fbe[i].band[b] : kNan);
        ss << '\n';
    }
    return ss.str();
}

void write_image(const fs::path& dir, const std::string& stem, const Tensor& t) {
    if (t.shape().size() != 2) return; // only plane images persist as files
    save_pfm((dir / (stem + ".pfm")).string(), t);
    save_pgm((dir / (stem + ".pgm")).string(), t);
}

// kernels are tiny-valued; scale the peak to 1 for the 8-bit view
Tensor view_normalized(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data()) m = std::max(m, std::abs(v));
    if (m <= 0.0) return t;
    std::vector<double> d = t.data();
    for (auto& v : d) v /= m;
    return Tensor::from_data(t.shape(), std::move(d));
}

void write_kernel(const fs::path& dir, const std::string& stem,
                  const Tensor& k) {
    save_pfm((dir / (stem + ".pfm")).string(), k);
    save_pgm((dir / (stem + ".pgm")).string(), view_normalized(k));
}

void write_tilt(const fs::path& dir, const std::string& stem, const Tensor& t) {
    const Shape& s = t.shape(); // [H, W, 2]
    std::vector<double> dx(static_cast<size_t>(s[0]) * s[1]);
    std::vector<double> dy(dx.size());
    for (size_t i = 0; i < dx.size(); ++i) {
        dx[i] = t.at(static_cast<int64_t>(2 * i));
        dy[i] = t.at(static_cast<int64_t>(2 * i + 1));
    }
    save_pfm((dir / (stem + "_dx.pfm")).string(),
             Tensor::from_data({s[0], s[1]}, std::move(dx)));
    save_pfm((dir / (stem + "_dy.pfm")).string(),
             Tensor::from_data({s[0], s[1]}, std::move(dy)));
}

// ---------------------------------------------------------------- metrics

TrainableOverrides ov_of(const SeedVariables& v) {
    TrainableOverrides ov;
    if (v.kernel_logits) ov.kernel_logits = &*v.kernel_logits;
    if (v.tilt) ov.tilt = &*v.tilt;
    return ov;
}

double residual_l2(const ForwardOperator& op, const Tensor& x, const Tensor& y,
                   const TrainableOverrides& ov) {
    Tensor ax = measure(op, x, ov);
    double acc = 0.0;
    for (int64_t i = 0; i < ax.size(); ++i) {
        double d = ax.at(i) - y.at(i);
        acc += d * d;
    }
    return std::sqrt(acc);
}

double l2(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += v * v;
    return std::sqrt(acc);
}

// NaN when the measurement cannot be evaluated at this point (for example a
// nonlinear operator fed negative intensities)
double try_residual(const ForwardOperator& op, const Tensor& x, const Tensor& y,
                    const TrainableOverrides& ov = {}) {
    try {
        return residual_l2(op, x, y, ov);
    } catch (const std::exception&) {
        return kNan;
    }
}

double finite_max(const std::vector<double>& v) {
    double best = kNan;
    for (double x : v)
        if (!std::isnan(x) && (std::isnan(best) || x > best)) best = x;
    return best;
}

double safe_ssim(const Tensor& a, const Tensor& b) {
    const Shape& s = a.shape();
    if (s.size() != 2 || s[0] < 11 || s[1] < 11) return kNan;
    return ssim(a, b);
}

double tv_distance(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += std::abs(a.at(i) - b.at(i));
    return 0.5 * acc;
}

double rmse(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        double d = a.at(i) - b.at(i);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------- commands

SolveConfig make_solve_config(const ExperimentConfig& c, const EsConfig& es,
                              const Tensor& x_true) {
    SolveConfig sc;
    sc.max_iters = c.solver.max_iters;
    sc.optimizer = c.solver.optimizer == "lbfgs" ? SolveConfig::Opt::Lbfgs
                                                 : SolveConfig::Opt::Adam;
    sc.lr_z = c.solver.lr_z;
    sc.lr_logits = c.solver.lr_logits;
    sc.lr_tilt = c.solver.lr_tilt;
    sc.es = es;
    sc.seed = c.seed;
    sc.ground_truth = x_true;
    sc.metrics_every = c.solver.metrics_every;
    sc.record_fbe = c.solver.record_fbe;
    return sc;
}

ordered_json solve_metrics(const Problem& p, const SolveResult& res) {
    TrainableOverrides fov = ov_of(res.final_vars);
    TrainableOverrides bov = ov_of(res.best_vars);
    double ynorm = std::max(l2(p.y), 1e-300);

    ordered_json m;
    m["iterations"] = res.iterations;
    m["stop_reason"] = res.stop_reason == StopReason::EsTriggered
                           ? "early_stop"
                           : "max_iters";
    m["best_index"] = res.best_index;
    m["final_loss"] =
        jnum(res.trace.loss.empty() ? kNan : res.trace.loss.back());
    double fres = try_residual(p.op, res.final_recon, p.y, fov);
    double bres = try_residual(p.op, res.best_recon, p.y, bov);
    m["final_residual"] = jnum(fres);
    m["final_residual_rel"] = jnum(fres / ynorm);
    m["best_residual_rel"] = jnum(bres / ynorm);
    m["final_psnr"] = jnum(psnr(res.final_recon, p.x_true));
    m["best_psnr"] = jnum(psnr(res.best_recon, p.x_true));
    m["final_ssim"] = jnum(safe_ssim(res.final_recon, p.x_true));
    m["peak_psnr"] = jnum(finite_max(res.trace.psnr));
    double gap = kNan;
    if (res.best_index >= 0 &&
        res.best_index < static_cast<int>(res.trace.psnr.size()) &&
        !std::isnan(res.trace.psnr[static_cast<size_t>(res.best_index)]))
        gap = psnr_gap(res.trace.psnr, res.best_index);
    m["psnr_gap"] = jnum(gap);
    if (res.recovered_kernel && p.true_kernel)
        m["kernel_tv_distance"] =
            jnum(tv_distance(*res.recovered_kernel, *p.true_kernel));
    if (res.recovered_tilt && p.true_tilt)
        m["tilt_rmse"] = jnum(rmse(*res.recovered_tilt, *p.true_tilt));
    return m;
}

void write_problem_images(const fs::path& out, const Problem& p) {
    write_image(out, "truth", p.x_true);
    write_image(out, "measurement", p.y);
}

void write_solve_images(const fs::path& out, const Problem& p,
                        const SolveResult& res) {
    write_image(out, "recon", res.final_recon);
    write_image(out, "best", res.best_recon);
    if (res.recovered_kernel) {
        write_kernel(out, "kernel", *res.recovered_kernel);
        if (p.true_kernel) write_kernel(out, "kernel_true", *p.true_kernel);
    }
    if (res.recovered_tilt) {
        write_tilt(out, "tilt", *res.recovered_tilt);
        if (p.true_tilt) write_tilt(out, "tilt_true", *p.true_tilt);
    }
}

int run_solve_cmd(const ExperimentConfig& cfg, const std::string& command) {
    PriorBundle pb = build_prior(cfg);
    if (cfg.substeps > pb.schedule.T)
        throw ConfigError("substeps: exceeds the schedule length " +
                          std::to_string(pb.schedule.T));
    Rng root(cfg.seed);
    Problem p = build_problem(cfg, pb, root);
    bool blind = cfg.task == "bid" || cfg.task == "turbulence";
    EsConfig es = resolve_es(cfg, p.op);
    ReverseProcess rp =
        make_reverse_process(pb.prior, pb.schedule, cfg.substeps,
                             ReverseVariant::DdimDeterministic,
                             {cfg.side, cfg.side});
    SolveConfig sc = make_solve_config(cfg, es, p.x_true);

    fs::path out(cfg.out);
    fs::create_directories(out);

    SolveResult res;
    try {
        res = blind ? solve_blind(p.y, p.op, rp, sc) : solve(p.y, p.op, rp, sc);
    } catch (const SolveError& e) {
        // leave the partial trace behind for inspection, then fail the run
        write_text(out / "trajectory.csv", trajectory_csv(e.partial.trace));
        throw;
    }

    write_text(out / "trajectory.csv", trajectory_csv(res.trace));
    write_problem_images(out, p);
    write_solve_images(out, p, res);

    ordered_json top;
    top["command"] = command;
    top["config"] = echo_config(cfg, resolve_noise_names(cfg), &es,
                                pb.schedule.T);
    top["metrics"] = solve_metrics(p, res);
    write_text(out / "results.json", top.dump(2) + "\n");
    return 0;
}

int thread_cap() {
    const char* env = std::getenv("DMPLUG_THREADS");
    if (!env) return 2;
    try {
        return std::max(1, std::stoi(env));
    } catch (...) {
        return 1;
    }
}

int run_compare(const ExperimentConfig& cfg) {
    if (cfg.task == "bid" || cfg.task == "turbulence")
        throw ConfigError(
            "task: compare needs a known forward operator, not a blind task");
    PriorBundle pb = build_prior(cfg);
    if (cfg.substeps > pb.schedule.T)
        throw ConfigError("substeps: exceeds the schedule length " +
                          std::to_string(pb.schedule.T));
    Rng root(cfg.seed);
    Problem p = build_problem(cfg, pb, root);
    EsConfig es = resolve_es(cfg, p.op);
    ReverseProcess rp =
        make_reverse_process(pb.prior, pb.schedule, cfg.substeps,
                             ReverseVariant::DdimDeterministic,
                             {cfg.side, cfg.side});
    SolveConfig sc = make_solve_config(cfg, es, p.x_true);

    InterleaveConfig ic;
    ic.zeta_prime = cfg.baseline.zeta_prime;
    ic.variant = cfg.baseline.variant == "projection"
                     ? InterleaveConfig::Variant::ProjectionLinear
                     : InterleaveConfig::Variant::GradientUpdate;
    if (cfg.baseline.substeps > 0)
        ic.substeps = pick_substeps(pb.schedule, cfg.baseline.substeps);

    fs::path out(cfg.out);
    fs::path dout = out / "dmplug";
    fs::path bout = out / "baseline";
    fs::create_directories(dout);
    fs::create_directories(bout);

    SolveResult dres;
    InterleaveResult bres;
    std::exception_ptr derr, berr;
    Rng brng = root.derive("baseline"); // split before any thread starts
    auto arm_d = [&] {
        try {
            dres = solve(p.y, p.op, rp, sc);
        } catch (...) {
            derr = std::current_exception();
        }
    };
    auto arm_b = [&] {
        try {
            bres = interleave_solve(p.y, p.op, rp, ic, brng);
        } catch (...) {
            berr = std::current_exception();
        }
    };
    if (thread_cap() >= 2) {
        std::thread td(arm_d), tb(arm_b);
        td.join();
        tb.join();
    } else {
        arm_d();
        arm_b();
    }
    if (derr) std::rethrow_exception(derr);
    if (berr) std::rethrow_exception(berr);

    write_problem_images(out, p);
    write_text(dout / "trajectory.csv", trajectory_csv(dres.trace));
    write_solve_images(dout, p, dres);
    {
        std::ostringstream ss;
        ss << "step,residual\n";
        for (size_t i = 0; i < bres.residual.size(); ++i)
            ss << i << ',' << fmt17(bres.residual[i]) << '\n';
        write_text(bout / "residuals.csv", ss.str());
    }
    write_image(bout, "recon", bres.recon);

    double ynorm = std::max(l2(p.y), 1e-300);
    double dfres = try_residual(p.op, dres.final_recon, p.y,
                                ov_of(dres.final_vars));
    double bfres = try_residual(p.op, bres.recon, p.y);

    ordered_json top;
    top["command"] = "compare";
    top["config"] = echo_config(cfg, resolve_noise_names(cfg), &es,
                                pb.schedule.T);
    ordered_json m;
    {
        ordered_json d = solve_metrics(p, dres);
        m["dmplug"] = std::move(d);
    }
    {
        ordered_json b;
        b["steps"] = bres.residual.size();
        b["final_internal_residual"] =
            jnum(bres.residual.empty() ? kNan : bres.residual.back());
        b["final_residual"] = jnum(bfres);
        b["final_residual_rel"] = jnum(bfres / ynorm);
        b["final_psnr"] = jnum(psnr(bres.recon, p.x_true));
        b["final_ssim"] = jnum(safe_ssim(bres.recon, p.x_true));
        m["baseline"] = std::move(b);
    }
    m["residual_ratio_baseline_over_dmplug"] =
        (std::isfinite(dfres) && std::isfinite(bfres) && dfres > 1e-300)
            ? jnum(bfres / dfres)
            : ordered_json(nullptr);
    top["metrics"] = std::move(m);
    write_text(out / "results.json", top.dump(2) + "\n");
    return 0;
}

int run_sample(const ExperimentConfig& cfg) {
    PriorBundle pb = build_prior(cfg);
    if (cfg.substeps > pb.schedule.T)
        throw ConfigError("substeps: exceeds the schedule length " +
                          std::to_string(pb.schedule.T));
    ReverseProcess rp =
        make_reverse_process(pb.prior, pb.schedule, cfg.substeps,
                             ReverseVariant::DdimDeterministic,
                             {cfg.side, cfg.side});
    Rng root(cfg.seed);
    Rng sr = root.derive("sample");
    std::vector<Tensor> xs = sample(rp, cfg.sample.count, sr);

    fs::path out(cfg.out);
    fs::create_directories(out);
    ordered_json files = ordered_json::array();
    for (size_t i = 0; i < xs.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof stem, "sample_%03zu", i);
        write_image(out, stem, xs[i]);
        const auto& d = xs[i].data();
        double mn = d[0], mx = d[0], mean = 0.0;
        for (double v : d) {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
            mean += v;
        }
        mean /= static_cast<double>(d.size());
        ordered_json e;
        e["file"] = std::string(stem) + ".pfm";
        e["mean"] = jnum(mean);
        e["min"] = jnum(mn);
        e["max"] = jnum(mx);
        files.push_back(std::move(e));
    }

    ordered_json top;
    top["command"] = "sample";
    top["config"] = echo_config(cfg, resolve_noise_names(cfg), nullptr,
                                pb.schedule.T);
    top["metrics"] = {{"count", cfg.sample.count}, {"samples", files}};
    write_text(out / "results.json", top.dump(2) + "\n");
    return 0;
}

int run_train(const ExperimentConfig& cfg) {
    NoiseSchedule s = make_linear_schedule(
        cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end);
    Rng root(cfg.seed);
    SmoothImagesFixture fx = make_smooth_images(
        root.derive("data").next_u64(), cfg.train.count, cfg.side);
    std::vector<std::vector<double>> dataset;
    dataset.reserve(fx.images.size());
    for (const Tensor& img : fx.images) dataset.push_back(img.data());

    NeuralScore net =
        make_neural_score(cfg.side * cfg.side, s.T, cfg.train.widths,
                          cfg.train.embed_dim, root.derive("init").next_u64());
    TrainConfig tc;
    tc.steps = cfg.train.steps;
    tc.batch = cfg.train.batch;
    tc.lr = cfg.train.lr;
    tc.seed = root.derive("batches").next_u64();
    TrainResult tr = train_score(net, s, dataset, tc);

    fs::path out(cfg.out);
    fs::create_directories(out);
    save_checkpoint((out / "score.ckpt").string(), net, s);

    SolveTrace trace;
    trace.loss = tr.loss_history;
    write_text(out / "trajectory.csv", trajectory_csv(trace));

    size_t n = tr.loss_history.size();
    size_t tail = std::min<size_t>(50, n);
    double tail_mean = kNan;
    if (tail > 0) {
        tail_mean = 0.0;
        for (size_t i = n - tail; i < n; ++i) tail_mean += tr.loss_history[i];
        tail_mean /= static_cast<double>(tail);
    }

    ordered_json top;
    top["command"] = "train-score";
    top["config"] = echo_config(cfg, resolve_noise_names(cfg), nullptr, s.T);
    top["metrics"] = {{"steps", cfg.train.steps},
                      {"final_loss", jnum(n ? tr.loss_history.back() : kNan)},
                      {"loss_tail_mean", jnum(tail_mean)},
                      {"checkpoint", "score.ckpt"}};
    write_text(out / "results.json", top.dump(2) + "\n");
    return 0;
}

Tensor load_image_any(const std::string& path) {
    std::string p = path;
    if (p.ends_with(".pfm")) return load_pfm(p);
    if (p.ends_with(".pgm")) return load_pgm(p);
    throw ConfigError("spectra: image '" + path +
                      "' must be a .pfm or .pgm file");
}

std::array<double, 5> band_fractions(const Tensor& img) {
    Spectrum f = dft2(img);
    int n = img.shape()[0];
    std::array<double, 5> sums{};
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        int fi = i <= n / 2 ? i : i - n;
        for (int j = 0; j < n; ++j) {
            int fj = j <= n / 2 ? j : j - n;
            if (fi == 0 && fj == 0) continue; // mean carries no band content
            double rnorm =
                std::sqrt(double(fi) * fi + double(fj) * fj) / (n / 2.0);
            int band = std::min(4, static_cast<int>(rnorm / 0.2));
            double e = std::norm(f[static_cast<size_t>(i) * n + j]);
            sums[static_cast<size_t>(band)] += e;
            total += e;
        }
    }
    if (total > 0.0)
        for (auto& v : sums) v /= total;
    return sums;
}

int run_spectra(const ExperimentConfig& cfg) {
    Tensor img;
    if (cfg.spectra.image.empty()) {
        uint64_t s = Rng(cfg.seed).derive("truth").next_u64();
        img = make_smooth_images(s, 1, cfg.side).images[0];
    } else {
        img = load_image_any(cfg.spectra.image);
    }
    std::array<double, 5> frac = band_fractions(img);

    std::optional<BandErrors> be;
    if (!cfg.spectra.reference.empty())
        be = fbe(img, load_image_any(cfg.spectra.reference));

    fs::path out(cfg.out);
    fs::create_directories(out);
    {
        std::ostringstream ss;
        ss << "band,energy_fraction,band_error\n";
        for (size_t b = 0; b < 5; ++b)
            ss << (b + 1) << ',' << fmt17(frac[b]) << ','
               << (be ? fmt17(be->band[b]) : std::string()) << '\n';
        write_text(out / "spectra.csv", ss.str());
    }

    ordered_json top;
    top["command"] = "spectra";
    top["config"] = echo_config(cfg, resolve_noise_names(cfg), nullptr,
                                cfg.schedule.T);
    ordered_json m;
    m["energy_fractions"] = frac;
    if (be) m["band_errors"] = be->band;
    top["metrics"] = std::move(m);
    write_text(out / "results.json", top.dump(2) + "\n");
    return 0;
}

} // namespace

int cli(int argc, const char* const* argv) {
    CLI::App app{"seed-space diffusion laboratory for small inverse problems"};
    app.require_subcommand(1);

    std::string config_path, out_dir, task, image, reference;
    std::optional<uint64_t> seed;
    std::optional<int> iters, count, steps;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON experiment config file");
        sub->add_option("--seed", seed, "override the rng seed");
        sub->add_option("--out", out_dir, "override the output directory");
    };

    CLI::App* train = app.add_subcommand(
        "train-score", "train the neural noise predictor on the image fixture");
    add_common(train);
    train->add_option("--steps", steps, "override the training step count");

    CLI::App* samp = app.add_subcommand(
        "sample", "draw unconditional samples through the reverse chain");
    add_common(samp);
    samp->add_option("--count", count, "number of samples");

    CLI::App* solve_c =
        app.add_subcommand("solve", "seed-space optimization on a task");
    add_common(solve_c);
    solve_c->add_option("--task", task, "task to run");
    solve_c->add_option("--iters", iters, "override solver iterations");

    CLI::App* regress_c = app.add_subcommand(
        "regress", "denoising regression with a full metric trace");
    add_common(regress_c);
    regress_c->add_option("--iters", iters, "override solver iterations");

    CLI::App* compare_c = app.add_subcommand(
        "compare", "paired seed-space vs interleaved-correction run");
    add_common(compare_c);
    compare_c->add_option("--task", task, "task to run");
    compare_c->add_option("--iters", iters, "override solver iterations");

    CLI::App* spectra_c = app.add_subcommand(
        "spectra", "radial frequency-band energy report for an image");
    add_common(spectra_c);
    spectra_c->add_option("--image", image, "input image (.pfm/.pgm)");
    spectra_c->add_option("--reference", reference,
                          "reference image for band errors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2; // flag misuse is a configuration error
    }

    try {
        ExperimentConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        if (seed) cfg.seed = *seed;
        if (!out_dir.empty()) cfg.out = out_dir;
        if (!task.empty()) cfg.task = task;
        if (iters) cfg.solver.max_iters = *iters;
        if (count) cfg.sample.count = *count;
        if (steps) cfg.train.steps = *steps;
        if (!image.empty()) cfg.spectra.image = image;
        if (!reference.empty()) cfg.spectra.reference = reference;
        if (regress_c->parsed()) {
            cfg.task = "regress";
            cfg.solver.record_fbe = true; // the spectral trace is its purpose
        }
        validate_config(cfg); // overrides may have invalidated the document

        if (train->parsed()) return run_train(cfg);
        if (samp->parsed()) return run_sample(cfg);
        if (solve_c->parsed()) return run_solve_cmd(cfg, "solve");
        if (regress_c->parsed()) return run_solve_cmd(cfg, "regress");
        if (compare_c->parsed()) return run_compare(cfg);
        return run_spectra(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
}

} // namespace dmplug
