#include "pagoda/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "pagoda/cfg.hpp"
#include "pagoda/checkpoint.hpp"
#include "pagoda/control.hpp"
#include "pagoda/datasets.hpp"
#include "pagoda/distill.hpp"
#include "pagoda/grow.hpp"
#include "pagoda/metrics.hpp"
#include "pagoda/theory.hpp"

namespace pagoda::cli {

namespace fs = std::filesystem;

int exit_code_for_exception(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return 2;
    if (dynamic_cast<const PrereqError*>(&e)) return 3;
    return 4;
}

void apply_override(nlohmann::json& config, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("override must look like key=value: " + kv);
    std::string path = kv.substr(0, eq), value = kv.substr(eq + 1);
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (...) {
        parsed = value;
    }
    nlohmann::json* node = &config;
    std::size_t pos = 0;
    for (;;) {
        auto dot = path.find('.', pos);
        std::string key = path.substr(pos, dot - pos);
        if (dot == std::string::npos) {
            (*node)[key] = parsed;
            break;
        }
        node = &(*node)[key];
        pos = dot + 1;
    }
}

std::string resolve_out_dir(const nlohmann::json& config, const std::string& flag_out) {
    if (!flag_out.empty()) return flag_out;
    if (const char* env = std::getenv("PGDA_OUT"); env && *env) return env;
    if (config.is_object()) return config.value("out_dir", std::string("pagoda_out"));
    return "pagoda_out";
}

namespace {

struct Ctx {
    nlohmann::json cfg;
    std::string out;
    std::uint64_t seed = 0;

    nlohmann::json sub(const std::string& key) const {
        return cfg.contains(key) ? cfg.at(key) : nlohmann::json::object();
    }
    std::string path(const std::string& file) const { return (fs::path(out) / file).string(); }
};

ForwardProcess process_from(const Ctx& ctx) {
    auto p = ctx.sub("process");
    ForwardProcess fp;
    fp.kind = process_kind_from_string(p.value("kind", std::string("ve")));
    fp.T = p.value("T", std::sqrt(3.0));
    return fp;
}

GridConfig grid_from(const Ctx& ctx) {
    return GridConfig::from_json(ctx.sub("grid"));
}

ToyDataset dataset_from(const Ctx& ctx) {
    if (!ctx.cfg.contains("dataset") || !ctx.cfg.at("dataset").is_string())
        throw UsageError("config needs a dataset name; one of: gauss1d, bimodal1d, "
                         "eight-gaussians-2d, rings-2d, synthetic-grid-images, smooth1d");
    try {
        return make_dataset(ctx.cfg.at("dataset").get<std::string>());
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

std::vector<std::string> metric_columns() {
    return {"loss_rec", "loss_adv", "lambda", "grad_rec_sq", "grad_adv_sq", "w1_eval", "wallclock_ms"};
}

void require_file(const std::string& path, const std::string& producer) {
    if (!fs::exists(path))
        throw PrereqError("missing prerequisite " + path + "; run `" + producer + "` first");
}

nlohmann::json finish(const Ctx& ctx, const std::string& command, nlohmann::json metrics, bool ok) {
    nlohmann::json summary = {{"ok", ok}, {"command", command}, {"metrics", std::move(metrics)}};
    validate_summary(summary, builtin_summary_schema());
    write_file_atomic(ctx.path("summary_" + command + ".json"), summary.dump(2) + "\n");
    return summary;
}

// ---------------------------------------------------------------------------

nlohmann::json cmd_dsm_train(const Ctx& ctx) {
    ToyDataset data = dataset_from(ctx);
    ForwardProcess process = process_from(ctx);
    GridConfig grid = grid_from(ctx);
    auto d = ctx.sub("dsm");

    DsmConfig dc;
    dc.steps = d.value("steps", std::size_t{4000});
    dc.batch = d.value("batch", std::size_t{64});
    dc.hidden = d.value("hidden", std::vector<std::size_t>{48, 48});
    dc.act = activation_from_string(d.value("act", std::string("silu")));
    dc.opt.lr = d.value("lr", 1e-3);
    dc.opt.kind = opt_kind_from_string(d.value("optimizer", std::string("adam")));
    dc.t_min = grid.t_min;
    dc.weighting = d.value("weighting", std::string("uniform"));

    Rng rng(ctx.seed);
    DataSampler sampler = [&data](Rng& r, std::size_t n, Tensor& x, std::vector<int>& c) {
        x = sample_base(data, r, n);
        c.clear();
    };
    DsmResult res = train_dsm(sampler, process, data.base_dim, dc, rng);

    MetricsLog log(ctx.path("metrics.csv"), metric_columns());
    std::size_t every = std::max<std::size_t>(1, dc.steps / 200);
    for (std::size_t i = 0; i < res.loss_trajectory.size(); i += every)
        log.append("dsm", i, {res.loss_trajectory[i], 0.0, 0.0, 0.0, 0.0,
                              std::numeric_limits<double>::quiet_NaN(), 0.0});

    save_score_model(ctx.path("score.ckpt"), *res.net, process, grid);
    return finish(ctx, "dsm-train",
                  {{"final_loss", res.loss_trajectory.back()},
                   {"steps", dc.steps},
                   {"checkpoint", ctx.path("score.ckpt")}},
                  true);
}

nlohmann::json cmd_build_pairs(const Ctx& ctx) {
    ToyDataset data = dataset_from(ctx);
    require_file(ctx.path("score.ckpt"), "dsm-train");
    auto loaded = load_score_model(ctx.path("score.ckpt"));
    auto p = ctx.sub("pairs");

    Rng rng(ctx.seed + 1);
    std::size_t count = p.value("count", std::size_t{2048});
    Tensor high = data.sample_high(rng, count);
    TimeGrid grid = TimeGrid::make(loaded.model.process, loaded.grid);

    BuildPairsConfig bc;
    bc.fraction = p.value("fraction", 1.0);
    bc.seed = ctx.seed + 1;
    bc.teacher_hash = file_hash_hex(ctx.path("score.ckpt"));
    PairSet pairs = build_pairs(high, {}, loaded.model, dataset_downsample_op(data), grid, bc);
    save_pairs(pairs, ctx.path("pairs.pgpr"));
    return finish(ctx, "build-pairs",
                  {{"count", pairs.records.size()},
                   {"dim_low", pairs.dim_low},
                   {"dim_high", pairs.dim_high},
                   {"file", ctx.path("pairs.pgpr")}},
                  true);
}

Stage2Config stage2_config_from(const Ctx& ctx, const ToyDataset& data) {
    auto s = ctx.sub("stage2");
    Stage2Config cfg;
    cfg.steps = s.value("steps", std::size_t{2000});
    cfg.batch = s.value("batch", std::size_t{64});
    cfg.adaptive_coeff = s.value("adaptive_coeff", 0.2);
    if (s.contains("lambda")) cfg.lambda_fixed = s.at("lambda").get<double>();
    cfg.opt_g.lr = s.value("lr_g", 1e-3);
    cfg.opt_d.lr = s.value("lr_d", 1e-3);
    cfg.opt_g.kind = opt_kind_from_string(s.value("optimizer", std::string("adam")));
    cfg.opt_d.kind = cfg.opt_g.kind;
    cfg.ema_decay = s.value("ema", 0.999);
    cfg.pair_fraction = s.value("pair_fraction", 1.0);
    cfg.update_order = s.value("update_order", std::string("disc_first")) == "gen_first"
                           ? UpdateOrder::gen_first
                           : UpdateOrder::disc_first;
    cfg.gen.hidden = s.value("g_hidden", std::vector<std::size_t>{64, 64});
    cfg.gen.feat_width = s.value("feat_width", std::size_t{8});
    cfg.disc.hidden = s.value("d_hidden", std::vector<std::size_t>{64, 64});
    cfg.init_from_teacher = s.value("init_from_teacher", true);
    cfg.eval_every = s.value("eval_every", std::size_t{0});
    cfg.log_wallclock = s.value("log_wallclock", false);
    (void)data;
    return cfg;
}

nlohmann::json cmd_distill(const Ctx& ctx) {
    ToyDataset data = dataset_from(ctx);
    require_file(ctx.path("score.ckpt"), "dsm-train");
    require_file(ctx.path("pairs.pgpr"), "build-pairs");
    auto teacher = load_score_model(ctx.path("score.ckpt"));
    PairSet pairs = load_pairs(ctx.path("pairs.pgpr"));

    Stage2Config cfg = stage2_config_from(ctx, data);
    Rng rng(ctx.seed + 2);
    MetricsLog log(ctx.path("metrics.csv"), metric_columns());
    Stage2Result res =
        train_stage2(teacher.model, pairs, data, cfg, rng, &log, &teacher.net->params());

    save_generator(ctx.path("generator.ckpt"), *res.generator,
                   {{"teacher_hash", file_hash_hex(ctx.path("score.ckpt"))}});

    // reconstruction quality over the pair set
    std::size_t n_eval = std::min<std::size_t>(512, pairs.records.size());
    double mse = 0.0;
    if (n_eval > 0) {
        Tensor z = pairs_z(pairs, 0, n_eval), x = pairs_x_low(pairs, 0, n_eval);
        Tensor xhat = res.generator->generate(z);
        for (std::size_t i = 0; i < x.size(); ++i) mse += (x[i] - xhat[i]) * (x[i] - xhat[i]);
        mse /= static_cast<double>(n_eval);
    }
    const auto& last = res.history.back();
    return finish(ctx, "distill",
                  {{"final_loss_rec", last.loss_rec},
                   {"final_loss_adv", last.loss_adv},
                   {"final_lambda", last.lambda},
                   {"pair_recon_mse", mse},
                   {"checkpoint", ctx.path("generator.ckpt")}},
                  true);
}

nlohmann::json cmd_grow(const Ctx& ctx) {
    ToyDataset data = dataset_from(ctx);
    require_file(ctx.path("generator.ckpt"), "distill");
    require_file(ctx.path("pairs.pgpr"), "build-pairs");
    require_file(ctx.path("score.ckpt"), "dsm-train");
    auto teacher = load_score_model(ctx.path("score.ckpt"));
    PairSet pairs = load_pairs(ctx.path("pairs.pgpr"));
    auto gen = load_generator(ctx.path("generator.ckpt"));

    auto s = ctx.sub("stage3");
    Stage3Config cfg;
    cfg.lambda = s.value("lambda", 1.0);
    cfg.steps = s.value("steps", std::size_t{1500});
    cfg.batch = s.value("batch", std::size_t{64});
    cfg.opt_g.lr = s.value("lr_g", 1e-3);
    cfg.opt_d.lr = s.value("lr_d", 1e-3);
    cfg.disc.hidden = s.value("d_hidden", std::vector<std::size_t>{64, 64});
    cfg.eval_every = s.value("eval_every", std::size_t{50});
    cfg.log_wallclock = s.value("log_wallclock", false);
    std::size_t factor = s.value("factor", std::size_t{2});

    GrowableGenerator grown(gen.generator);
    grown.grow(factor);
    std::string trunk_before = grown.trunk_bytes();

    Rng rng(ctx.seed + 3);
    MetricsLog log(ctx.path("metrics.csv"), metric_columns());
    Stage3Result res = train_stage3(grown, teacher.model, pairs, data, cfg, rng, &log);

    if (grown.trunk_bytes() != trunk_before)
        throw NumericError("frozen trunk changed during stage-3 training");

    Rng probe(99);
    Tensor z = prior_sample(teacher.model.process, grown.base().dim(), 100, probe);
    double corr = consistency_correlation(grown, z);
    grown.save(ctx.path("grown.ckpt"));
    return finish(ctx, "grow",
                  {{"final_loss_rec", res.history.back().loss_rec},
                   {"consistency_corr", corr},
                   {"out_dim", grown.out_dim()},
                   {"checkpoint", ctx.path("grown.ckpt")}},
                  true);
}

nlohmann::json cmd_sample(const Ctx& ctx) {
    auto s = ctx.sub("sample");
    std::string model = s.value("model", std::string("generator"));
    std::size_t n = s.value("n", std::size_t{64});
    ForwardProcess process = process_from(ctx);
    Rng rng(ctx.seed + 4);

    Tensor out;
    if (model == "grown") {
        require_file(ctx.path("grown.ckpt"), "grow");
        Rng tmp(0);
        GrowableGenerator g = GrowableGenerator::load(ctx.path("grown.ckpt"), tmp);
        if (n == 0) {
            out = Tensor({0, g.out_dim()});
        } else {
            Tensor z = prior_sample(process, g.base().dim(), n, rng);
            out = g.generate(z);
        }
    } else {
        require_file(ctx.path("generator.ckpt"), "distill");
        auto g = load_generator(ctx.path("generator.ckpt"));
        if (n == 0) {
            out = Tensor({0, g.generator->dim()});
        } else {
            Tensor z = prior_sample(process, g.generator->dim(), n, rng);
            out = g.generator->generate(z);
        }
    }
    save_tensor(ctx.path("samples.pgts"), out);
    return finish(ctx, "sample", {{"n", n}, {"dim", out.rank() == 2 ? out.dim(1) : 0},
                                  {"file", ctx.path("samples.pgts")}}, true);
}

nlohmann::json cmd_eval(const Ctx& ctx) {
    ToyDataset data = dataset_from(ctx);
    auto e = ctx.sub("eval");
    std::string metric = e.value("metric", std::string("w1"));
    if (metric != "w1" && metric != "sliced_w" && metric != "mode_recall")
        throw UsageError("unknown metric '" + metric + "'; expected w1 | sliced_w | mode_recall");
    std::string model = e.value("model", std::string("generator"));
    std::size_t n = e.value("n", std::size_t{10000});
    if (n < 1) throw UsageError("eval: n must be >= 1");
    ForwardProcess process = process_from(ctx);

    require_file(ctx.path(model == "grown" ? "grown.ckpt" : "generator.ckpt"),
                 model == "grown" ? "grow" : "distill");
    Rng rng(ctx.seed + 5);
    Tensor samples;
    if (model == "grown") {
        Rng tmp(0);
        GrowableGenerator g = GrowableGenerator::load(ctx.path("grown.ckpt"), tmp);
        samples = g.generate(prior_sample(process, g.base().dim(), n, rng));
    } else {
        auto g = load_generator(ctx.path("generator.ckpt"));
        samples = g.generator->generate(prior_sample(process, g.generator->dim(), n, rng));
    }

    double value = 0.0;
    nlohmann::json extra = nlohmann::json::object();
    if (metric == "mode_recall") {
        if (data.mode_centers.empty()) throw UsageError("dataset has no mode centers for mode_recall");
        ModeReport rep = mode_recall(samples, data.mode_centers);
        value = rep.recall;
        extra["counts"] = rep.counts;
    } else {
        Tensor ref = model == "grown" ? data.sample_high(rng, n) : sample_base(data, rng, n);
        if (metric == "w1") {
            if (samples.dim(1) != 1)
                value = sliced_wasserstein(samples, ref);
            else
                value = w1_sorted(samples.data, ref.data);
        } else {
            value = sliced_wasserstein(samples, ref);
        }
    }
    nlohmann::json metrics = {{"metric", metric}, {"value", value}, {"n", n}, {"low_n", n < 100}};
    for (auto it = extra.begin(); it != extra.end(); ++it) metrics[it.key()] = it.value();
    return finish(ctx, "eval", metrics, true);
}

nlohmann::json cmd_edit(const Ctx& ctx) {
    auto e = ctx.sub("edit");
    std::string mode = e.value("mode", std::string("inpaint"));
    require_file(ctx.path("generator.ckpt"), "distill");
    auto g = load_generator(ctx.path("generator.ckpt"));
    std::size_t dim = g.generator->dim();
    ForwardProcess process = process_from(ctx);
    Rng rng(ctx.seed + 6);

    if (mode == "inpaint") {
        std::vector<std::size_t> keep = e.value("mask_keep", std::vector<std::size_t>{0});
        LinearMeasurement op = LinearMeasurement::mask(dim, keep);
        Tensor y;
        if (e.contains("observation_file")) {
            y = load_tensor(e.at("observation_file").get<std::string>());
        } else {
            Tensor z = prior_sample(process, dim, 1, rng);
            Tensor x = g.generator->generate(z);
            y = op.apply(x);
            y = Tensor({y.dim(1)}, y.data);
        }
        EditRequest req;
        req.y = y;
        req.op = op;
        req.steps = e.value("steps", std::size_t{500});
        req.lr = e.value("lr", 1e-2);
        req.noise_std = e.value("noise_std", 0.0);
        auto gen_ptr = g.generator;
        LatentOptResult res = latent_optimize(
            [gen_ptr](const Var& z) { return gen_ptr->forward(z); }, dim, process, req, rng);
        save_tensor(ctx.path("edited.pgts"), res.x_star);
        std::ofstream trace(ctx.path("edit_residuals.csv"));
        trace << "step,best_residual\n";
        for (std::size_t i = 0; i < res.best_trace.size(); ++i)
            trace << i << "," << format_double(res.best_trace[i]) << "\n";
        return finish(ctx, "edit",
                      {{"mode", mode}, {"residual", res.residual}, {"file", ctx.path("edited.pgts")}},
                      true);
    }

    if (mode != "superres" && mode != "class_transfer")
        throw UsageError("edit mode must be inpaint | superres | class_transfer");
    require_file(ctx.path("score.ckpt"), "dsm-train");
    auto teacher = load_score_model(ctx.path("score.ckpt"));
    TimeGrid grid = TimeGrid::make(teacher.model.process, teacher.grid);
    Tensor y;
    if (e.contains("observation_file")) {
        y = load_tensor(e.at("observation_file").get<std::string>());
    } else {
        Tensor z = prior_sample(process, dim, 1, rng);
        y = g.generator->generate(z);
    }
    auto decode = [&](const Tensor& z, const std::vector<int>& c) {
        return g.generator->generate(z, c);
    };
    Tensor out = invert_edit(teacher.model, grid, decode, y,
                             mode == "superres" ? EditMode::superres : EditMode::class_transfer,
                             std::nullopt, e.value("c", -1), e.value("c_prime", -1));
    save_tensor(ctx.path("edited.pgts"), out);
    return finish(ctx, "edit", {{"mode", mode}, {"file", ctx.path("edited.pgts")}}, true);
}

nlohmann::json cmd_interpolate(const Ctx& ctx) {
    auto e = ctx.sub("interpolate");
    require_file(ctx.path("generator.ckpt"), "distill");
    auto g = load_generator(ctx.path("generator.ckpt"));
    std::size_t dim = g.generator->dim();
    std::size_t points = e.value("points", std::size_t{9});
    ForwardProcess process = process_from(ctx);
    Rng rng(ctx.seed + 7);

    Tensor za, zb;
    if (e.contains("latent_a") && e.contains("latent_b")) {
        za = load_tensor(e.at("latent_a").get<std::string>());
        zb = load_tensor(e.at("latent_b").get<std::string>());
    } else {
        Tensor both = prior_sample(process, dim, 2, rng);
        za = Tensor({dim});
        zb = Tensor({dim});
        for (std::size_t j = 0; j < dim; ++j) {
            za[j] = both.data[j];
            zb[j] = both.data[dim + j];
        }
    }
    Tensor path({points, dim});
    std::ofstream trace(ctx.path("interp_norms.csv"));
    trace << "t,latent_norm\n";
    for (std::size_t i = 0; i < points; ++i) {
        double t = points == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(points - 1);
        auto zi = slerp(za.data, zb.data, t);
        std::copy(zi.begin(), zi.end(), path.data.begin() + i * dim);
        trace << format_double(t) << "," << format_double(std::sqrt(sq_norm(zi))) << "\n";
    }
    Tensor decoded = g.generator->generate(path);
    save_tensor(ctx.path("interp_latents.pgts"), path);
    save_tensor(ctx.path("interp_samples.pgts"), decoded);
    return finish(ctx, "interpolate",
                  {{"points", points}, {"file", ctx.path("interp_samples.pgts")}}, true);
}

nlohmann::json cmd_cfg_train(const Ctx& ctx) {
    auto c = ctx.sub("cfg");
    double sigma = c.value("sigma", 1.0);
    std::vector<double> means = c.value("class_means", std::vector<double>{-1.0, 1.0});
    OmegaPrior prior = OmegaPrior::parse(c.value("omega_prior", std::string("uniform:1,3")));
    ForwardProcess process = process_from(ctx);
    GridConfig gc = grid_from(ctx);
    TimeGrid grid = TimeGrid::make(process, gc);

    // equal-variance analytic teachers: guided DDIM sampling then matches the
    // closed-form guided Gaussian family
    std::vector<double> cls_probs(means.size(), 1.0 / static_cast<double>(means.size()));
    double marg_mean = 0.0;
    for (double m : means) marg_mean += m / static_cast<double>(means.size());

    struct ClassScore : ScoreFn {
        std::vector<GaussianData> per_class;
        ForwardProcess process;
        Tensor eval(const Tensor& x, double t, const std::vector<int>& cond) const override {
            Tensor out(x.shape);
            for (std::size_t r = 0; r < x.dim(0); ++r) {
                int ci = cond.empty() ? 0 : std::max(cond[r], 0);
                AnalyticGaussianScore s(per_class[ci], process);
                Tensor row({1, x.dim(1)});
                for (std::size_t j = 0; j < x.dim(1); ++j) row[j] = x.data[r * x.dim(1) + j];
                Tensor sr = s.eval(row, t, {});
                for (std::size_t j = 0; j < x.dim(1); ++j) out.data[r * x.dim(1) + j] = sr[j];
            }
            return out;
        }
    };
    auto cls = std::make_shared<ClassScore>();
    cls->process = process;
    for (double m : means) cls->per_class.push_back(GaussianData{{m}, {sigma * sigma}});
    ScoreModel cond_model{process, cls, 1, means.size()};
    ScoreModel marg_model{process,
                          std::make_shared<AnalyticGaussianScore>(
                              GaussianData{{marg_mean}, {sigma * sigma}}, process),
                          1, 0};

    OmegaTrainConfig tc;
    tc.steps = c.value("steps", std::size_t{1200});
    tc.batch = c.value("batch", std::size_t{48});
    tc.opt.lr = c.value("lr", 2e-3);
    Rng rng(ctx.seed + 8);
    auto sampler = guided_ddim_sampler(cond_model, marg_model, grid);
    OmegaTrainResult res =
        train_omega_estimator(sampler, process, 1, cls_probs, prior, tc, rng);

    save_checkpoint(ctx.path("omega_estimator.ckpt"), res.estimator->params(),
                    {{"kind", "omega_estimator"}, {"omega_prior", prior.to_json()}});
    return finish(ctx, "cfg-train",
                  {{"final_mse", res.mse_trajectory.back()},
                   {"checkpoint", ctx.path("omega_estimator.ckpt")}},
                  true);
}

nlohmann::json lab_stability(const Ctx& ctx) {
    using namespace theory;
    nlohmann::json report = nlohmann::json::array();

    auto run = [&](const StabilityInstance& inst, double h, std::size_t steps,
                   std::vector<double> th0, std::vector<double> ps0) {
        nlohmann::json entry;
        entry["instance"] = inst.name;
        entry["eta"] = inst.eta;
        validate_instance(inst);
        auto jb = jacobian_at(inst, inst.theta_star, inst.psi_star);
        std::size_t rdim = 0;
        auto restricted = restricted_jacobian(jb, inst, &rdim);
        HurwitzReport hz = rdim > 0 ? hurwitz_check(restricted, rdim)
                                    : HurwitzReport{true, -std::numeric_limits<double>::infinity(), {}};
        entry["claim"] = inst.expect_stable ? "locally-convergent" : "non-convergent";
        entry["is_hurwitz"] = hz.is_hurwitz;
        entry["max_real_part"] = hz.max_real_part;
        auto spec = nlohmann::json::array();
        for (auto ev : hz.spectrum) spec.push_back({ev.real(), ev.imag()});
        entry["spectrum"] = spec;
        entry["eta_min"] = eta_min(inst);
        AltGdResult sim = simulate_altgd(inst, th0, ps0, h, steps);
        entry["converged"] = sim.converged;
        entry["fitted_rate"] = sim.fitted_rate;
        double pred = 0.0;
        for (auto ev : hz.spectrum) pred = std::max(pred, std::abs(ev));
        entry["predicted_rate"] = pred;
        entry["holds"] = (inst.expect_stable == sim.converged) &&
                         (inst.expect_stable == hz.is_hurwitz || rdim == 0);
        report.push_back(entry);

        std::ofstream tr(ctx.path("lab_stability_" + inst.name + ".csv"));
        tr << "step,distance\n";
        for (std::size_t i = 0; i < sim.distances.size(); ++i)
            tr << i << "," << format_double(sim.distances[i]) << "\n";
    };

    run(linear_instance(1.0), 0.05, 2000, {2.3}, {0.2});
    run(dirac_gan_instance(), 0.05, 2000, {0.5}, {0.5});
    run(curved_disc_instance(0.5, 0.3), 0.05, 3000, {2.2}, {0.3});
    run(mixture_instance(1.0), 0.05, 3000, {2.2, 0.1}, {0.1, -0.1});

    write_file_atomic(ctx.path("lab_stability.json"), report.dump(2) + "\n");
    bool all = true;
    for (const auto& e : report) all = all && e["holds"].get<bool>();
    return finish(ctx, "lab",
                  {{"which", "stability"}, {"holds", all}, {"report", ctx.path("lab_stability.json")}},
                  all);
}

nlohmann::json lab_optimality(const Ctx& ctx) {
    using namespace theory;
    TabularOptInstance inst;
    inst.data_values = {-1.0, 0.0, 1.0};
    inst.data_probs = {0.5, 0.3, 0.2};
    inst.latent_probs = {0.5, 0.3, 0.2};
    inst.encoder = {0, 1, 2};
    inst.teacher_map = {1, 2, 0}; // deliberately wrong teacher
    inst.lambda = 1.0;

    auto pagoda_res = optimality_search(inst, OptimalityMode::pagoda);
    auto kd_res = optimality_search(inst, OptimalityMode::kd_gan);

    nlohmann::json report;
    report["instance"] = "three-point";
    report["claim"] = "pagoda-exact-kd-gap";
    report["pagoda"] = {{"best_value", pagoda_res.best_value},
                        {"n_minimizers", pagoda_res.best_tables.size()},
                        {"min_tv", pagoda_res.min_tv},
                        {"max_tv", pagoda_res.max_tv}};
    report["kd_gan"] = {{"best_value", kd_res.best_value},
                        {"n_minimizers", kd_res.best_tables.size()},
                        {"min_tv", kd_res.min_tv},
                        {"max_tv", kd_res.max_tv}};
    bool holds = pagoda_res.min_tv == 0.0 && kd_res.min_tv > 0.0;
    report["holds"] = holds;
    write_file_atomic(ctx.path("lab_optimality.json"), report.dump(2) + "\n");
    return finish(ctx, "lab",
                  {{"which", "optimality"},
                   {"holds", holds},
                   {"pagoda_tv", pagoda_res.min_tv},
                   {"kd_tv", kd_res.min_tv}},
                  holds);
}

nlohmann::json lab_bounds(const Ctx& ctx) {
    using namespace theory;
    nlohmann::json report = nlohmann::json::array();
    bool all = true;
    for (double eps : {0.0, 0.05, 0.1})
        for (double T : {1.0, 2.0, 3.0})
            for (double gamma : {2.0, 4.0}) {
                BoundInstance in;
                in.sigma = 1.0 / std::sqrt(gamma);
                in.T = T;
                in.eps_dm = eps;
                in.gen_scale = true_inverse_scale(in);
                BoundReport w2 = w2_bound_check(in);
                BoundReport w1 = w1_bound_check(in);
                nlohmann::json cell = {{"instance", "gauss-vp"},
                                       {"eps_dm", eps},
                                       {"T", T},
                                       {"gamma", gamma},
                                       {"w2", {{"claim", "w2-bound"}, {"lhs", w2.lhs},
                                               {"rhs", w2.rhs}, {"holds", w2.holds}}},
                                       {"w1", {{"claim", "w1-bound"}, {"lhs", w1.lhs},
                                               {"rhs", w1.rhs}, {"holds", w1.holds}}}};
                report.push_back(cell);
                all = all && w2.holds && w1.holds;
            }
    write_file_atomic(ctx.path("lab_bounds.json"), report.dump(2) + "\n");
    return finish(ctx, "lab", {{"which", "bounds"}, {"holds", all}, {"cells", report.size()}}, all);
}

nlohmann::json cmd_lab(const Ctx& ctx) {
    std::string which = ctx.sub("lab").value("which", std::string(""));
    if (which == "stability") return lab_stability(ctx);
    if (which == "optimality") return lab_optimality(ctx);
    if (which == "bounds") return lab_bounds(ctx);
    throw UsageError("lab.which must be one of optimality | stability | bounds");
}

} // namespace

nlohmann::json builtin_summary_schema() {
    return {{"type", "object"},
            {"required", {"ok", "command", "metrics"}},
            {"properties",
             {{"ok", {{"type", "boolean"}}},
              {"command", {{"type", "string"}}},
              {"metrics", {{"type", "object"}}}}}};
}

void validate_summary(const nlohmann::json& summary, const nlohmann::json& schema) {
    auto type_ok = [](const nlohmann::json& v, const std::string& t) {
        if (t == "object") return v.is_object();
        if (t == "string") return v.is_string();
        if (t == "boolean") return v.is_boolean();
        if (t == "number") return v.is_number();
        if (t == "array") return v.is_array();
        return true;
    };
    if (schema.contains("type") && !type_ok(summary, schema.at("type").get<std::string>()))
        throw NumericError("summary schema violation: wrong top-level type");
    if (schema.contains("required"))
        for (const auto& key : schema.at("required"))
            if (!summary.contains(key.get<std::string>()))
                throw NumericError("summary schema violation: missing key " + key.get<std::string>());
    if (schema.contains("properties"))
        for (auto it = schema.at("properties").begin(); it != schema.at("properties").end(); ++it)
            if (summary.contains(it.key()) && it.value().contains("type") &&
                !type_ok(summary.at(it.key()), it.value().at("type").get<std::string>()))
                throw NumericError("summary schema violation: wrong type for " + it.key());
}

std::string usage_text() {
    return "usage: pagoda <command> --config <path> [--seed N] [--out DIR] [k=v ...]\n"
           "commands: dsm-train build-pairs distill grow sample eval edit interpolate\n"
           "          cfg-train lab\n";
}

nlohmann::json run_command(const std::string& command, nlohmann::json config) {
    Ctx ctx;
    ctx.cfg = std::move(config);
    ctx.out = ctx.cfg.value("__out", std::string("pagoda_out"));
    ctx.seed = ctx.cfg.value("seed", std::uint64_t{0});
    fs::create_directories(ctx.out);

    try {
        if (command == "dsm-train") return cmd_dsm_train(ctx);
        if (command == "build-pairs") return cmd_build_pairs(ctx);
        if (command == "distill") return cmd_distill(ctx);
        if (command == "grow") return cmd_grow(ctx);
        if (command == "sample") return cmd_sample(ctx);
        if (command == "eval") return cmd_eval(ctx);
        if (command == "edit") return cmd_edit(ctx);
        if (command == "interpolate") return cmd_interpolate(ctx);
        if (command == "cfg-train") return cmd_cfg_train(ctx);
        if (command == "lab") return cmd_lab(ctx);
    } catch (const UsageError&) {
        throw;
    } catch (const PrereqError&) {
        throw;
    } catch (const NumericError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    } catch (const std::exception& e) {
        throw NumericError(e.what());
    }
    throw UsageError("unknown command '" + command + "'\n" + usage_text());
}

} // namespace pagoda::cli
