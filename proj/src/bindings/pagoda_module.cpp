#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pagoda/cfg.hpp"
#include "pagoda/checkpoint.hpp"
#include "pagoda/cli.hpp"
#include "pagoda/control.hpp"
#include "pagoda/datasets.hpp"
#include "pagoda/distill.hpp"
#include "pagoda/grow.hpp"
#include "pagoda/metrics.hpp"
#include "pagoda/theory.hpp"

namespace py = pybind11;
using namespace pagoda;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<std::size_t> shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<std::size_t>(arr.shape(i));
    Tensor t(shape);
    std::copy(arr.data(), arr.data() + arr.size(), t.data.begin());
    return t;
}

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> arr(shape);
    std::copy(t.data.begin(), t.data.end(), arr.mutable_data());
    return arr;
}

ForwardProcess make_process(const std::string& kind, double T) {
    return ForwardProcess{process_kind_from_string(kind), T};
}

ScoreModel make_analytic_model(const std::string& kind, double T, std::vector<double> mean,
                               std::vector<double> var) {
    ForwardProcess p = make_process(kind, T);
    GaussianData d{std::move(mean), std::move(var)};
    std::size_t dim = d.dim();
    return ScoreModel{p, std::make_shared<AnalyticGaussianScore>(std::move(d), p), dim, 0};
}

} // namespace

PYBIND11_MODULE(_pagoda, m) {
    m.doc() = "One-step diffusion distillation pipeline with progressive growing and theory labs";

    // ---- diffusion core ----
    m.def("marginal_params",
          [](const std::string& kind, double T, double t) {
              return marginal_params(make_process(kind, T), t);
          },
          py::arg("kind"), py::arg("T"), py::arg("t"));

    m.def("edm_times", [](double T, std::size_t steps, double t_min, double rho) {
        return TimeGrid::edm(T, steps, t_min, rho).times;
    }, py::arg("T"), py::arg("steps"), py::arg("t_min") = 0.002, py::arg("rho") = 7.0);

    m.def("analytic_gaussian_score",
          [](const std::string& kind, double T, std::vector<double> mean, std::vector<double> var,
             py::array_t<double> x, double t) {
              auto model = make_analytic_model(kind, T, std::move(mean), std::move(var));
              return to_numpy(model.score(to_tensor(x), t));
          },
          py::arg("kind"), py::arg("T"), py::arg("mean"), py::arg("var"), py::arg("x"), py::arg("t"));

    m.def("ddim_invert_analytic",
          [](const std::string& kind, double T, std::vector<double> mean, std::vector<double> var,
             py::array_t<double> x0, std::size_t steps, double t_min) {
              auto model = make_analytic_model(kind, T, std::move(mean), std::move(var));
              return to_numpy(ddim_invert(model, to_tensor(x0), TimeGrid::edm(T, steps, t_min)));
          },
          py::arg("kind"), py::arg("T"), py::arg("mean"), py::arg("var"), py::arg("x0"),
          py::arg("steps") = 80, py::arg("t_min") = 0.002);

    m.def("ddim_generate_analytic",
          [](const std::string& kind, double T, std::vector<double> mean, std::vector<double> var,
             py::array_t<double> z, std::size_t steps, double t_min) {
              auto model = make_analytic_model(kind, T, std::move(mean), std::move(var));
              return to_numpy(ddim_generate(model, to_tensor(z), TimeGrid::edm(T, steps, t_min)));
          },
          py::arg("kind"), py::arg("T"), py::arg("mean"), py::arg("var"), py::arg("z"),
          py::arg("steps") = 80, py::arg("t_min") = 0.002);

    m.def("prior_sample",
          [](const std::string& kind, double T, std::size_t dim, std::size_t n, std::uint64_t seed) {
              Rng rng(seed);
              return to_numpy(prior_sample(make_process(kind, T), dim, n, rng));
          },
          py::arg("kind"), py::arg("T"), py::arg("dim"), py::arg("n"), py::arg("seed") = 0);

    // ---- pair store ----
    m.def("downsample",
          [](py::array_t<double> x, const std::string& kind, std::size_t factor,
             const std::string& layout, std::size_t grid_h, std::size_t grid_w, std::size_t channels) {
              DownsampleOp op;
              op.kind = kind == "subsample" ? DownsampleOp::Kind::subsample
                                            : DownsampleOp::Kind::average_pool;
              op.factor = factor;
              op.layout = layout_from_string(layout);
              op.grid_h = grid_h;
              op.grid_w = grid_w;
              op.channels = channels;
              return to_numpy(downsample(op, to_tensor(x)));
          },
          py::arg("x"), py::arg("kind") = "average-pool", py::arg("factor") = 2,
          py::arg("layout") = "vector", py::arg("grid_h") = 0, py::arg("grid_w") = 0,
          py::arg("channels") = 1);

    // ---- distiller ----
    m.def("adaptive_lambda", &adaptive_lambda, py::arg("grad_rec_sq"), py::arg("grad_adv_sq"),
          py::arg("coeff") = 0.2, py::arg("clamp_min") = 1e-6, py::arg("clamp_max") = 10.0);

    // ---- cfg ----
    m.def("guided_gaussian",
          [](double cond_mean, double cond_var, double marg_mean, double marg_var, double omega) {
              Gaussian1 g = guided_gaussian({cond_mean, cond_var}, {marg_mean, marg_var}, omega);
              return std::make_pair(g.mean, g.var);
          },
          py::arg("cond_mean"), py::arg("cond_var"), py::arg("marg_mean"), py::arg("marg_var"),
          py::arg("omega"));

    // ---- control ----
    m.def("slerp", &slerp, py::arg("a"), py::arg("b"), py::arg("t"));

    // ---- metrics ----
    m.def("w1_sorted", &w1_sorted, py::arg("a"), py::arg("b"));
    m.def("sliced_wasserstein",
          [](py::array_t<double> x, py::array_t<double> y, std::size_t n_proj, std::uint64_t seed) {
              return sliced_wasserstein(to_tensor(x), to_tensor(y), n_proj, seed);
          },
          py::arg("x"), py::arg("y"), py::arg("n_proj") = 64, py::arg("seed") = 1234);

    // ---- theory lab ----
    m.def("hurwitz_check",
          [](py::array_t<double> j, double threshold) {
              Tensor t = to_tensor(j);
              if (t.rank() != 2 || t.dim(0) != t.dim(1))
                  throw std::invalid_argument("hurwitz_check: square matrix required");
              auto rep = theory::hurwitz_check(t.data, t.dim(0), threshold);
              py::dict out;
              out["is_hurwitz"] = rep.is_hurwitz;
              out["max_real_part"] = rep.max_real_part;
              std::vector<std::pair<double, double>> spec;
              for (auto ev : rep.spectrum) spec.push_back({ev.real(), ev.imag()});
              out["spectrum"] = spec;
              return out;
          },
          py::arg("j"), py::arg("threshold") = -1e-10);

    m.def("w2_bound_check",
          [](double sigma, double T, double eps_dm, double gen_scale, double gen_bias) {
              theory::BoundInstance in;
              in.sigma = sigma;
              in.T = T;
              in.eps_dm = eps_dm;
              in.gen_scale = gen_scale == 0.0 ? theory::true_inverse_scale(in) : gen_scale;
              in.gen_bias = gen_bias;
              auto rep = theory::w2_bound_check(in);
              py::dict out;
              out["lhs"] = rep.lhs;
              out["rhs"] = rep.rhs;
              out["holds"] = rep.holds;
              out["terms"] = rep.terms;
              return out;
          },
          py::arg("sigma"), py::arg("T"), py::arg("eps_dm") = 0.0, py::arg("gen_scale") = 0.0,
          py::arg("gen_bias") = 0.0);

    m.def("w1_bound_check",
          [](double sigma, double T, double eps_dm, double gen_scale, std::optional<std::size_t> n) {
              theory::BoundInstance in;
              in.sigma = sigma;
              in.T = T;
              in.eps_dm = eps_dm;
              in.gen_scale = gen_scale == 0.0 ? theory::true_inverse_scale(in) : gen_scale;
              auto rep = theory::w1_bound_check(in, n);
              py::dict out;
              out["lhs"] = rep.lhs;
              out["rhs"] = rep.rhs;
              out["holds"] = rep.holds;
              out["terms"] = rep.terms;
              return out;
          },
          py::arg("sigma"), py::arg("T"), py::arg("eps_dm") = 0.0, py::arg("gen_scale") = 0.0,
          py::arg("empirical_n") = std::nullopt);

    m.def("optimality_gap",
          [](const std::string& mode) {
              theory::TabularOptInstance inst;
              inst.data_values = {-1.0, 0.0, 1.0};
              inst.data_probs = {0.5, 0.3, 0.2};
              inst.latent_probs = {0.5, 0.3, 0.2};
              inst.encoder = {0, 1, 2};
              inst.teacher_map = {1, 2, 0};
              auto res = theory::optimality_search(inst, mode == "kd_gan"
                                                             ? theory::OptimalityMode::kd_gan
                                                             : theory::OptimalityMode::pagoda);
              py::dict out;
              out["best_value"] = res.best_value;
              out["min_tv"] = res.min_tv;
              out["max_tv"] = res.max_tv;
              out["n_minimizers"] = res.best_tables.size();
              return out;
          },
          py::arg("mode") = "pagoda");

    m.def("simulate_altgd",
          [](const std::string& instance, double eta, double h, std::size_t steps) {
              theory::StabilityInstance inst =
                  instance == "dirac_gan"  ? theory::dirac_gan_instance()
                  : instance == "mixture"  ? theory::mixture_instance(eta)
                  : instance == "curved"   ? theory::curved_disc_instance(eta, 0.3)
                                           : theory::linear_instance(eta);
              std::vector<double> th = inst.theta_star, ps = inst.psi_star;
              for (auto& v : th) v += 0.3;
              for (auto& v : ps) v += 0.2;
              auto res = theory::simulate_altgd(inst, th, ps, h, steps);
              py::dict out;
              out["converged"] = res.converged;
              out["fitted_rate"] = res.fitted_rate;
              out["final_distance"] = res.distances.back();
              return out;
          },
          py::arg("instance") = "linear", py::arg("eta") = 1.0, py::arg("h") = 0.05,
          py::arg("steps") = 2000);

    // ---- datasets, tensor io, CLI surface ----
    m.def("dataset_names", &dataset_names);
    m.def("sample_dataset",
          [](const std::string& name, std::size_t n, std::uint64_t seed, bool high_res) {
              ToyDataset d = make_dataset(name);
              Rng rng(seed);
              return to_numpy(high_res ? d.sample_high(rng, n) : sample_base(d, rng, n));
          },
          py::arg("name"), py::arg("n"), py::arg("seed") = 0, py::arg("high_res") = false);

    m.def("save_tensor", [](const std::string& path, py::array_t<double> x) {
        save_tensor(path, to_tensor(x));
    });
    m.def("load_tensor", [](const std::string& path) { return to_numpy(load_tensor(path)); });

    m.def("run_command",
          [](const std::string& command, const std::string& config_json, const std::string& out_dir) {
              nlohmann::json cfg =
                  config_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(config_json);
              cfg["__out"] = out_dir.empty() ? cli::resolve_out_dir(cfg, "") : out_dir;
              return cli::run_command(command, cfg).dump();
          },
          py::arg("command"), py::arg("config_json") = "", py::arg("out_dir") = "");
}
