#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pagoda/autograd.hpp"
#include "pagoda/checkpoint.hpp"
#include "pagoda/nn.hpp"
#include "pagoda/optim.hpp"
#include "pagoda/rng.hpp"

using namespace pagoda;

namespace {

// Central finite differences of a scalar function of one flat parameter
// vector; the independent oracle for every reverse-mode check here.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double eps = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + eps;
        double hi = f(x);
        x[i] = keep - eps;
        double lo = f(x);
        x[i] = keep;
        g[i] = (hi - lo) / (2.0 * eps);
    }
    return g;
}

} // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0, 3.0}));
    CHECK(Tensor::scalar(4.0).item() == 4.0);
}

TEST_CASE("grad of w^2 at w=3 is 6") {
    ParamSet ps;
    Var w = ps.add("w", Tensor::scalar(3.0));
    Var f = square(w);
    auto g = grad(f, ps);
    CHECK(g.size() == 1);
    CHECK(g[0][0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("grad of a constant is zero") {
    ParamSet ps;
    Var w = ps.add("w", Tensor::scalar(3.0));
    Var c = constant(Tensor::scalar(7.0));
    Var f = add(mul(w, constant(Tensor::scalar(0.0))), c);
    auto g = grad(f, ps);
    CHECK(g[0][0] == 0.0);
}

TEST_CASE("grad rejects non-scalar roots and NaN forward values") {
    ParamSet ps;
    Var w = ps.add("w", Tensor::vector({1.0, 2.0}));
    CHECK_THROWS_AS(backward(w), autograd_error);

    Var bad = log_v(shift(neg(square(w)), -1.0)); // log of a negative number
    Var loss = sum(bad);
    CHECK_THROWS_WITH_AS(backward(loss), doctest::Contains("log"), autograd_error);
}

TEST_CASE("sum(tanh(W x)) gradient matches central finite differences") {
    Rng rng(17);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor w0 = rng.normal_tensor({3, 4}, 0.0, 0.7);
        Tensor x0 = rng.normal_tensor({5, 3}, 0.0, 1.0);
        ParamSet ps;
        Var w = ps.add("W", w0);
        Var f = sum(tanh_v(matmul(constant(x0), w)));
        auto g = grad(f, ps);

        auto scalar_f = [&](const std::vector<double>& flat) {
            Tensor wt({3, 4}, flat);
            Var fw = sum(tanh_v(matmul(constant(x0), constant(wt))));
            return fw->value.item();
        };
        auto fd = fd_gradient(scalar_f, w0.data);
        for (std::size_t i = 0; i < fd.size(); ++i) {
            double denom = std::max(std::fabs(fd[i]), 1e-8);
            CHECK(std::fabs(g[0][i] - fd[i]) / denom < 1e-4);
        }
    }
}

TEST_CASE("every differentiable primitive passes the finite-difference check") {
    Rng rng(23);
    using Unary = Var (*)(const Var&);
    std::vector<std::pair<const char*, Unary>> ops = {
        {"relu", relu},     {"silu", silu},       {"tanh", tanh_v}, {"sigmoid", sigmoid},
        {"exp", exp_v},     {"softplus", softplus}, {"square", square}, {"neg", neg},
    };
    for (auto [name, op] : ops) {
        CAPTURE(name);
        int checked = 0;
        for (int trial = 0; trial < 100; ++trial) {
            Tensor x0 = rng.normal_tensor({3}, 0.0, 1.2);
            bool near_kink = false;
            for (double v : x0.data)
                if (std::string(name) == "relu" && std::fabs(v) < 1e-3) near_kink = true;
            if (near_kink) continue;
            ++checked;
            ParamSet ps;
            Var x = ps.add("x", x0);
            auto g = grad(sum(op(x)), ps);
            auto fd = fd_gradient(
                [&](const std::vector<double>& flat) {
                    Var fx = sum(op(constant(Tensor({3}, flat))));
                    return fx->value.item();
                },
                x0.data);
            for (std::size_t i = 0; i < fd.size(); ++i) {
                double denom = std::max({std::fabs(fd[i]), std::fabs(g[0][i]), 1e-6});
                CHECK(std::fabs(g[0][i] - fd[i]) / denom < 1e-4);
            }
        }
        CHECK(checked >= 90);
    }
}

TEST_CASE("matmul, conv and gather gradients match finite differences") {
    Rng rng(31);
    SUBCASE("conv1d") {
        Tensor x0 = rng.normal_tensor({2, 5, 3}, 0.0, 1.0);
        Tensor k0 = rng.normal_tensor({3, 3, 2}, 0.0, 0.5);
        Tensor b0 = rng.normal_tensor({2}, 0.0, 0.2);
        ParamSet ps;
        Var k = ps.add("k", k0);
        auto g = grad(sum(square(conv1d(constant(x0), k, constant(b0)))), ps);
        auto fd = fd_gradient(
            [&](const std::vector<double>& flat) {
                Var f = sum(square(conv1d(constant(x0), constant(Tensor({3, 3, 2}, flat)),
                                          constant(b0))));
                return f->value.item();
            },
            k0.data);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(std::fabs(g[0][i] - fd[i]) / std::max(std::fabs(fd[i]), 1e-6) < 1e-4);
    }
    SUBCASE("conv_transpose1d_x2") {
        Tensor x0 = rng.normal_tensor({1, 4, 2}, 0.0, 1.0);
        Tensor k0 = rng.normal_tensor({4, 2, 2}, 0.0, 0.5);
        Tensor b0 = rng.normal_tensor({2}, 0.0, 0.2);
        ParamSet ps;
        Var x = ps.add("x", x0);
        auto g = grad(sum(square(conv_transpose1d_x2(x, constant(k0), constant(b0)))), ps);
        auto fd = fd_gradient(
            [&](const std::vector<double>& flat) {
                Var f = sum(square(conv_transpose1d_x2(constant(Tensor({1, 4, 2}, flat)),
                                                       constant(k0), constant(b0))));
                return f->value.item();
            },
            x0.data);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(std::fabs(g[0][i] - fd[i]) / std::max(std::fabs(fd[i]), 1e-6) < 1e-4);
    }
    SUBCASE("conv2d and transpose2d shapes") {
        Tensor x0 = rng.normal_tensor({2, 4, 4, 3}, 0.0, 1.0);
        Tensor k0 = rng.normal_tensor({3, 3, 3, 5}, 0.0, 0.3);
        Var y = conv2d(constant(x0), constant(k0), constant(Tensor({5})));
        CHECK(y->value.shape == std::vector<std::size_t>{2, 4, 4, 5});
        Tensor ku = rng.normal_tensor({4, 4, 3, 3}, 0.0, 0.3);
        Var u = conv_transpose2d_x2(constant(x0), constant(ku), constant(Tensor({3})));
        CHECK(u->value.shape == std::vector<std::size_t>{2, 8, 8, 3});
    }
    SUBCASE("gather_rows") {
        Tensor t0 = rng.normal_tensor({4, 3}, 0.0, 1.0);
        ParamSet ps;
        Var t = ps.add("t", t0);
        auto g = grad(sum(square(gather_rows(t, {1, 1, 3}))), ps);
        auto fd = fd_gradient(
            [&](const std::vector<double>& flat) {
                Var f = sum(square(gather_rows(constant(Tensor({4, 3}, flat)), {1, 1, 3})));
                return f->value.item();
            },
            t0.data);
        for (std::size_t i = 0; i < fd.size(); ++i)
            CHECK(g[0][i] == doctest::Approx(fd[i]).epsilon(1e-4));
    }
}

TEST_CASE("sgd step: lr=0.1, w=1, g=2 -> 0.8") {
    ParamSet ps;
    ps.add("w", Tensor::scalar(1.0));
    OptimizerState opt({OptKind::sgd, 0.1});
    opt.step(ps, {{"w", Tensor::scalar(2.0)}});
    CHECK(ps.at("w").var->value[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("adam with zero gradient leaves weights unchanged") {
    ParamSet ps;
    ps.add("w", Tensor::scalar(1.5));
    OptimizerState opt({OptKind::adam, 1e-2});
    for (int i = 0; i < 5; ++i) opt.step(ps, {{"w", Tensor::scalar(0.0)}});
    CHECK(ps.at("w").var->value[0] == 1.5);
}

TEST_CASE("adam single step matches a scalar reference implementation bit-for-bit") {
    // independent scalar re-implementation of the update on f(w) = w^2
    double w_ref = 1.0, m = 0.0, v = 0.0;
    double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    double g = 2.0 * w_ref;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    double mhat = m / (1 - b1);
    double vhat = v / (1 - b2);
    w_ref -= lr * mhat / (std::sqrt(vhat) + eps);

    ParamSet ps;
    Var w = ps.add("w", Tensor::scalar(1.0));
    OptimizerState opt({OptKind::adam, lr, b1, b2, eps});
    backward(square(w));
    opt.step_from_tape(ps);
    CHECK(ps.at("w").var->value[0] == w_ref); // bit-for-bit
}

TEST_CASE("optimizer updates are deterministic given state and grads") {
    auto run = [] {
        Rng rng(5);
        ParamSet ps;
        ps.add("w", rng.normal_tensor({8}, 0.0, 1.0));
        OptimizerState opt({OptKind::radam, 3e-3});
        for (int i = 0; i < 20; ++i) {
            Tensor g = rng.normal_tensor({8}, 0.0, 1.0);
            opt.step(ps, {{"w", g}});
        }
        return ps.at("w").var->value.data;
    };
    CHECK(run() == run());
}

TEST_CASE("ema_update") {
    ParamSet ps;
    ps.add("w", Tensor::scalar(1.0));
    SUBCASE("first call copies, then decays") {
        ema_update(ps, 0.999);
        CHECK(ps.at("w").ema->data[0] == 1.0);
        ps.at("w").ema->data[0] = 0.0;
        ema_update(ps, 0.999);
        CHECK(ps.at("w").ema->data[0] == doctest::Approx(0.001).epsilon(1e-12));
    }
    SUBCASE("decay 0 snaps to the parameter") {
        ema_update(ps, 0.0);
        ps.at("w").ema->data[0] = 123.0;
        ema_update(ps, 0.0);
        CHECK(ps.at("w").ema->data[0] == 1.0);
    }
    SUBCASE("decay 0.5 midpoint") {
        ema_update(ps, 0.5);
        ps.at("w").ema->data[0] = 2.0;
        ps.at("w").var->value[0] = 4.0;
        ema_update(ps, 0.5);
        CHECK(ps.at("w").ema->data[0] == 3.0);
    }
    SUBCASE("invalid decay rejected") {
        CHECK_THROWS(ema_update(ps, 1.0));
        CHECK_THROWS(ema_update(ps, -0.1));
    }
    SUBCASE("geometric convergence to a fixed parameter") {
        double decay = 0.9;
        ps.at("w").var->value[0] = 2.0;
        ema_update(ps, decay); // shadow = 2 (copy)
        ps.at("w").ema->data[0] = 0.0;
        double gap0 = 2.0;
        for (int n = 1; n <= 30; ++n) {
            ema_update(ps, decay);
            double gap = std::fabs(ps.at("w").ema->data[0] - 2.0);
            CHECK(gap <= std::pow(decay, n) * gap0 + 1e-12);
        }
    }
}

TEST_CASE("build_mlp") {
    Rng rng(7);
    SUBCASE("identity-initialized [2,2] maps input to itself") {
        ParamSet ps;
        Mlp m = build_mlp(ps, "net", {2, 2}, Activation::tanh, rng);
        Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
        ps.at("net.w0").var->value = eye;
        Tensor x = rng.normal_tensor({4, 2}, 0.0, 1.0);
        Tensor y = m.forward(constant(x))->value;
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
    }
    SUBCASE("forward shape on [1,8,1] batch 5") {
        ParamSet ps;
        Mlp m = build_mlp(ps, "net", {1, 8, 1}, Activation::silu, rng);
        Tensor y = m.forward(constant(rng.normal_tensor({5, 1}, 0.0, 1.0)))->value;
        CHECK(y.shape == std::vector<std::size_t>{5, 1});
    }
    SUBCASE("empty width list rejected") {
        ParamSet ps;
        CHECK_THROWS(build_mlp(ps, "net", {}, Activation::relu, rng));
        CHECK_THROWS(build_mlp(ps, "net2", {4}, Activation::relu, rng));
        CHECK_THROWS(build_mlp(ps, "net3", {4, 0, 2}, Activation::relu, rng));
    }
    SUBCASE("gradient of output sum passes the finite-difference check") {
        ParamSet ps;
        Mlp m = build_mlp(ps, "net", {2, 6, 1}, Activation::silu, rng);
        Tensor x = rng.normal_tensor({3, 2}, 0.0, 1.0);
        backward(sum(m.forward(constant(x))));
        for (const auto& e : ps.entries()) {
            Tensor base = e.var->value;
            auto fd = fd_gradient(
                [&](const std::vector<double>& flat) {
                    e.var->value = Tensor(base.shape, flat);
                    double out = sum(m.forward(constant(x)))->value.item();
                    return out;
                },
                base.data);
            e.var->value = base;
            backward(sum(m.forward(constant(x))));
            for (std::size_t i = 0; i < fd.size(); ++i)
                CHECK(std::fabs(e.var->grad[i] - fd[i]) /
                          std::max({std::fabs(fd[i]), std::fabs(e.var->grad[i]), 1e-6}) <
                      1e-4);
        }
    }
}

TEST_CASE("checkpoint roundtrip with EMA shadows and trainable flags") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "pagoda_test_ckpt";
    fs::create_directories(dir);
    std::string path = (dir / "model.ckpt").string();

    Rng rng(11);
    ParamSet ps;
    ps.add("a", rng.normal_tensor({3, 2}, 0.0, 1.0));
    ps.add("b", rng.normal_tensor({4}, 0.0, 1.0), false);
    ema_update(ps, 0.5);
    save_checkpoint(path, ps, {{"note", "test"}});

    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.meta["note"] == "test");
    CHECK(ck.at("a").same_shape(ps.at("a").var->value));
    CHECK(ck.has("a.ema"));
    CHECK(ck.trainable.at("b") == false);

    ParamSet ps2;
    ps2.add("a", Tensor({3, 2}));
    ps2.add("b", Tensor({4}));
    restore_params(ps2, ck);
    CHECK(ps2.at("a").var->value.data == ps.at("a").var->value.data);
    CHECK(ps2.at("b").trainable == false);
    CHECK(ps2.at("a").ema.has_value());

    SUBCASE("bad magic rejected") {
        std::string bytes = read_file(path);
        bytes[0] = 'X';
        write_file_atomic(path + ".bad", bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(path + ".bad"), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
    SUBCASE("truncation rejected") {
        std::string bytes = read_file(path);
        write_file_atomic(path + ".cut", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS(load_checkpoint(path + ".cut"));
    }
}

TEST_CASE("tensor file roundtrip and empty tensors") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "pagoda_test_ckpt";
    fs::create_directories(dir);
    std::string path = (dir / "t.pgts").string();
    Rng rng(3);
    Tensor t = rng.normal_tensor({5, 2}, 0.0, 1.0);
    save_tensor(path, t);
    Tensor u = load_tensor(path);
    CHECK(u.shape == t.shape);
    CHECK(u.data == t.data);

    save_tensor(path, Tensor({0, 7}));
    Tensor e = load_tensor(path);
    CHECK(e.shape == std::vector<std::size_t>{0, 7});
}
