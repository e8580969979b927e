#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pagoda/checkpoint.hpp"
#include "pagoda/datasets.hpp"
#include "pagoda/pairs.hpp"

using namespace pagoda;

namespace {

ScoreModel analytic_model(ProcessKind kind, double T, double sigma, std::size_t dim) {
    ForwardProcess p{kind, T};
    GaussianData d{std::vector<double>(dim, 0.0), std::vector<double>(dim, sigma * sigma)};
    return {p, std::make_shared<AnalyticGaussianScore>(std::move(d), p), dim, 0};
}

} // namespace

TEST_CASE("downsample") {
    SUBCASE("average-pool factor 2 takes block means") {
        DownsampleOp op;
        Tensor x = Tensor::vector({0.0, 2.0, 4.0, 6.0});
        Tensor y = downsample(op, x);
        CHECK(y.data == std::vector<double>{1.0, 5.0});
    }
    SUBCASE("subsample factor 2 strides from index 0") {
        DownsampleOp op;
        op.kind = DownsampleOp::Kind::subsample;
        Tensor y = downsample(op, Tensor::vector({0.0, 2.0, 4.0, 6.0}));
        CHECK(y.data == std::vector<double>{0.0, 4.0});
    }
    SUBCASE("constants map to constants under either op") {
        for (auto kind : {DownsampleOp::Kind::average_pool, DownsampleOp::Kind::subsample}) {
            DownsampleOp op;
            op.kind = kind;
            Tensor y = downsample(op, Tensor::full({8}, 7.0));
            for (double v : y.data) CHECK(v == 7.0);
        }
        DownsampleOp grid_op;
        grid_op.layout = Layout::grid_2d;
        grid_op.grid_h = 4;
        grid_op.grid_w = 4;
        Tensor y = downsample(grid_op, Tensor::full({16}, 7.0));
        CHECK(y.size() == 4);
        for (double v : y.data) CHECK(v == 7.0);
    }
    SUBCASE("divisibility violations rejected") {
        DownsampleOp op;
        CHECK_THROWS(downsample(op, Tensor::vector({1.0, 2.0, 3.0})));
        DownsampleOp grid_op;
        grid_op.layout = Layout::grid_2d;
        grid_op.grid_h = 3;
        grid_op.grid_w = 4;
        CHECK_THROWS(downsample(grid_op, Tensor({12})));
    }
    SUBCASE("grid average-pool pools 2x2 blocks per channel") {
        DownsampleOp op;
        op.layout = Layout::grid_2d;
        op.grid_h = 2;
        op.grid_w = 2;
        Tensor x = Tensor::vector({1.0, 2.0, 3.0, 4.0});
        CHECK(downsample(op, x).data == std::vector<double>{2.5});
    }
    SUBCASE("average-pool commutes with linear mixtures") {
        Rng rng(3);
        DownsampleOp op;
        Tensor x = rng.normal_tensor({6}, 0.0, 1.0), y = rng.normal_tensor({6}, 0.0, 1.0);
        double alpha = 0.3, beta = 1.9; // need not sum to 1
        Tensor mix({6});
        for (std::size_t i = 0; i < 6; ++i) mix[i] = alpha * x[i] + beta * y[i];
        Tensor lhs = downsample(op, mix);
        Tensor dx = downsample(op, x), dy = downsample(op, y);
        for (std::size_t i = 0; i < lhs.size(); ++i)
            CHECK(lhs[i] == doctest::Approx(alpha * dx[i] + beta * dy[i]).epsilon(1e-14));
    }
}

TEST_CASE("build_pairs against analytic teachers") {
    Rng rng(11);
    DownsampleOp op; // average-pool factor 2, vector

    SUBCASE("vp sigma=1 teacher: z equals x_low exactly") {
        ScoreModel teacher = analytic_model(ProcessKind::VP, 2.0, 1.0, 2);
        TimeGrid grid = TimeGrid::edm(2.0, 40);
        Tensor high = rng.normal_tensor({16, 4}, 0.0, 1.0);
        PairSet set = build_pairs(high, {}, teacher, op, grid, {});
        REQUIRE(set.records.size() == 16);
        for (const auto& r : set.records) {
            for (std::size_t j = 0; j < r.z.size(); ++j)
                CHECK(r.z[j] == doctest::Approx(r.x_low[j]).epsilon(1e-12));
            // x_low is exactly the block mean of x_high
            for (std::size_t j = 0; j < r.x_low.size(); ++j)
                CHECK(r.x_low[j] == 0.5 * (r.x_high[2 * j] + r.x_high[2 * j + 1]));
            CHECK(r.c == -1);
            CHECK(std::isnan(r.omega));
        }
    }
    SUBCASE("ve sigma=1 T=sqrt(3): z is 2 x_low within 1e-3") {
        ScoreModel teacher = analytic_model(ProcessKind::VE, std::sqrt(3.0), 1.0, 2);
        TimeGrid grid = TimeGrid::edm(std::sqrt(3.0), 80);
        Tensor high = rng.normal_tensor({8, 4}, 0.0, 1.0);
        PairSet set = build_pairs(high, {}, teacher, op, grid, {});
        for (const auto& r : set.records)
            for (std::size_t j = 0; j < r.z.size(); ++j)
                CHECK(std::fabs(r.z[j] - 2.0 * r.x_low[j]) < 1e-3);
    }
    SUBCASE("empty dataset gives an empty set with a valid header") {
        ScoreModel teacher = analytic_model(ProcessKind::VP, 1.0, 1.0, 2);
        TimeGrid grid = TimeGrid::edm(1.0, 10);
        BuildPairsConfig cfg;
        cfg.teacher_hash = "cafe";
        cfg.seed = 9;
        PairSet set = build_pairs(Tensor({0, 4}), {}, teacher, op, grid, cfg);
        CHECK(set.records.empty());
        CHECK(set.provenance["teacher_hash"] == "cafe");
        CHECK(set.provenance["seed"] == 9);
    }
    SUBCASE("dimension mismatch rejected") {
        ScoreModel teacher = analytic_model(ProcessKind::VP, 1.0, 1.0, 3);
        TimeGrid grid = TimeGrid::edm(1.0, 10);
        Tensor high = rng.normal_tensor({4, 4}, 0.0, 1.0); // downsamples to dim 2 != 3
        CHECK_THROWS(build_pairs(high, {}, teacher, op, grid, {}));
    }
    SUBCASE("fraction keeps the leading records") {
        ScoreModel teacher = analytic_model(ProcessKind::VP, 1.0, 1.0, 2);
        TimeGrid grid = TimeGrid::edm(1.0, 10);
        Tensor high = rng.normal_tensor({10, 4}, 0.0, 1.0);
        BuildPairsConfig cfg;
        cfg.fraction = 0.5;
        PairSet set = build_pairs(high, {}, teacher, op, grid, cfg);
        CHECK(set.records.size() == 5);
        CHECK(set.records[0].x_high[0] == high.data[0]);
    }
}

TEST_CASE("build_pairs determinism and generate-consistency") {
    Rng rng(13);
    DownsampleOp op;
    ScoreModel teacher = analytic_model(ProcessKind::VE, std::sqrt(3.0), 1.0, 1);
    TimeGrid grid = TimeGrid::edm(std::sqrt(3.0), 80);
    Tensor high = rng.normal_tensor({12, 2}, 0.0, 1.0);

    PairSet a = build_pairs(high, {}, teacher, op, grid, {});
    PairSet b = build_pairs(high, {}, teacher, op, grid, {});
    CHECK(a == b);
    CHECK(encode_pairs(a) == encode_pairs(b)); // byte-identical

    // ddim_generate(teacher, z) returns to x_low within the round-trip bound
    Tensor z = pairs_z(a, 0, a.records.size());
    Tensor back = ddim_generate(teacher, z, grid);
    Tensor xl = pairs_x_low(a, 0, a.records.size());
    for (std::size_t i = 0; i < back.size(); ++i)
        CHECK(std::fabs(back[i] - xl[i]) <= 2e-3 * (1.0 + std::fabs(xl[i])));
}

TEST_CASE("pair file io") {
    namespace fs = std::filesystem;
    std::string path = (fs::temp_directory_path() / "pagoda_pairs.pgpr").string();
    Rng rng(17);
    DownsampleOp op;
    ScoreModel teacher = analytic_model(ProcessKind::VP, 1.5, 1.0, 2);
    TimeGrid grid = TimeGrid::edm(1.5, 20);
    Tensor high = rng.normal_tensor({3, 4}, 0.0, 1.0);
    BuildPairsConfig cfg;
    cfg.teacher_hash = "feed";
    PairSet set = build_pairs(high, {}, teacher, op, grid, cfg);

    SUBCASE("round trip is bit-exact and re-save is byte-identical") {
        save_pairs(set, path);
        PairSet loaded = load_pairs(path);
        CHECK(loaded == set);
        std::string once = read_file(path);
        save_pairs(loaded, path);
        CHECK(read_file(path) == once);
    }
    SUBCASE("corrupted magic rejected") {
        std::string bytes = encode_pairs(set);
        bytes[0] = 'X';
        write_file_atomic(path, bytes);
        CHECK_THROWS_WITH_AS(load_pairs(path), doctest::Contains("bad magic"), std::runtime_error);
    }
    SUBCASE("truncation rejected") {
        std::string bytes = encode_pairs(set);
        write_file_atomic(path, bytes.substr(0, bytes.size() - 10));
        CHECK_THROWS(load_pairs(path));
    }
    SUBCASE("header-only file loads as an empty set") {
        PairSet empty = build_pairs(Tensor({0, 4}), {}, teacher, op, grid, cfg);
        save_pairs(empty, path);
        PairSet loaded = load_pairs(path);
        CHECK(loaded.records.empty());
        CHECK(loaded.provenance == empty.provenance);
    }
}

TEST_CASE("builtin datasets downsample exactly to their base resolution") {
    Rng rng(23);
    for (const auto& name : dataset_names()) {
        CAPTURE(name);
        ToyDataset d = make_dataset(name);
        Tensor high = d.sample_high(rng, 64);
        CHECK(high.dim(1) == d.high_dim);
        Tensor base = downsample(dataset_downsample_op(d), high);
        CHECK(base.dim(1) == d.base_dim);
        CHECK(base.all_finite());
    }
    CHECK_THROWS(make_dataset("no-such-dataset"));
}
