#include "pagoda/pairs.hpp"

#include <cstring>
#include <stdexcept>

#include "pagoda/checkpoint.hpp"

namespace pagoda {

Layout layout_from_string(const std::string& s) {
    if (s == "vector") return Layout::vector_1d;
    if (s == "grid") return Layout::grid_2d;
    throw std::invalid_argument("unknown layout: " + s);
}

std::string to_string(Layout l) { return l == Layout::vector_1d ? "vector" : "grid"; }

nlohmann::json DownsampleOp::to_json() const {
    return {{"kind", kind == Kind::average_pool ? "average-pool" : "subsample"},
            {"factor", factor},
            {"layout", to_string(layout)},
            {"grid_h", grid_h},
            {"grid_w", grid_w},
            {"channels", channels}};
}

DownsampleOp DownsampleOp::from_json(const nlohmann::json& j) {
    DownsampleOp op;
    std::string k = j.value("kind", "average-pool");
    op.kind = k == "subsample" ? Kind::subsample : Kind::average_pool;
    op.factor = j.value("factor", std::size_t{2});
    op.layout = layout_from_string(j.value("layout", "vector"));
    op.grid_h = j.value("grid_h", std::size_t{0});
    op.grid_w = j.value("grid_w", std::size_t{0});
    op.channels = j.value("channels", std::size_t{1});
    return op;
}

std::size_t DownsampleOp::out_dim(std::size_t in_dim) const {
    if (layout == Layout::vector_1d) return in_dim / factor;
    return in_dim / (factor * factor);
}

namespace {

void downsample_row(const DownsampleOp& op, const double* in, std::size_t d, double* out) {
    if (op.layout == Layout::vector_1d) {
        std::size_t n_out = d / op.factor;
        if (op.kind == DownsampleOp::Kind::average_pool) {
            for (std::size_t i = 0; i < n_out; ++i) {
                double s = 0.0;
                for (std::size_t k = 0; k < op.factor; ++k) s += in[i * op.factor + k];
                out[i] = s / static_cast<double>(op.factor);
            }
        } else {
            for (std::size_t i = 0; i < n_out; ++i) out[i] = in[i * op.factor];
        }
        return;
    }
    // grid: (h, w, c) row-major
    std::size_t h = op.grid_h, w = op.grid_w, c = op.channels, f = op.factor;
    std::size_t ho = h / f, wo = w / f;
    for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j)
            for (std::size_t ch = 0; ch < c; ++ch) {
                if (op.kind == DownsampleOp::Kind::average_pool) {
                    double s = 0.0;
                    for (std::size_t a = 0; a < f; ++a)
                        for (std::size_t b = 0; b < f; ++b)
                            s += in[((i * f + a) * w + (j * f + b)) * c + ch];
                    out[(i * wo + j) * c + ch] = s / static_cast<double>(f * f);
                } else {
                    out[(i * wo + j) * c + ch] = in[((i * f) * w + (j * f)) * c + ch];
                }
            }
}

} // namespace

Tensor downsample(const DownsampleOp& op, const Tensor& x) {
    if (op.factor < 2) throw std::invalid_argument("downsample: factor must be >= 2");
    std::size_t n = x.rank() == 2 ? x.dim(0) : 1;
    std::size_t d = x.rank() == 2 ? x.dim(1) : x.size();
    if (op.layout == Layout::vector_1d) {
        if (d % op.factor != 0)
            throw std::invalid_argument("downsample: dimension " + std::to_string(d) +
                                        " not divisible by factor " + std::to_string(op.factor));
    } else {
        if (op.grid_h * op.grid_w * op.channels != d)
            throw std::invalid_argument("downsample: grid dims do not match input size");
        if (op.grid_h % op.factor != 0 || op.grid_w % op.factor != 0)
            throw std::invalid_argument("downsample: grid dims not divisible by factor");
    }
    std::size_t d_out = op.out_dim(d);
    Tensor out(x.rank() == 2 ? std::vector<std::size_t>{n, d_out} : std::vector<std::size_t>{d_out});
    for (std::size_t r = 0; r < n; ++r)
        downsample_row(op, x.data.data() + r * d, d, out.data.data() + r * d_out);
    return out;
}

bool PairSet::operator==(const PairSet& o) const {
    if (dim_high != o.dim_high || dim_low != o.dim_low || provenance != o.provenance ||
        records.size() != o.records.size())
        return false;
    auto bits_equal = [](double a, double b) {
        std::uint64_t ba, bb;
        std::memcpy(&ba, &a, 8);
        std::memcpy(&bb, &b, 8);
        return ba == bb;
    };
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto &a = records[i], &b = o.records[i];
        if (a.x_high != b.x_high || a.x_low != b.x_low || a.z != b.z || a.c != b.c ||
            !bits_equal(a.omega, b.omega))
            return false;
    }
    return true;
}

PairSet build_pairs(const Tensor& dataset_high, const std::vector<int>& conds,
                    const ScoreModel& teacher, const DownsampleOp& op, const TimeGrid& grid,
                    const BuildPairsConfig& cfg) {
    PairSet set;
    std::size_t n_total = dataset_high.rank() == 2 ? dataset_high.dim(0) : 0;
    std::size_t n = static_cast<std::size_t>(cfg.fraction * static_cast<double>(n_total));
    n = std::min(n, n_total);
    std::size_t dh = n_total ? dataset_high.dim(1) : 0;
    std::size_t dl = dh ? op.out_dim(dh) : 0;

    if (n > 0 && dl != teacher.dim)
        throw std::invalid_argument("build_pairs: teacher dimension " + std::to_string(teacher.dim) +
                                    " != downsampled dimension " + std::to_string(dl));
    if (!conds.empty() && conds.size() != n_total)
        throw std::invalid_argument("build_pairs: one condition per dataset row required");

    set.dim_high = dh;
    set.dim_low = dl;
    set.provenance = {{"teacher_hash", cfg.teacher_hash},
                      {"grid", {{"steps", grid.steps()}, {"t_min", grid.t_min()}, {"t_max", grid.t_max()}}},
                      {"op", op.to_json()},
                      {"seed", cfg.seed}};

    if (n == 0) return set;

    Tensor high({n, dh});
    std::copy(dataset_high.data.begin(), dataset_high.data.begin() + n * dh, high.data.begin());
    Tensor low = downsample(op, high);
    std::vector<int> cs(conds.begin(), conds.begin() + (conds.empty() ? 0 : n));
    Tensor z = ddim_invert(teacher, low, grid, cs);

    set.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto& r = set.records[i];
        r.x_high.assign(high.data.begin() + i * dh, high.data.begin() + (i + 1) * dh);
        r.x_low.assign(low.data.begin() + i * dl, low.data.begin() + (i + 1) * dl);
        r.z.assign(z.data.begin() + i * dl, z.data.begin() + (i + 1) * dl);
        r.c = cs.empty() ? -1 : cs[i];
    }
    return set;
}

namespace {

constexpr char kMagic[4] = {'P', 'G', 'P', 'R'};
constexpr std::uint16_t kVersion = 1;

void put_raw(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}

template <class T>
T get_raw(const std::string& s, std::size_t off) {
    T v;
    std::memcpy(&v, s.data() + off, sizeof(T));
    return v;
}

} // namespace

std::string encode_pairs(const PairSet& set) {
    nlohmann::json header = {{"provenance", set.provenance},
                             {"count", set.records.size()},
                             {"dim_high", set.dim_high},
                             {"dim_low", set.dim_low}};
    std::string hjson = header.dump();

    std::string out;
    out.append(kMagic, 4);
    std::uint16_t ver = kVersion;
    put_raw(out, &ver, 2);
    std::uint64_t hlen = hjson.size();
    put_raw(out, &hlen, 8);
    out += hjson;
    for (const auto& r : set.records) {
        put_raw(out, r.x_high.data(), 8 * r.x_high.size());
        put_raw(out, r.x_low.data(), 8 * r.x_low.size());
        put_raw(out, r.z.data(), 8 * r.z.size());
        std::int32_t c = r.c;
        put_raw(out, &c, 4);
        put_raw(out, &r.omega, 8);
    }
    return out;
}

void save_pairs(const PairSet& set, const std::string& path) {
    write_file_atomic(path, encode_pairs(set));
}

PairSet load_pairs(const std::string& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 14 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw std::runtime_error("bad magic in pair file: " + path);
    if (get_raw<std::uint16_t>(bytes, 4) != kVersion)
        throw std::runtime_error("unsupported pair file version: " + path);
    std::uint64_t hlen = get_raw<std::uint64_t>(bytes, 6);
    if (14 + hlen > bytes.size()) throw std::runtime_error("truncated pair file header: " + path);
    nlohmann::json header = nlohmann::json::parse(bytes.substr(14, hlen));

    PairSet set;
    set.provenance = header["provenance"];
    set.dim_high = header["dim_high"];
    set.dim_low = header["dim_low"];
    std::size_t count = header["count"];
    std::size_t rec_bytes = 8 * (set.dim_high + 2 * set.dim_low) + 4 + 8;
    std::size_t off = 14 + hlen;
    if (off + count * rec_bytes > bytes.size())
        throw std::runtime_error("truncated pair file records: " + path);

    set.records.resize(count);
    for (auto& r : set.records) {
        r.x_high.resize(set.dim_high);
        std::memcpy(r.x_high.data(), bytes.data() + off, 8 * set.dim_high);
        off += 8 * set.dim_high;
        r.x_low.resize(set.dim_low);
        std::memcpy(r.x_low.data(), bytes.data() + off, 8 * set.dim_low);
        off += 8 * set.dim_low;
        r.z.resize(set.dim_low);
        std::memcpy(r.z.data(), bytes.data() + off, 8 * set.dim_low);
        off += 8 * set.dim_low;
        r.c = get_raw<std::int32_t>(bytes, off);
        off += 4;
        r.omega = get_raw<double>(bytes, off);
        off += 8;
    }
    return set;
}

namespace {
Tensor gather_field(const PairSet& s, std::size_t begin, std::size_t count,
                    const std::vector<double> PairRecord::*field, std::size_t dim) {
    if (begin + count > s.records.size()) throw std::out_of_range("pair batch out of range");
    Tensor out({count, dim});
    for (std::size_t i = 0; i < count; ++i) {
        const auto& v = s.records[begin + i].*field;
        std::copy(v.begin(), v.end(), out.data.begin() + i * dim);
    }
    return out;
}
} // namespace

Tensor pairs_z(const PairSet& s, std::size_t begin, std::size_t count) {
    return gather_field(s, begin, count, &PairRecord::z, s.dim_low);
}
Tensor pairs_x_low(const PairSet& s, std::size_t begin, std::size_t count) {
    return gather_field(s, begin, count, &PairRecord::x_low, s.dim_low);
}
Tensor pairs_x_high(const PairSet& s, std::size_t begin, std::size_t count) {
    return gather_field(s, begin, count, &PairRecord::x_high, s.dim_high);
}
std::vector<int> pairs_c(const PairSet& s, std::size_t begin, std::size_t count) {
    if (begin + count > s.records.size()) throw std::out_of_range("pair batch out of range");
    std::vector<int> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = s.records[begin + i].c;
    return out;
}

} // namespace pagoda
