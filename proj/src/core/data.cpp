#include "core/data.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

#include "core/errors.hpp"

namespace altfl {

namespace {

constexpr int kPatternSide = 8;
constexpr int kPatternClasses = 10;
constexpr double kBrightnessLo = 0.7;
constexpr double kBrightnessHi = 1.0;
constexpr double kPixelNoise = 0.15;

// 10 binary 8x8 prototypes; one per class.
std::array<Vec, kPatternClasses> pattern_prototypes() {
    std::array<Vec, kPatternClasses> protos;
    for (auto& p : protos) p.assign(kPatternSide * kPatternSide, 0.0);
    for (int y = 0; y < kPatternSide; ++y)
        for (int x = 0; x < kPatternSide; ++x) {
            int i = y * kPatternSide + x;
            bool hbar = (y == 3 || y == 4);
            bool vbar = (x == 3 || x == 4);
            if (hbar) protos[0][i] = 1.0;                                  // horizontal bar
            if (vbar) protos[1][i] = 1.0;                                  // vertical bar
            if (std::abs(y - x) <= 1) protos[2][i] = 1.0;                  // diagonal band
            if (std::abs(y - (kPatternSide - 1 - x)) <= 1) protos[3][i] = 1.0;  // anti-diagonal
            if (hbar || vbar) protos[4][i] = 1.0;                          // cross
            if (y == 0 || y == 7 || x == 0 || x == 7) protos[5][i] = 1.0;  // frame
            if ((y / 2 + x / 2) % 2 == 0) protos[6][i] = 1.0;              // checkerboard
            if (y < 4) protos[7][i] = 1.0;                                 // top half
            if ((y < 2 || y > 5) && (x < 2 || x > 5)) protos[8][i] = 1.0;  // corners
            if (y >= 2 && y <= 5 && x >= 2 && x <= 5) protos[9][i] = 1.0;  // center block
        }
    return protos;
}

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& f, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    write_bytes(f, b, 4);
}

void write_u16(std::ofstream& f, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    write_bytes(f, b, 2);
}

void read_bytes(std::ifstream& f, void* p, std::size_t n, const std::string& path) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f.gcount() != static_cast<std::streamsize>(n))
        throw parse_error(path + ": truncated file");
}

std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    read_bytes(f, b, 4, path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::ifstream& f, const std::string& path) {
    unsigned char b[2];
    read_bytes(f, b, 2, path);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

float f32_from_le(const unsigned char* b) {
    std::uint32_t u = static_cast<std::uint32_t>(b[0]) |
                      (static_cast<std::uint32_t>(b[1]) << 8) |
                      (static_cast<std::uint32_t>(b[2]) << 16) |
                      (static_cast<std::uint32_t>(b[3]) << 24);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

void f32_to_le(float f, unsigned char* b) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    b[0] = static_cast<unsigned char>(u);
    b[1] = static_cast<unsigned char>(u >> 8);
    b[2] = static_cast<unsigned char>(u >> 16);
    b[3] = static_cast<unsigned char>(u >> 24);
}

}  // namespace

Dataset Dataset::subset(const std::vector<std::size_t>& idx) const {
    Dataset out;
    out.shape = shape;
    out.class_count = class_count;
    out.xs.reserve(idx.size());
    out.ys.reserve(idx.size());
    out.provenance.reserve(idx.size());
    for (std::size_t i : idx) {
        if (i >= size()) throw invalid_argument_error("dataset subset: index out of range");
        out.xs.push_back(xs[i]);
        out.ys.push_back(ys[i]);
        out.provenance.push_back(provenance[i]);
    }
    return out;
}

Dataset make_pattern_dataset(int n, Rng& rng) {
    if (n <= 0) throw invalid_argument_error("pattern dataset: n must be positive");
    static const auto protos = pattern_prototypes();
    Dataset ds;
    ds.shape = {1, kPatternSide, kPatternSide};
    ds.class_count = kPatternClasses;
    ds.xs.reserve(n);
    ds.ys.reserve(n);
    ds.provenance.assign(n, kAuthentic);
    for (int i = 0; i < n; ++i) {
        int label = i % kPatternClasses;
        double b = rng.uniform(kBrightnessLo, kBrightnessHi);
        Vec x(protos[label].size());
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] = b * protos[label][j] + kPixelNoise * rng.normal();
        ds.xs.push_back(std::move(x));
        ds.ys.push_back(label);
    }
    return ds;
}

void save_atds(const Dataset& ds, const std::string& path) {
    if (ds.size() == 0) throw invalid_argument_error("save_atds: empty dataset");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("save_atds: cannot open " + path);
    write_bytes(f, "ATDS", 4);
    write_u32(f, 1);  // version
    write_u32(f, static_cast<std::uint32_t>(ds.size()));
    write_u32(f, static_cast<std::uint32_t>(ds.shape.c));
    write_u32(f, static_cast<std::uint32_t>(ds.shape.h));
    write_u32(f, static_cast<std::uint32_t>(ds.shape.w));
    write_u32(f, static_cast<std::uint32_t>(ds.class_count));
    unsigned char dtype = 1, flags = 1;  // f32 pixels, provenance present
    write_bytes(f, &dtype, 1);
    write_bytes(f, &flags, 1);
    write_u16(f, 0);  // reserved
    for (int y : ds.ys) write_u16(f, static_cast<std::uint16_t>(y));
    write_bytes(f, ds.provenance.data(), ds.provenance.size());
    std::vector<unsigned char> buf(4);
    for (const Vec& x : ds.xs) {
        if (static_cast<int>(x.size()) != ds.shape.size())
            throw invalid_argument_error("save_atds: sample shape mismatch");
        for (double v : x) {
            f32_to_le(static_cast<float>(v), buf.data());
            write_bytes(f, buf.data(), 4);
        }
    }
    if (!f) throw io_error("save_atds: write failed for " + path);
}

Dataset load_atds(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("load_atds: cannot open " + path);
    char magic[4];
    read_bytes(f, magic, 4, path);
    if (std::memcmp(magic, "ATDS", 4) != 0) throw parse_error(path + ": not an ATDS file");
    std::uint32_t version = read_u32(f, path);
    if (version != 1) throw parse_error(path + ": unsupported ATDS version");
    std::uint32_t n = read_u32(f, path);
    std::uint32_t c = read_u32(f, path);
    std::uint32_t h = read_u32(f, path);
    std::uint32_t w = read_u32(f, path);
    std::uint32_t classes = read_u32(f, path);
    unsigned char dtype, flags;
    read_bytes(f, &dtype, 1, path);
    read_bytes(f, &flags, 1, path);
    read_u16(f, path);  // reserved
    if (dtype != 1) throw parse_error(path + ": unsupported pixel dtype");
    if (n == 0 || c == 0 || h == 0 || w == 0 || classes < 2)
        throw parse_error(path + ": degenerate header");

    Dataset ds;
    ds.shape = {static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)};
    ds.class_count = static_cast<int>(classes);
    ds.ys.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::uint16_t y = read_u16(f, path);
        if (y >= classes) throw parse_error(path + ": label out of range");
        ds.ys[i] = y;
    }
    ds.provenance.assign(n, kAuthentic);
    if (flags & 1) {
        read_bytes(f, ds.provenance.data(), n, path);
        for (std::uint8_t p : ds.provenance)
            if (p != kAuthentic && p != kSynthetic)
                throw parse_error(path + ": bad provenance marker");
    }
    std::size_t dim = static_cast<std::size_t>(c) * h * w;
    ds.xs.assign(n, Vec(dim));
    std::vector<unsigned char> buf(4);
    for (std::uint32_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            read_bytes(f, buf.data(), 4, path);
            double v = f32_from_le(buf.data());
            if (!std::isfinite(v)) throw parse_error(path + ": non-finite pixel");
            ds.xs[i][j] = v;
        }
    return ds;
}

double sample_gamma(Rng& rng, double alpha) {
    if (alpha <= 0.0) throw invalid_argument_error("sample_gamma: alpha must be positive");
    if (alpha < 1.0) {
        double u = 1.0 - rng.uniform();  // (0, 1]
        return sample_gamma(rng, alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    // Marsaglia-Tsang squeeze method.
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = rng.normal();
        double t = 1.0 + c * x;
        if (t <= 0.0) continue;
        double v = t * t * t;
        double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<std::vector<std::size_t>> partition_dirichlet(const Dataset& ds,
                                                          int n_clients, double alpha,
                                                          Rng& rng,
                                                          std::size_t min_per_client) {
    if (n_clients < 1) throw invalid_argument_error("partition: need at least one client");
    if (alpha <= 0.0) throw invalid_argument_error("partition: alpha must be positive");
    if (ds.size() < static_cast<std::size_t>(n_clients) * min_per_client)
        throw invalid_argument_error("partition: dataset too small for requested clients");

    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.ys[i]].push_back(i);

    constexpr int kMaxAttempts = 1000;
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<std::vector<std::size_t>> clients(n_clients);
        for (auto cls : by_class) {
            if (cls.empty()) continue;
            rng.shuffle(cls);
            Vec p(n_clients);
            double sum = 0.0;
            for (double& v : p) {
                v = sample_gamma(rng, alpha);
                sum += v;
            }
            if (sum <= 0.0) p.assign(n_clients, 1.0 / n_clients), sum = 1.0;
            // Cumulative rounding keeps the class total exact.
            double cum = 0.0;
            std::size_t taken = 0;
            for (int j = 0; j < n_clients; ++j) {
                cum += p[j] / sum;
                std::size_t upto = (j == n_clients - 1)
                                       ? cls.size()
                                       : static_cast<std::size_t>(
                                             std::llround(cum * static_cast<double>(cls.size())));
                if (upto > cls.size()) upto = cls.size();
                for (; taken < upto; ++taken) clients[j].push_back(cls[taken]);
            }
        }
        bool ok = true;
        for (const auto& cl : clients)
            if (cl.size() < min_per_client) ok = false;
        if (ok) return clients;
    }
    throw invalid_argument_error("partition: could not satisfy per-client minimum");
}

ClassGaussian ClassGaussian::fit(const Dataset& ds) {
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return fit(ds, idx);
}

ClassGaussian ClassGaussian::fit(const Dataset& ds, const std::vector<std::size_t>& idx) {
    if (idx.empty()) throw invalid_argument_error("ClassGaussian: no samples to fit");
    ClassGaussian g;
    g.shape_ = ds.shape;
    g.class_count_ = ds.class_count;
    std::size_t dim = static_cast<std::size_t>(ds.shape.size());
    g.mean_.assign(ds.class_count, Vec(dim, 0.0));
    g.stddev_.assign(ds.class_count, Vec(dim, 0.0));
    g.count_.assign(ds.class_count, 0);
    g.global_mean_.assign(dim, 0.0);
    g.global_stddev_.assign(dim, 0.0);

    std::vector<Vec> sumsq(ds.class_count, Vec(dim, 0.0));
    Vec gsumsq(dim, 0.0);
    for (std::size_t i : idx) {
        if (i >= ds.size()) throw invalid_argument_error("ClassGaussian: index out of range");
        int y = ds.ys[i];
        ++g.count_[y];
        for (std::size_t j = 0; j < dim; ++j) {
            double v = ds.xs[i][j];
            g.mean_[y][j] += v;
            sumsq[y][j] += v * v;
            g.global_mean_[j] += v;
            gsumsq[j] += v * v;
        }
    }
    auto finalize = [dim](Vec& mean, Vec& stddev, const Vec& sq, double n) {
        for (std::size_t j = 0; j < dim; ++j) {
            mean[j] /= n;
            double var = sq[j] / n - mean[j] * mean[j];
            stddev[j] = std::sqrt(var > 0.0 ? var : 0.0);
        }
    };
    for (int c = 0; c < ds.class_count; ++c)
        if (g.count_[c] > 0)
            finalize(g.mean_[c], g.stddev_[c], sumsq[c], static_cast<double>(g.count_[c]));
    finalize(g.global_mean_, g.global_stddev_, gsumsq, static_cast<double>(idx.size()));
    return g;
}

const Vec& ClassGaussian::class_mean(int label) const {
    if (label < 0 || label >= class_count_)
        throw invalid_argument_error("ClassGaussian: label out of range");
    return count_[label] > 0 ? mean_[label] : global_mean_;
}

Vec ClassGaussian::sample_one(int label, Rng& rng) const {
    if (label < 0 || label >= class_count_)
        throw invalid_argument_error("ClassGaussian: label out of range");
    const Vec& mu = count_[label] > 0 ? mean_[label] : global_mean_;
    const Vec& sd = count_[label] > 0 ? stddev_[label] : global_stddev_;
    Vec x(mu.size());
    for (std::size_t j = 0; j < x.size(); ++j) x[j] = mu[j] + sd[j] * rng.normal();
    return x;
}

Dataset ClassGaussian::sample_like(const std::vector<int>& labels, Rng& rng) const {
    if (labels.empty()) throw invalid_argument_error("ClassGaussian: no labels requested");
    Dataset ds;
    ds.shape = shape_;
    ds.class_count = class_count_;
    ds.xs.reserve(labels.size());
    ds.ys = labels;
    ds.provenance.assign(labels.size(), kSynthetic);
    for (int y : labels) ds.xs.push_back(sample_one(y, rng));
    return ds;
}

void mix_replace(Dataset& ds, const ClassGaussian& gen, double r, Rng& rng) {
    if (r < 0.0 || r > 1.0) throw invalid_argument_error("mix_replace: r must be in [0, 1]");
    if (ds.size() == 0) throw invalid_argument_error("mix_replace: empty dataset");
    std::size_t k = static_cast<std::size_t>(
        std::ceil(r * static_cast<double>(ds.size()) - 1e-9));
    if (k == 0) return;
    std::vector<std::size_t> pos(ds.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    rng.shuffle(pos);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t p = pos[i];
        ds.xs[p] = gen.sample_one(ds.ys[p], rng);
        ds.provenance[p] = kSynthetic;
    }
}

}  // namespace altfl
