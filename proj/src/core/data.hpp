#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace altfl {

// Per-sample provenance markers.
inline constexpr std::uint8_t kAuthentic = 0;
inline constexpr std::uint8_t kSynthetic = 1;

struct Dataset {
    Shape3 shape;
    int class_count = 0;
    std::vector<Vec> xs;
    std::vector<int> ys;
    std::vector<std::uint8_t> provenance;  // kAuthentic / kSynthetic per sample

    std::size_t size() const { return xs.size(); }
    Dataset subset(const std::vector<std::size_t>& idx) const;
};

// Built-in 10-class 8x8 grayscale pattern set (bars, diagonals, cross, frame,
// checkerboard, ...).  Samples are prototype * brightness + pixel noise, so
// every sample is individually distinguishable while classes stay separable
// by a small fully connected net.  Labels cycle 0..9, hence balanced.
Dataset make_pattern_dataset(int n, Rng& rng);

// Binary dataset container (see docs/dataset_format.md).
Dataset load_atds(const std::string& path);
void save_atds(const Dataset& ds, const std::string& path);

// Label-skewed client split: for each class, proportions over clients are
// drawn from Dirichlet(alpha).  Redraws (up to a bound) until every client
// holds at least min_per_client samples.
std::vector<std::vector<std::size_t>> partition_dirichlet(const Dataset& ds,
                                                          int n_clients,
                                                          double alpha, Rng& rng,
                                                          std::size_t min_per_client = 1);

// Class-conditional Gaussian surrogate generator: per-class per-pixel mean
// and standard deviation fitted on a reference sample.  Classes absent from
// the fit fall back to the global statistics.  Samples are not clipped, so
// generated class means are unbiased estimates of the source class means.
class ClassGaussian {
public:
    static ClassGaussian fit(const Dataset& ds, const std::vector<std::size_t>& idx);
    static ClassGaussian fit(const Dataset& ds);

    Vec sample_one(int label, Rng& rng) const;

    // One synthetic sample per requested label, marked kSynthetic.
    Dataset sample_like(const std::vector<int>& labels, Rng& rng) const;

    Shape3 shape() const { return shape_; }
    int class_count() const { return class_count_; }
    const Vec& class_mean(int label) const;

private:
    Shape3 shape_;
    int class_count_ = 0;
    std::vector<Vec> mean_;    // per class
    std::vector<Vec> stddev_;  // per class
    std::vector<std::size_t> count_;
    Vec global_mean_, global_stddev_;
};

// Replaces ceil(r * n) samples of ds (chosen uniformly without replacement)
// with synthetic samples of the same label, r in [0, 1].
void mix_replace(Dataset& ds, const ClassGaussian& gen, double r, Rng& rng);

// Gamma(alpha, 1) variate; building block for the Dirichlet draw.
double sample_gamma(Rng& rng, double alpha);

}  // namespace altfl
