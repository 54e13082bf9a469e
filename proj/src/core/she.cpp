#include "core/she.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/errors.hpp"

namespace altfl {

namespace {

// Simulator ciphertext: values kept verbatim, reachable only through the
// backend so nothing outside this translation unit can peek.
struct SimCt final : HeBackend::Ciphertext {
    Vec values;
};

void check_weights(const Vec& weights, std::size_t n) {
    if (weights.size() != n)
        throw invalid_argument_error("he: weight count does not match update count");
    double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (std::abs(sum - 1.0) > 1e-9)
        throw invalid_argument_error("he: weights must sum to 1");
}

}  // namespace

std::size_t EncryptionMask::hidden_count() const {
    std::size_t n = 0;
    for (std::uint8_t b : bits) n += b ? 1 : 0;
    return n;
}

double EncryptionMask::eta() const {
    if (bits.empty()) throw invalid_argument_error("mask: empty");
    return static_cast<double>(hidden_count()) / static_cast<double>(bits.size());
}

Vec aggregate_sensitivity(const std::vector<Vec>& per_client_scores,
                          const Vec& weights) {
    if (per_client_scores.empty())
        throw invalid_argument_error("aggregate_sensitivity: no clients");
    check_weights(weights, per_client_scores.size());
    std::size_t n = per_client_scores[0].size();
    Vec out(n, 0.0);
    for (std::size_t i = 0; i < per_client_scores.size(); ++i) {
        const Vec& s = per_client_scores[i];
        if (s.size() != n)
            throw invalid_argument_error("aggregate_sensitivity: length mismatch");
        for (std::size_t j = 0; j < n; ++j) out[j] += weights[i] * std::abs(s[j]);
    }
    return out;
}

EncryptionMask build_mask(const Vec& sensitivity, double eta) {
    if (eta < 0.0 || eta > 1.0) throw invalid_argument_error("build_mask: eta not in [0, 1]");
    if (sensitivity.empty()) throw invalid_argument_error("build_mask: empty sensitivity");
    std::size_t n = sensitivity.size();
    std::size_t k = static_cast<std::size_t>(std::llround(eta * static_cast<double>(n)));
    EncryptionMask m;
    m.bits.assign(n, 0);
    if (k == 0) return m;
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (sensitivity[a] != sensitivity[b]) return sensitivity[a] > sensitivity[b];
        return a < b;  // ties toward the lower index
    });
    for (std::size_t i = 0; i < k; ++i) m.bits[idx[i]] = 1;
    return m;
}

void HeCostModel::validate() const {
    if (overhead_bytes < 0.0 || encrypt_sec_per_coord < 0.0 ||
        decrypt_sec_per_coord < 0.0 || aggregate_sec_per_coord < 0.0)
        throw invalid_argument_error("cost model: coefficients must be non-negative");
    // A ciphertext cannot be smaller than its plaintext; this also keeps
    // communication monotone in eta.
    if (expansion < 1.0)
        throw invalid_argument_error("cost model: expansion ratio must be >= 1");
}

double protected_bytes(std::size_t n_plain, std::size_t n_hidden,
                       const HeCostModel& cm) {
    double bytes = 4.0 * static_cast<double>(n_plain);
    if (n_hidden > 0)
        bytes += cm.overhead_bytes + cm.expansion * 4.0 * static_cast<double>(n_hidden);
    return bytes;
}

HeBackend::CtPtr SimulatorBackend::encrypt(const Vec& values) const {
    auto ct = std::make_unique<SimCt>();
    ct->values = values;
    return ct;
}

HeBackend::CtPtr SimulatorBackend::weighted_sum(
    const std::vector<const Ciphertext*>& cts, const Vec& weights) const {
    if (cts.empty()) throw invalid_argument_error("he: nothing to aggregate");
    check_weights(weights, cts.size());
    auto out = std::make_unique<SimCt>();
    for (std::size_t i = 0; i < cts.size(); ++i) {
        const auto* sim = dynamic_cast<const SimCt*>(cts[i]);
        if (!sim) throw invalid_argument_error("he: foreign ciphertext for simulator backend");
        if (i == 0) out->values.assign(sim->values.size(), 0.0);
        axpy(weights[i], sim->values, out->values);
    }
    return out;
}

Vec SimulatorBackend::decrypt(const Ciphertext& ct, std::size_t n) const {
    const auto* sim = dynamic_cast<const SimCt*>(&ct);
    if (!sim) throw invalid_argument_error("he: foreign ciphertext for simulator backend");
    if (sim->values.size() != n)
        throw invalid_argument_error("he: ciphertext length mismatch");
    return sim->values;
}

ProtectedUpdate protect(const Vec& update, const EncryptionMask& mask,
                        const HeBackend& backend, const HeCostModel& cm) {
    if (update.size() != mask.size())
        throw invalid_argument_error("protect: mask length does not match update");
    cm.validate();
    ProtectedUpdate pu;
    pu.mask = mask;
    Vec hidden_vals;
    for (std::size_t j = 0; j < update.size(); ++j)
        (mask.bits[j] ? hidden_vals : pu.plain).push_back(update[j]);
    pu.hidden_count = hidden_vals.size();
    if (!hidden_vals.empty()) pu.hidden = backend.encrypt(hidden_vals);
    pu.bytes = protected_bytes(pu.plain.size(), pu.hidden_count, cm);
    return pu;
}

Vec unprotect(const ProtectedUpdate& pu, const HeBackend& backend) {
    Vec hidden_vals;
    if (pu.hidden_count > 0) {
        if (!pu.hidden) throw invalid_argument_error("unprotect: missing ciphertext");
        hidden_vals = backend.decrypt(*pu.hidden, pu.hidden_count);
    }
    Vec full(pu.mask.size());
    std::size_t ip = 0, ih = 0;
    for (std::size_t j = 0; j < full.size(); ++j)
        full[j] = pu.mask.bits[j] ? hidden_vals[ih++] : pu.plain[ip++];
    return full;
}

ProtectedUpdate he_aggregate(const std::vector<ProtectedUpdate>& updates,
                             const Vec& weights, const HeBackend& backend,
                             const HeCostModel& cm) {
    if (updates.empty()) throw invalid_argument_error("he_aggregate: no updates");
    check_weights(weights, updates.size());
    const EncryptionMask& mask = updates[0].mask;
    for (const auto& u : updates)
        if (!(u.mask == mask)) throw invalid_argument_error("he_aggregate: mask mismatch");

    ProtectedUpdate out;
    out.mask = mask;
    out.plain.assign(updates[0].plain.size(), 0.0);
    for (std::size_t i = 0; i < updates.size(); ++i)
        axpy(weights[i], updates[i].plain, out.plain);
    out.hidden_count = updates[0].hidden_count;
    if (out.hidden_count > 0) {
        std::vector<const HeBackend::Ciphertext*> cts;
        cts.reserve(updates.size());
        for (const auto& u : updates) {
            if (!u.hidden) throw invalid_argument_error("he_aggregate: missing ciphertext");
            cts.push_back(u.hidden.get());
        }
        out.hidden = backend.weighted_sum(cts, weights);
    }
    out.bytes = protected_bytes(out.plain.size(), out.hidden_count, cm);
    return out;
}

MaskedView attacker_view(const ProtectedUpdate& pu) {
    MaskedView v;
    v.hidden = pu.mask.bits;
    v.values.assign(pu.mask.size(), 0.0);
    std::size_t ip = 0;
    for (std::size_t j = 0; j < v.values.size(); ++j)
        if (!pu.mask.bits[j]) v.values[j] = pu.plain[ip++];
    return v;
}

}  // namespace altfl
