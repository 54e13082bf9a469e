#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace altfl {

// Binary encryption mask over model coordinates.  Built once from aggregated
// sensitivities and then frozen for the whole run.
struct EncryptionMask {
    std::vector<std::uint8_t> bits;  // 1 = encrypted (hidden), 0 = plaintext

    std::size_t size() const { return bits.size(); }
    std::size_t hidden_count() const;
    double eta() const;
    bool operator==(const EncryptionMask&) const = default;
};

// Weighted mean of per-client |gradient| sensitivity scores.  Magnitudes are
// taken inside, so callers may pass raw signed gradients.  Weights are the
// data shares |d_i|/|D| and must sum to 1 (within 1e-9).
Vec aggregate_sensitivity(const std::vector<Vec>& per_client_scores,
                          const Vec& weights);

// Marks the round(eta * |w|) highest-sensitivity coordinates; ties broken
// toward the lower index.
EncryptionMask build_mask(const Vec& sensitivity, double eta);

// Byte-size and modeled-time coefficients for ciphertext handling.  Kept in
// config, never hard-coded into protocol logic.
struct HeCostModel {
    double overhead_bytes = 1024.0;  // per message carrying any ciphertext
    double expansion = 10.0;         // ciphertext bytes per plaintext byte
    double encrypt_sec_per_coord = 5e-8;
    double decrypt_sec_per_coord = 5e-8;
    double aggregate_sec_per_coord = 1e-8;

    void validate() const;
};

// Message size of a masked update: plaintext coordinates ship as 4-byte
// floats; ciphertext coordinates pay the expansion ratio plus a one-time
// per-message overhead (only when something is actually encrypted).
double protected_bytes(std::size_t n_plain, std::size_t n_hidden,
                       const HeCostModel& cm);

// Backend interface: the simulator below is the required exact backend; a
// real approximate-arithmetic scheme can slot in behind the same interface
// (round-trip then only guaranteed to ~1e-3 per coordinate).
class HeBackend {
public:
    class Ciphertext {
    public:
        virtual ~Ciphertext() = default;
    };
    using CtPtr = std::unique_ptr<Ciphertext>;

    virtual ~HeBackend() = default;
    virtual std::string name() const = 0;
    virtual CtPtr encrypt(const Vec& values) const = 0;
    // sum_i weights[i] * cts[i], left-to-right.
    virtual CtPtr weighted_sum(const std::vector<const Ciphertext*>& cts,
                               const Vec& weights) const = 0;
    virtual Vec decrypt(const Ciphertext& ct, std::size_t n) const = 0;
};

// Exact opaque-mask simulator: plaintext arithmetic internally, but hidden
// values are unreachable through the attacker view.  Aggregation uses the
// same left-to-right kernel as plaintext FedAvg, so protected and plaintext
// aggregation agree bit-for-bit.
class SimulatorBackend : public HeBackend {
public:
    std::string name() const override { return "simulator"; }
    CtPtr encrypt(const Vec& values) const override;
    CtPtr weighted_sum(const std::vector<const Ciphertext*>& cts,
                       const Vec& weights) const override;
    Vec decrypt(const Ciphertext& ct, std::size_t n) const override;
};

struct ProtectedUpdate {
    EncryptionMask mask;
    Vec plain;  // values at mask=0 coordinates, ascending coordinate order
    HeBackend::CtPtr hidden;  // null when no coordinate is masked
    std::size_t hidden_count = 0;
    double bytes = 0.0;
};

// What a curious server / eavesdropper gets to see: plaintext coordinates in
// place, masked coordinates flagged and zeroed.
struct MaskedView {
    Vec values;
    std::vector<std::uint8_t> hidden;
};

ProtectedUpdate protect(const Vec& update, const EncryptionMask& mask,
                        const HeBackend& backend, const HeCostModel& cm);

Vec unprotect(const ProtectedUpdate& pu, const HeBackend& backend);

ProtectedUpdate he_aggregate(const std::vector<ProtectedUpdate>& updates,
                             const Vec& weights, const HeBackend& backend,
                             const HeCostModel& cm);

MaskedView attacker_view(const ProtectedUpdate& pu);

}  // namespace altfl
