#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpig/rng.hpp"

namespace dpig {

// sigma_n = 2 (n/N) sqrt(I_d ln(1/delta)) / epsilon. epsilon = +inf is the
// DP-off sentinel and yields sigma_n = 0.
double noise_scale(double epsilon, double delta, int64_t batch_size, int64_t dataset_size,
                   int64_t d_iters);

struct PrivacyParams {
    double epsilon = 10.0;
    double delta = 1e-5;
    double clip_norm = 1.0;  // C_p; +inf disables clipping
    int64_t batch_size = 64;
    int64_t dataset_size = 0;  // filled from the shard when 0
    int64_t d_iters = 1;
    double sigma_n = 0.0;  // derived

    static PrivacyParams create(double epsilon, double delta, double clip_norm,
                                int64_t batch_size, int64_t dataset_size, int64_t d_iters);
};

// L2 clip: identity (bitwise) when ||g|| <= c, otherwise g * (c/||g||).
std::vector<double> clip_gradient(const std::vector<double>& grad, double clip_norm);

// Algorithm 1 lines 8-10: clip each per-example gradient, average, add
// (1/m) * N(0, sigma_n^2 C_p^2 I). Always draws exactly dim normals from
// rng; the addition is skipped when the noise scale is zero so a DP-off
// run stays bitwise equal to a plain average.
std::vector<double> privatize_gradients(const std::vector<std::vector<double>>& per_example_grads,
                                        double clip_norm, double sigma_n, Rng& rng);

// Renyi divergence of the Gaussian mechanism at sensitivity 1: alpha/(2 sigma^2).
double rdp_of_gaussian(double noise_multiplier, double order);

// {1.5, 2, 3, ..., 64, 128, 256}
std::vector<double> default_rdp_orders();

struct LedgerEntry {
    double noise_multiplier = 0.0;
    int64_t steps = 0;
};

// Append-only record of Gaussian-mechanism invocations. Conversion to
// (epsilon, delta) composes RDP across entries and minimizes over the order
// grid; no subsampling amplification is applied, so the reported epsilon is
// a conservative upper bound.
class AccountantLedger {
public:
    AccountantLedger() : orders_(default_rdp_orders()) {}
    explicit AccountantLedger(std::vector<double> orders) : orders_(std::move(orders)) {}

    void append(double noise_multiplier, int64_t steps = 1);
    double epsilon_at(double delta) const;  // error on empty ledger
    int64_t total_steps() const;
    const std::vector<LedgerEntry>& entries() const { return entries_; }
    const std::vector<double>& orders() const { return orders_; }

    void save(std::ostream& os) const;
    static AccountantLedger load(std::istream& is);

private:
    std::vector<LedgerEntry> entries_;
    std::vector<double> orders_;
};

// key:value privacy report emitted by the CLI
std::string render_privacy_report(const PrivacyParams& p, const AccountantLedger& ledger,
                                  double delta);

}  // namespace dpig
