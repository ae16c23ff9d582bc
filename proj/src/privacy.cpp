#include "dpig/privacy.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "dpig/tensor.hpp"

namespace dpig {

double noise_scale(double epsilon, double delta, int64_t batch_size, int64_t dataset_size,
                   int64_t d_iters) {
    if (!(epsilon > 0.0)) throw DomainError("noise_scale: epsilon must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("noise_scale: delta must be in (0,1)");
    if (batch_size < 1) throw DomainError("noise_scale: batch_size must be >= 1");
    if (dataset_size < batch_size) throw DomainError("noise_scale: dataset_size must be >= batch_size");
    if (d_iters < 1) throw DomainError("noise_scale: d_iters must be >= 1");
    if (std::isinf(epsilon)) return 0.0;
    const double p = static_cast<double>(batch_size) / static_cast<double>(dataset_size);
    return 2.0 * p * std::sqrt(static_cast<double>(d_iters) * std::log(1.0 / delta)) / epsilon;
}

PrivacyParams PrivacyParams::create(double epsilon, double delta, double clip_norm,
                                    int64_t batch_size, int64_t dataset_size, int64_t d_iters) {
    if (!(clip_norm > 0.0)) throw DomainError("privacy: clip_norm must be > 0");
    PrivacyParams p;
    p.epsilon = epsilon;
    p.delta = delta;
    p.clip_norm = clip_norm;
    p.batch_size = batch_size;
    p.dataset_size = dataset_size;
    p.d_iters = d_iters;
    p.sigma_n = noise_scale(epsilon, delta, batch_size, dataset_size, d_iters);
    return p;
}

std::vector<double> clip_gradient(const std::vector<double>& grad, double clip_norm) {
    if (!(clip_norm > 0.0)) throw DomainError("clip_gradient: clip_norm must be > 0");
    check_finite(grad, "clip_gradient input");
    double sq = 0.0;
    for (double v : grad) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm <= clip_norm) return grad;
    const double scale = clip_norm / norm;
    std::vector<double> out(grad.size());
    for (size_t i = 0; i < grad.size(); ++i) out[i] = grad[i] * scale;
    return out;
}

std::vector<double> privatize_gradients(const std::vector<std::vector<double>>& per_example_grads,
                                        double clip_norm, double sigma_n, Rng& rng) {
    if (per_example_grads.empty()) throw DomainError("privatize_gradients: empty gradient list");
    const size_t dim = per_example_grads[0].size();
    for (const auto& g : per_example_grads) {
        if (g.size() != dim) throw ShapeError("privatize_gradients: mismatched gradient lengths");
    }
    const double m = static_cast<double>(per_example_grads.size());
    std::vector<double> out(dim, 0.0);
    for (const auto& g : per_example_grads) {
        const std::vector<double> clipped = clip_gradient(g, clip_norm);
        for (size_t j = 0; j < dim; ++j) out[j] += clipped[j];
    }
    for (size_t j = 0; j < dim; ++j) out[j] /= m;
    std::vector<double> xi(dim);
    for (size_t j = 0; j < dim; ++j) xi[j] = rng.normal();
    const double noise_std = sigma_n == 0.0 ? 0.0 : sigma_n * clip_norm;
    if (noise_std != 0.0) {
        for (size_t j = 0; j < dim; ++j) out[j] += (noise_std * xi[j]) / m;
    }
    return out;
}

double rdp_of_gaussian(double noise_multiplier, double order) {
    if (!(noise_multiplier > 0.0)) throw DomainError("rdp_of_gaussian: noise_multiplier must be > 0");
    if (!(order > 1.0)) throw DomainError("rdp_of_gaussian: order must be > 1");
    return order / (2.0 * noise_multiplier * noise_multiplier);
}

std::vector<double> default_rdp_orders() {
    std::vector<double> orders{1.5};
    for (int a = 2; a <= 64; ++a) orders.push_back(static_cast<double>(a));
    orders.push_back(128.0);
    orders.push_back(256.0);
    return orders;
}

void AccountantLedger::append(double noise_multiplier, int64_t steps) {
    if (!(noise_multiplier > 0.0)) throw DomainError("ledger: noise_multiplier must be > 0");
    if (steps < 1) throw DomainError("ledger: steps must be >= 1");
    if (!entries_.empty() && entries_.back().noise_multiplier == noise_multiplier) {
        entries_.back().steps += steps;
        return;
    }
    entries_.push_back({noise_multiplier, steps});
}

double AccountantLedger::epsilon_at(double delta) const {
    if (!(delta > 0.0 && delta < 1.0)) throw DomainError("ledger: delta must be in (0,1)");
    if (entries_.empty()) throw DomainError("ledger: empty ledger");
    double best = std::numeric_limits<double>::infinity();
    for (double order : orders_) {
        double rdp = 0.0;
        for (const auto& e : entries_) {
            rdp += static_cast<double>(e.steps) * rdp_of_gaussian(e.noise_multiplier, order);
        }
        const double eps = rdp + std::log(1.0 / delta) / (order - 1.0);
        if (eps < best) best = eps;
    }
    return best;
}

int64_t AccountantLedger::total_steps() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.steps;
    return n;
}

void AccountantLedger::save(std::ostream& os) const {
    os << "# dpig ledger v1\n";
    os.precision(17);
    for (const auto& e : entries_) {
        os << "entry noise_multiplier=" << e.noise_multiplier << " steps=" << e.steps << "\n";
    }
}

AccountantLedger AccountantLedger::load(std::istream& is) {
    AccountantLedger ledger;
    std::string line;
    bool saw_header = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            saw_header = true;
            continue;
        }
        double nm = 0.0;
        long long steps = 0;
        if (std::sscanf(line.c_str(), "entry noise_multiplier=%lf steps=%lld", &nm, &steps) != 2) {
            throw DataError("ledger: unparseable line: " + line);
        }
        ledger.entries_.push_back({nm, static_cast<int64_t>(steps)});
    }
    if (!saw_header && ledger.entries_.empty()) {
        // an empty file (no header) is still a valid empty ledger
    }
    return ledger;
}

std::string render_privacy_report(const PrivacyParams& p, const AccountantLedger& ledger,
                                  double delta) {
    std::ostringstream os;
    os.precision(12);
    os << "epsilon_target: " << p.epsilon << "\n";
    os << "delta: " << p.delta << "\n";
    os << "clip_norm: " << p.clip_norm << "\n";
    os << "batch_size: " << p.batch_size << "\n";
    os << "dataset_size: " << p.dataset_size << "\n";
    os << "d_iters: " << p.d_iters << "\n";
    os << "sigma_n: " << p.sigma_n << "\n";
    os << "steps: " << ledger.total_steps() << "\n";
    if (ledger.entries().empty()) {
        os << "epsilon_spent: 0 (no steps)\n";
    } else {
        os << "epsilon_spent: " << ledger.epsilon_at(delta) << "\n";
    }
    os << "accounting: conservative (no subsampling amplification)\n";
    return os.str();
}

}  // namespace dpig
