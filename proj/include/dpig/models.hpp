#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dpig/ops.hpp"
#include "dpig/paramset.hpp"
#include "dpig/rng.hpp"

namespace dpig {

// Structure of the generator input: noise z, optional discrete codes
// (category counts), optional continuous codes.
struct LatentSpec {
    enum class Prior { uniform, gaussian };

    int64_t noise_dim = 62;
    std::vector<int64_t> discrete_codes = {10};
    int64_t continuous_codes = 2;
    Prior continuous_prior = Prior::uniform;

    int64_t input_dim() const;
    int64_t q_output_dim() const;  // sum of category counts + 2 per continuous code
    double prior_entropy() const;  // entropy of p(c), a constant of the spec

    bool operator==(const LatentSpec&) const = default;
};

struct CodeSample {
    std::vector<double> z;
    std::vector<std::vector<double>> discrete_onehot;
    std::vector<double> continuous;
};

// Draw order per sample: z normals, then one category per discrete code,
// then one value per continuous code.
std::vector<CodeSample> sample_codes(const LatentSpec& spec, int64_t m, Rng& rng);

Tensor codes_to_input(const LatentSpec& spec, const std::vector<CodeSample>& codes);      // [m,D,1,1]
Tensor discrete_targets(const LatentSpec& spec, const std::vector<CodeSample>& codes,
                        size_t code_index);                                               // [m,K_j]
Tensor continuous_targets(const LatentSpec& spec, const std::vector<CodeSample>& codes);  // [m,nc]

// Q head output for one batch.
struct QOutput {
    std::vector<Tensor> logits;  // one [m,K_j] per discrete code
    Tensor mean;                 // [m,nc]
    Tensor variance;             // [m,nc], floored at kVarianceFloor
};

inline constexpr double kVarianceFloor = 1e-6;
inline constexpr double kProbClamp = 1e-7;

// Single-tensor packing [m, q_output_dim] with columns (logits..., mean,
// variance); this is the wire layout.
Tensor pack_qoutput(const LatentSpec& spec, const QOutput& out);
QOutput unpack_qoutput(const LatentSpec& spec, const Tensor& packed);

struct ConvSpec {
    int64_t in_c = 0, out_c = 0, k = 0, stride = 1, pad = 0;
    bool bn = false;
};

// Conv stacks for the three networks plus shared hyperparameters. The
// discriminator feature tap sits after conv block tap_index (1-based).
struct Architecture {
    int64_t image_size = 28;
    int64_t image_channels = 1;
    std::vector<ConvSpec> gen;   // transposed convolutions, input is [m,D,1,1]
    std::vector<ConvSpec> disc;  // convolutions; dense head to 1 follows
    std::vector<ConvSpec> q;     // convolutions over the tap; last one is the head
    int64_t tap_index = 3;
    double leaky_slope = 0.2;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    double init_std = 0.02;

    // 28x28 stack from the usual conv-GAN layout: three transposed
    // convolutions up, three convolutions down, four Q convolutions.
    static Architecture mnist(const LatentSpec& spec, int64_t g_base = 128, int64_t d_base = 64,
                              int64_t q_base = 64, int64_t tap_index = 3);
    // 8x8 stack with widths <= 8 for gradient checks
    static Architecture tiny(const LatentSpec& spec);

    std::vector<int64_t> tap_shape() const;  // [c,h,w]
    void validate(const LatentSpec& spec) const;
};

void init_generator(const Architecture& arch, const LatentSpec& spec, ParamSet& ps, Rng& rng);
void init_discriminator(const Architecture& arch, ParamSet& ps, Rng& rng);
void init_q(const Architecture& arch, const LatentSpec& spec, ParamSet& ps, Rng& rng);

ValueId generator_forward(Tape& t, const Architecture& arch, ParamSet& ps, ValueId input,
                          bool training);

struct DiscNodes {
    ValueId probs;     // [m] in (0,1)
    ValueId features;  // tap activation [m,c,h,w]
};
DiscNodes discriminator_forward(Tape& t, const Architecture& arch, ParamSet& ps, ValueId images,
                                bool training);

struct QNodes {
    std::vector<ValueId> logits;
    ValueId mean = -1;
    ValueId variance = -1;
};
QNodes q_forward(Tape& t, const Architecture& arch, const LatentSpec& spec, ParamSet& ps,
                 ValueId features, bool training);
QOutput qnodes_values(const Tape& t, const QNodes& qn);

// losses; probabilities are clamped to [kProbClamp, 1-kProbClamp] before logs
ValueId d_loss(Tape& t, ValueId probs_real, ValueId probs_fake);
ValueId g_adv_loss(Tape& t, ValueId probs_fake);
ValueId q_nll(Tape& t, const LatentSpec& spec, const std::vector<CodeSample>& targets,
              const QNodes& qn);
ValueId info_objective(Tape& t, ValueId q_loss, double lambda);

// The three parameter sets plus their descriptors; the unit of
// checkpointing.
struct GanTriple {
    Architecture arch;
    LatentSpec latent;
    ParamSet g, d, q;

    static GanTriple create(const Architecture& arch, const LatentSpec& spec, uint64_t base_seed);

    void save(std::ostream& os) const;  // one container, names prefixed g./d./q.
    void load(std::istream& is);
};

// Whole G-phase on one tape: G -> D -> Q -> g_adv + lambda * q_nll,
// backward from the combined loss. Gradient buffers of g/d/q receive the
// result. This is the single-process route the split protocol is checked
// against.
struct GPhaseResult {
    double g_adv = 0.0;
    double q_loss = 0.0;
    double g_loss = 0.0;
};
GPhaseResult monolithic_g_phase(GanTriple& triple, const std::vector<CodeSample>& codes,
                                double lambda, bool training);

}  // namespace dpig
