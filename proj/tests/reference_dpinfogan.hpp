#pragma once

// Straight-line reimplementation of the full training step: plain array
// arithmetic, no tape, no ops layer, no trainer. Serves as the independent
// oracle that the framework implementation must match bitwise.

#include <map>
#include <string>
#include <vector>

#include "dpig/data.hpp"
#include "dpig/models.hpp"

namespace refimpl {

using ParamMap = std::map<std::string, dpig::Tensor>;

struct RefConfig {
    double clip_norm = 1.0;
    double sigma_n = 0.0;
    double lambda_info = 1.0;
    double alpha = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int64_t batch_size = 8;
    int64_t d_iters = 1;
    uint64_t trainer_seed = 0;  // already derived; drives shuffle/codes/noise
};

ParamMap copy_params(const dpig::ParamSet& ps);

// Runs n_steps of the algorithm on the shard, mutating the parameter maps,
// and returns the per-step (d_loss, g_loss, q_loss) values.
struct RefStepValues {
    double d_loss = 0.0, g_loss = 0.0, q_loss = 0.0;
};
std::vector<RefStepValues> run_reference(const dpig::Architecture& arch,
                                         const dpig::LatentSpec& spec, const RefConfig& cfg,
                                         ParamMap& g, ParamMap& d, ParamMap& q,
                                         const dpig::Tensor& shard_images, int64_t n_steps);

// plain single-batch generator forward in eval mode (for output comparisons)
dpig::Tensor ref_generate_eval(const dpig::Architecture& arch, const dpig::LatentSpec& spec,
                               const ParamMap& g, const dpig::Tensor& input);

bool params_match_bitwise(const ParamMap& ref, const dpig::ParamSet& impl);

}  // namespace refimpl
