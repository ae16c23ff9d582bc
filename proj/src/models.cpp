#include "dpig/models.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace dpig {

int64_t LatentSpec::input_dim() const {
    int64_t d = noise_dim;
    for (int64_t k : discrete_codes) d += k;
    return d + continuous_codes;
}

int64_t LatentSpec::q_output_dim() const {
    int64_t d = 0;
    for (int64_t k : discrete_codes) d += k;
    return d + 2 * continuous_codes;
}

double LatentSpec::prior_entropy() const {
    double h = 0.0;
    for (int64_t k : discrete_codes) h += std::log(static_cast<double>(k));
    if (continuous_prior == Prior::uniform) {
        h += static_cast<double>(continuous_codes) * std::log(2.0);  // width of [-1,1]
    } else {
        h += static_cast<double>(continuous_codes) * 0.5 * std::log(2.0 * M_PI * M_E);
    }
    return h;
}

std::vector<CodeSample> sample_codes(const LatentSpec& spec, int64_t m, Rng& rng) {
    if (m < 1) throw DomainError("sample_codes: m must be >= 1");
    std::vector<CodeSample> out;
    out.reserve(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        CodeSample s;
        s.z.resize(static_cast<size_t>(spec.noise_dim));
        for (auto& v : s.z) v = rng.normal();
        for (int64_t k : spec.discrete_codes) {
            std::vector<double> onehot(static_cast<size_t>(k), 0.0);
            onehot[static_cast<size_t>(rng.uniform_int(k))] = 1.0;
            s.discrete_onehot.push_back(std::move(onehot));
        }
        s.continuous.resize(static_cast<size_t>(spec.continuous_codes));
        for (auto& v : s.continuous) {
            v = spec.continuous_prior == LatentSpec::Prior::uniform ? rng.uniform(-1.0, 1.0)
                                                                    : rng.normal();
        }
        out.push_back(std::move(s));
    }
    return out;
}

Tensor codes_to_input(const LatentSpec& spec, const std::vector<CodeSample>& codes) {
    const int64_t m = static_cast<int64_t>(codes.size());
    const int64_t d = spec.input_dim();
    Tensor out = Tensor::zeros({m, d, 1, 1});
    for (int64_t i = 0; i < m; ++i) {
        const CodeSample& s = codes[static_cast<size_t>(i)];
        size_t pos = static_cast<size_t>(i * d);
        for (double v : s.z) out.data[pos++] = v;
        for (const auto& onehot : s.discrete_onehot) {
            for (double v : onehot) out.data[pos++] = v;
        }
        for (double v : s.continuous) out.data[pos++] = v;
    }
    return out;
}

Tensor discrete_targets(const LatentSpec& spec, const std::vector<CodeSample>& codes,
                        size_t code_index) {
    const int64_t m = static_cast<int64_t>(codes.size());
    const int64_t k = spec.discrete_codes.at(code_index);
    Tensor out = Tensor::zeros({m, k});
    for (int64_t i = 0; i < m; ++i) {
        const auto& onehot = codes[static_cast<size_t>(i)].discrete_onehot.at(code_index);
        for (int64_t c = 0; c < k; ++c) {
            out.data[static_cast<size_t>(i * k + c)] = onehot[static_cast<size_t>(c)];
        }
    }
    return out;
}

Tensor continuous_targets(const LatentSpec& spec, const std::vector<CodeSample>& codes) {
    const int64_t m = static_cast<int64_t>(codes.size());
    const int64_t nc = spec.continuous_codes;
    Tensor out = Tensor::zeros({m, nc});
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t c = 0; c < nc; ++c) {
            out.data[static_cast<size_t>(i * nc + c)] =
                codes[static_cast<size_t>(i)].continuous[static_cast<size_t>(c)];
        }
    }
    return out;
}

Tensor pack_qoutput(const LatentSpec& spec, const QOutput& out) {
    const int64_t m = out.mean.shape.empty() ? out.logits.at(0).shape[0] : out.mean.shape[0];
    const int64_t d = spec.q_output_dim();
    Tensor packed = Tensor::zeros({m, d});
    for (int64_t i = 0; i < m; ++i) {
        size_t pos = static_cast<size_t>(i * d);
        for (size_t j = 0; j < spec.discrete_codes.size(); ++j) {
            const Tensor& lg = out.logits.at(j);
            const int64_t k = spec.discrete_codes[j];
            for (int64_t c = 0; c < k; ++c) packed.data[pos++] = lg.data[static_cast<size_t>(i * k + c)];
        }
        for (int64_t c = 0; c < spec.continuous_codes; ++c) {
            packed.data[pos++] = out.mean.data[static_cast<size_t>(i * spec.continuous_codes + c)];
        }
        for (int64_t c = 0; c < spec.continuous_codes; ++c) {
            packed.data[pos++] = out.variance.data[static_cast<size_t>(i * spec.continuous_codes + c)];
        }
    }
    return packed;
}

QOutput unpack_qoutput(const LatentSpec& spec, const Tensor& packed) {
    if (packed.rank() != 2 || packed.shape[1] != spec.q_output_dim()) {
        throw ShapeError("unpack_qoutput: expected [m," + std::to_string(spec.q_output_dim()) +
                         "], got " + shape_str(packed.shape));
    }
    const int64_t m = packed.shape[0];
    const int64_t d = packed.shape[1];
    const int64_t nc = spec.continuous_codes;
    QOutput out;
    out.mean = nc > 0 ? Tensor::zeros({m, nc}) : Tensor::zeros({m, 1});
    out.variance = nc > 0 ? Tensor::zeros({m, nc}) : Tensor::full({m, 1}, 1.0);
    for (int64_t k : spec.discrete_codes) out.logits.push_back(Tensor::zeros({m, k}));
    for (int64_t i = 0; i < m; ++i) {
        size_t pos = static_cast<size_t>(i * d);
        for (size_t j = 0; j < spec.discrete_codes.size(); ++j) {
            const int64_t k = spec.discrete_codes[j];
            for (int64_t c = 0; c < k; ++c) {
                out.logits[j].data[static_cast<size_t>(i * k + c)] = packed.data[pos++];
            }
        }
        for (int64_t c = 0; c < spec.continuous_codes; ++c) {
            out.mean.data[static_cast<size_t>(i * spec.continuous_codes + c)] = packed.data[pos++];
        }
        for (int64_t c = 0; c < spec.continuous_codes; ++c) {
            out.variance.data[static_cast<size_t>(i * spec.continuous_codes + c)] = packed.data[pos++];
        }
    }
    return out;
}

namespace {

int64_t conv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad, const char* net) {
    const int64_t num = in + 2 * pad - k;
    if (num < 0 || num % stride != 0) {
        throw ShapeError(std::string(net) + ": conv output not integral for input " +
                         std::to_string(in) + ", kernel " + std::to_string(k) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(pad));
    }
    return num / stride + 1;
}

int64_t tconv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad, const char* net) {
    const int64_t out = (in - 1) * stride - 2 * pad + k;
    if (out <= 0) {
        throw ShapeError(std::string(net) + ": tconv output not positive for input " +
                         std::to_string(in) + ", kernel " + std::to_string(k) + ", stride " +
                         std::to_string(stride) + ", pad " + std::to_string(pad));
    }
    return out;
}

}  // namespace

Architecture Architecture::mnist(const LatentSpec& spec, int64_t g_base, int64_t d_base,
                                 int64_t q_base, int64_t tap_index) {
    if (g_base < 2 || g_base % 2 != 0) throw ConfigError("arch.g_base: must be even and >= 2");
    Architecture a;
    a.image_size = 28;
    a.image_channels = 1;
    a.gen = {
        {spec.input_dim(), g_base, 7, 1, 0, true},
        {g_base, g_base / 2, 4, 2, 1, true},
        {g_base / 2, a.image_channels, 4, 2, 1, false},
    };
    a.disc = {
        {a.image_channels, d_base, 4, 2, 1, false},
        {d_base, 2 * d_base, 4, 2, 1, true},
        {2 * d_base, 4 * d_base, 3, 2, 1, true},
    };
    a.tap_index = tap_index;
    const int64_t tap_c = a.disc[static_cast<size_t>(tap_index - 1)].out_c;
    int64_t tap_h = a.image_size;
    for (int64_t i = 0; i < tap_index; ++i) {
        const ConvSpec& c = a.disc[static_cast<size_t>(i)];
        tap_h = conv_out_size(tap_h, c.k, c.stride, c.pad, "disc");
    }
    a.q = {
        {tap_c, q_base, 3, 1, 1, true},
        {q_base, q_base, 3, 1, 1, true},
        {q_base, q_base, tap_h, 1, 0, true},
        {q_base, spec.q_output_dim(), 1, 1, 0, false},
    };
    a.validate(spec);
    return a;
}

Architecture Architecture::tiny(const LatentSpec& spec) {
    Architecture a;
    a.image_size = 8;
    a.image_channels = 1;
    a.gen = {
        {spec.input_dim(), 8, 2, 1, 0, true},
        {8, 8, 4, 2, 1, true},
        {8, a.image_channels, 4, 2, 1, false},
    };
    a.disc = {
        {a.image_channels, 8, 4, 2, 1, false},
        {8, 8, 4, 2, 1, true},
        {8, 8, 3, 1, 1, true},
    };
    a.tap_index = 3;
    a.q = {
        {8, 8, 1, 1, 0, true},
        {8, 8, 1, 1, 0, true},
        {8, 8, 2, 1, 0, true},
        {8, spec.q_output_dim(), 1, 1, 0, false},
    };
    a.validate(spec);
    return a;
}

std::vector<int64_t> Architecture::tap_shape() const {
    int64_t size = image_size;
    for (int64_t i = 0; i < tap_index; ++i) {
        const ConvSpec& c = disc[static_cast<size_t>(i)];
        size = conv_out_size(size, c.k, c.stride, c.pad, "disc");
    }
    return {disc[static_cast<size_t>(tap_index - 1)].out_c, size, size};
}

void Architecture::validate(const LatentSpec& spec) const {
    if (gen.empty() || disc.empty() || q.empty()) {
        throw ConfigError("arch: all three conv stacks must be non-empty");
    }
    if (gen.front().in_c != spec.input_dim()) {
        throw ConfigError("arch.gen: first layer in_c " + std::to_string(gen.front().in_c) +
                          " != latent input dim " + std::to_string(spec.input_dim()));
    }
    int64_t size = 1;
    int64_t ch = gen.front().in_c;
    for (const ConvSpec& c : gen) {
        if (c.in_c != ch) throw ConfigError("arch.gen: channel chain broken");
        size = tconv_out_size(size, c.k, c.stride, c.pad, "gen");
        ch = c.out_c;
    }
    if (size != image_size || ch != image_channels) {
        throw ConfigError("arch.gen: output " + std::to_string(ch) + "x" + std::to_string(size) +
                          "x" + std::to_string(size) + " != declared image " +
                          std::to_string(image_channels) + "x" + std::to_string(image_size) + "x" +
                          std::to_string(image_size));
    }
    size = image_size;
    ch = image_channels;
    for (size_t i = 0; i < disc.size(); ++i) {
        const ConvSpec& c = disc[i];
        if (c.in_c != ch) throw ConfigError("arch.disc: channel chain broken");
        size = conv_out_size(size, c.k, c.stride, c.pad, "disc");
        ch = c.out_c;
        // per-example discriminator passes normalize over a single image;
        // a 1x1 normalized map would collapse to beta with zero gradient
        if (c.bn && size < 2) {
            throw ConfigError("arch.disc: batch-norm layer " + std::to_string(i + 1) +
                              " has spatial size " + std::to_string(size) +
                              "; per-example statistics need >= 2");
        }
    }
    if (tap_index < 1 || tap_index > static_cast<int64_t>(disc.size())) {
        throw ConfigError("arch.tap_index: must be in [1," + std::to_string(disc.size()) + "]");
    }
    const auto tap = tap_shape();
    size = tap[1];
    ch = tap[0];
    for (const ConvSpec& c : q) {
        if (c.in_c != ch) throw ConfigError("arch.q: channel chain broken");
        size = conv_out_size(size, c.k, c.stride, c.pad, "q");
        ch = c.out_c;
    }
    if (size != 1) throw ConfigError("arch.q: head spatial size must be 1, got " + std::to_string(size));
    if (ch != spec.q_output_dim()) {
        throw ConfigError("arch.q: head channels " + std::to_string(ch) + " != q output dim " +
                          std::to_string(spec.q_output_dim()));
    }
}

namespace {

Tensor randn_tensor(std::vector<int64_t> shape, double std, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = std * rng.normal();
    t.requires_grad = true;
    return t;
}

Tensor param_zeros(std::vector<int64_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    t.requires_grad = true;
    return t;
}

Tensor param_full(std::vector<int64_t> shape, double v) {
    Tensor t = Tensor::full(std::move(shape), v);
    t.requires_grad = true;
    return t;
}

void add_bn_params(ParamSet& ps, const std::string& prefix, int64_t c) {
    ps.add(prefix + ".gamma", param_full({c}, 1.0));
    ps.add(prefix + ".beta", param_zeros({c}));
    Tensor rm = Tensor::zeros({c});
    Tensor rv = Tensor::full({c}, 1.0);
    ps.add(prefix + ".running_mean", std::move(rm));
    ps.add(prefix + ".running_var", std::move(rv));
}

// conv weight layout [oc,ic,k,k]; tconv weight layout [ic,oc,k,k]
void add_conv_stack(ParamSet& ps, const std::vector<ConvSpec>& stack, const std::string& kind,
                    double init_std, Rng& rng, bool transposed) {
    for (size_t i = 0; i < stack.size(); ++i) {
        const ConvSpec& c = stack[i];
        const std::string name = kind + std::to_string(i + 1);
        if (transposed) {
            ps.add(name + ".w", randn_tensor({c.in_c, c.out_c, c.k, c.k}, init_std, rng));
        } else {
            ps.add(name + ".w", randn_tensor({c.out_c, c.in_c, c.k, c.k}, init_std, rng));
        }
        ps.add(name + ".b", param_zeros({c.out_c}));
        if (c.bn) add_bn_params(ps, "bn" + std::to_string(i + 1), c.out_c);
    }
}

ValueId conv_block(Tape& t, const Architecture& arch, ParamSet& ps, const ConvSpec& c,
                   const std::string& name, const std::string& bn_name, ValueId x, bool training,
                   bool transposed) {
    ValueId y = transposed
                    ? ops::tconv2d(t, x, t.leaf(ps.at(name + ".w")), t.leaf(ps.at(name + ".b")),
                                   c.stride, c.pad)
                    : ops::conv2d(t, x, t.leaf(ps.at(name + ".w")), t.leaf(ps.at(name + ".b")),
                                  c.stride, c.pad);
    if (c.bn) {
        y = ops::batch_norm2d(t, y, t.leaf(ps.at(bn_name + ".gamma")), t.leaf(ps.at(bn_name + ".beta")),
                              ps.at(bn_name + ".running_mean"), ps.at(bn_name + ".running_var"),
                              arch.bn_eps, arch.bn_momentum, training);
    }
    return y;
}

}  // namespace

void init_generator(const Architecture& arch, const LatentSpec& spec, ParamSet& ps, Rng& rng) {
    (void)spec;
    add_conv_stack(ps, arch.gen, "deconv", arch.init_std, rng, true);
}

void init_discriminator(const Architecture& arch, ParamSet& ps, Rng& rng) {
    add_conv_stack(ps, arch.disc, "conv", arch.init_std, rng, false);
    int64_t size = arch.image_size;
    for (const ConvSpec& c : arch.disc) size = (size + 2 * c.pad - c.k) / c.stride + 1;
    const int64_t flat = arch.disc.back().out_c * size * size;
    ps.add("head.w", randn_tensor({1, flat}, arch.init_std, rng));
    ps.add("head.b", param_zeros({1}));
}

void init_q(const Architecture& arch, const LatentSpec& spec, ParamSet& ps, Rng& rng) {
    (void)spec;
    add_conv_stack(ps, arch.q, "conv", arch.init_std, rng, false);
}

ValueId generator_forward(Tape& t, const Architecture& arch, ParamSet& ps, ValueId input,
                          bool training) {
    ValueId x = input;
    for (size_t i = 0; i < arch.gen.size(); ++i) {
        const std::string name = "deconv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        x = conv_block(t, arch, ps, arch.gen[i], name, bn, x, training, true);
        if (i + 1 < arch.gen.size()) {
            x = ops::relu(t, x);
        } else {
            // saturating output in (-1,1): 2*sigmoid(x) - 1
            x = ops::affine(t, ops::sigmoid(t, x), 2.0, -1.0);
        }
    }
    return x;
}

DiscNodes discriminator_forward(Tape& t, const Architecture& arch, ParamSet& ps, ValueId images,
                                bool training) {
    const Tensor& img = t.value(images);
    if (img.rank() != 4 || img.shape[1] != arch.image_channels || img.shape[2] != arch.image_size ||
        img.shape[3] != arch.image_size) {
        throw ShapeError("discriminator: expected [m," + std::to_string(arch.image_channels) + "," +
                         std::to_string(arch.image_size) + "," + std::to_string(arch.image_size) +
                         "], got " + shape_str(img.shape));
    }
    ValueId x = images;
    ValueId features = -1;
    for (size_t i = 0; i < arch.disc.size(); ++i) {
        const std::string name = "conv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        x = conv_block(t, arch, ps, arch.disc[i], name, bn, x, training, false);
        x = ops::leaky_relu(t, x, arch.leaky_slope);
        if (static_cast<int64_t>(i + 1) == arch.tap_index) features = x;
    }
    const Tensor& fv = t.value(x);
    const int64_t m = fv.shape[0];
    const int64_t flat = fv.numel() / m;
    ValueId flat2d = ops::reshape(t, x, {m, flat});
    ValueId logit = ops::dense(t, flat2d, t.leaf(ps.at("head.w")), t.leaf(ps.at("head.b")));
    ValueId probs = ops::sigmoid(t, ops::reshape(t, logit, {m}));
    return {probs, features};
}

QNodes q_forward(Tape& t, const Architecture& arch, const LatentSpec& spec, ParamSet& ps,
                 ValueId features, bool training) {
    const auto tap = arch.tap_shape();
    const Tensor& fv = t.value(features);
    if (fv.rank() != 4 || fv.shape[1] != tap[0] || fv.shape[2] != tap[1] || fv.shape[3] != tap[2]) {
        throw ShapeError("q_forward: expected [m," + std::to_string(tap[0]) + "," +
                         std::to_string(tap[1]) + "," + std::to_string(tap[2]) + "], got " +
                         shape_str(fv.shape));
    }
    ValueId x = features;
    for (size_t i = 0; i < arch.q.size(); ++i) {
        const std::string name = "conv" + std::to_string(i + 1);
        const std::string bn = "bn" + std::to_string(i + 1);
        x = conv_block(t, arch, ps, arch.q[i], name, bn, x, training, false);
        if (i + 1 < arch.q.size()) x = ops::leaky_relu(t, x, arch.leaky_slope);
    }
    const int64_t m = t.value(x).shape[0];
    ValueId flat = ops::reshape(t, x, {m, spec.q_output_dim()});
    QNodes qn;
    int64_t off = 0;
    for (int64_t k : spec.discrete_codes) {
        qn.logits.push_back(ops::slice_cols(t, flat, off, off + k));
        off += k;
    }
    const int64_t nc = spec.continuous_codes;
    if (nc > 0) {
        qn.mean = ops::slice_cols(t, flat, off, off + nc);
        ValueId rawvar = ops::slice_cols(t, flat, off + nc, off + 2 * nc);
        qn.variance = ops::clamp_min(t, ops::exp(t, rawvar), kVarianceFloor);
    } else {
        // placeholders; never consumed when the spec has no continuous codes
        qn.mean = t.constant(Tensor::zeros({m, 1}));
        qn.variance = t.constant(Tensor::full({m, 1}, 1.0));
    }
    return qn;
}

QOutput qnodes_values(const Tape& t, const QNodes& qn) {
    QOutput out;
    for (ValueId id : qn.logits) out.logits.push_back(t.value(id));
    out.mean = t.value(qn.mean);
    out.variance = t.value(qn.variance);
    return out;
}

ValueId d_loss(Tape& t, ValueId probs_real, ValueId probs_fake) {
    ValueId prc = ops::clamp(t, probs_real, kProbClamp, 1.0 - kProbClamp);
    ValueId lr = ops::log(t, prc);
    ValueId pfc = ops::clamp(t, probs_fake, kProbClamp, 1.0 - kProbClamp);
    ValueId lf = ops::log(t, ops::affine(t, pfc, -1.0, 1.0));
    return ops::affine(t, ops::mean_all(t, ops::add(t, lr, lf)), -1.0, 0.0);
}

ValueId g_adv_loss(Tape& t, ValueId probs_fake) {
    ValueId pfc = ops::clamp(t, probs_fake, kProbClamp, 1.0 - kProbClamp);
    return ops::affine(t, ops::mean_all(t, ops::log(t, pfc)), -1.0, 0.0);
}

ValueId q_nll(Tape& t, const LatentSpec& spec, const std::vector<CodeSample>& targets,
              const QNodes& qn) {
    ValueId acc = -1;
    for (size_t j = 0; j < spec.discrete_codes.size(); ++j) {
        ValueId target = t.constant(discrete_targets(spec, targets, j));
        ValueId ce = ops::cross_entropy_logits(t, qn.logits.at(j), target);
        acc = acc < 0 ? ce : ops::add(t, acc, ce);
    }
    if (spec.continuous_codes > 0) {
        ValueId ctarget = t.constant(continuous_targets(spec, targets));
        ValueId half_log = ops::affine(t, ops::log(t, ops::affine(t, qn.variance, 2.0 * M_PI, 0.0)), 0.5, 0.0);
        ValueId diff = ops::sub(t, ctarget, qn.mean);
        ValueId quad = ops::div(t, ops::mul(t, diff, diff), ops::affine(t, qn.variance, 2.0, 0.0));
        ValueId rows = ops::sum_cols(t, ops::add(t, half_log, quad));
        acc = acc < 0 ? rows : ops::add(t, acc, rows);
    }
    if (acc < 0) return t.constant(Tensor::scalar(0.0));
    return ops::mean_all(t, acc);
}

ValueId info_objective(Tape& t, ValueId q_loss, double lambda) {
    if (lambda < 0.0) throw DomainError("info_objective: lambda must be >= 0");
    return ops::affine(t, q_loss, lambda, 0.0);
}

GanTriple GanTriple::create(const Architecture& arch, const LatentSpec& spec, uint64_t base_seed) {
    GanTriple triple;
    triple.arch = arch;
    triple.latent = spec;
    Rng grng(derive_seed(base_seed, seed_tag::generator, 1));
    init_generator(arch, spec, triple.g, grng);
    Rng drng(derive_seed(base_seed, seed_tag::discriminator, 1));
    init_discriminator(arch, triple.d, drng);
    Rng qrng(derive_seed(base_seed, seed_tag::q_network, 1));
    init_q(arch, spec, triple.q, qrng);
    return triple;
}

void GanTriple::save(std::ostream& os) const {
    ParamSet combined;
    for (const auto* pair : {&g, &d, &q}) {
        const char* prefix = pair == &g ? "g." : (pair == &d ? "d." : "q.");
        for (const auto& name : pair->names()) {
            Tensor t = pair->at(name);
            combined.add(prefix + name, std::move(t));
        }
    }
    combined.serialize(os);
}

void GanTriple::load(std::istream& is) {
    ParamSet combined = ParamSet::deserialize(is);
    size_t matched = 0;
    for (const auto& name : combined.names()) {
        ParamSet* target = nullptr;
        if (name.rfind("g.", 0) == 0) target = &g;
        else if (name.rfind("d.", 0) == 0) target = &d;
        else if (name.rfind("q.", 0) == 0) target = &q;
        if (!target) throw DataError("checkpoint: unknown entry prefix in '" + name + "'");
        const std::string local = name.substr(2);
        if (!target->contains(local)) throw DataError("checkpoint: unexpected entry '" + name + "'");
        Tensor& dst = target->at(local);
        const Tensor& src = combined.at(name);
        if (dst.shape != src.shape) throw DataError("checkpoint: shape mismatch for '" + name + "'");
        dst.data = src.data;
        ++matched;
    }
    if (matched != g.count() + d.count() + q.count()) {
        throw DataError("checkpoint: entry count mismatch");
    }
}

GPhaseResult monolithic_g_phase(GanTriple& triple, const std::vector<CodeSample>& codes,
                                double lambda, bool training) {
    Tape t;
    ValueId input = t.constant(codes_to_input(triple.latent, codes));
    ValueId fakes = generator_forward(t, triple.arch, triple.g, input, training);
    DiscNodes dn = discriminator_forward(t, triple.arch, triple.d, fakes, training);
    QNodes qn = q_forward(t, triple.arch, triple.latent, triple.q, dn.features, training);
    ValueId qloss = q_nll(t, triple.latent, codes, qn);
    ValueId gadv = g_adv_loss(t, dn.probs);
    ValueId total = ops::add(t, gadv, info_objective(t, qloss, lambda));
    GPhaseResult r;
    r.g_adv = t.value(gadv).data[0];
    r.q_loss = t.value(qloss).data[0];
    r.g_loss = t.value(total).data[0];
    t.backward(total);
    return r;
}

}  // namespace dpig
