#include "dpig/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dpig {

FlatConfig FlatConfig::parse(const std::string& text) {
    FlatConfig fc;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        if (line[start] == '#') continue;
        const size_t eq = line.find('=', start);
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        }
        std::string key = line.substr(start, eq - start);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            const size_t a = s.find_first_not_of(" \t\r");
            const size_t b = s.find_last_not_of(" \t\r");
            s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
        };
        trim(key);
        trim(value);
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        fc.kv_[key] = value;
    }
    return fc;
}

std::string FlatConfig::render() const {
    std::ostringstream os;
    for (const auto& [k, v] : kv_) os << k << "=" << v << "\n";
    return os.str();
}

void FlatConfig::set(const std::string& key, const std::string& value) { kv_[key] = value; }

void FlatConfig::set_f(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    kv_[key] = buf;
}

void FlatConfig::set_i(const std::string& key, int64_t v) { kv_[key] = std::to_string(v); }

bool FlatConfig::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string FlatConfig::get_s(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double FlatConfig::get_f(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "inf") return std::numeric_limits<double>::infinity();
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not a number: '" + it->second + "'");
    }
}

int64_t FlatConfig::get_i(const std::string& key, int64_t fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        size_t pos = 0;
        const long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": not an integer: '" + it->second + "'");
    }
}

namespace {

std::string join_codes(const std::vector<int64_t>& codes) {
    std::string s;
    for (size_t i = 0; i < codes.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(codes[i]);
    }
    return s;
}

std::vector<int64_t> split_codes(const std::string& s) {
    std::vector<int64_t> out;
    if (s.empty() || s == "none") return out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        try {
            out.push_back(std::stoll(tok));
        } catch (const std::exception&) {
            throw ConfigError("latent.discrete: bad category count '" + tok + "'");
        }
    }
    return out;
}

}  // namespace

FlatConfig RunConfig::to_flat() const {
    FlatConfig fc;
    fc.set_i("seed", static_cast<int64_t>(seed));
    fc.set("out_dir", out_dir);
    fc.set("data.source", data_source);
    fc.set("data.idx_images", idx_images);
    fc.set_i("data.synth_count", synth_count);
    fc.set_i("data.seed", static_cast<int64_t>(data_seed));
    fc.set_i("latent.noise_dim", latent.noise_dim);
    fc.set("latent.discrete", join_codes(latent.discrete_codes));
    fc.set_i("latent.continuous", latent.continuous_codes);
    fc.set("latent.prior", latent.continuous_prior == LatentSpec::Prior::uniform ? "uniform" : "gaussian");
    fc.set("arch.preset", arch_preset);
    fc.set_i("arch.g_base", g_base);
    fc.set_i("arch.d_base", d_base);
    fc.set_i("arch.q_base", q_base);
    fc.set_i("arch.tap_index", tap_index);
    fc.set_f("privacy.epsilon", epsilon);
    fc.set_f("privacy.delta", delta);
    fc.set_f("privacy.clip_norm", clip_norm);
    fc.set_i("train.batch_size", batch_size);
    fc.set_i("train.d_iters", d_iters);
    fc.set_i("train.epochs", epochs);
    fc.set_f("train.learning_rate", learning_rate);
    fc.set_f("train.lambda", lambda_info);
    fc.set_f("adam.beta1", adam_beta1);
    fc.set_f("adam.beta2", adam_beta2);
    fc.set_f("adam.eps", adam_eps);
    fc.set_i("train.checkpoint_interval", checkpoint_interval);
    fc.set_i("dist.n_clients", n_clients);
    fc.set_i("dist.rounds", rounds);
    fc.set_i("dist.steps_per_round", steps_per_round);
    fc.set("dist.transport", transport == TransportKind::inproc ? "inproc" : "socket");
    fc.set("dist.endpoint", endpoint);
    fc.set_i("dist.per_client", per_client);
    fc.set("sweep.checkpoint", checkpoint);
    fc.set_i("sweep.code_index", sweep_code);
    fc.set_f("sweep.lo", sweep_lo);
    fc.set_f("sweep.hi", sweep_hi);
    fc.set_i("sweep.rows", grid_rows);
    fc.set_i("sweep.cols", grid_cols);
    return fc;
}

RunConfig RunConfig::from_flat(const FlatConfig& fc) {
    RunConfig c;
    c.seed = static_cast<uint64_t>(fc.get_i("seed", static_cast<int64_t>(c.seed)));
    c.out_dir = fc.get_s("out_dir", c.out_dir);
    c.data_source = fc.get_s("data.source", c.data_source);
    c.idx_images = fc.get_s("data.idx_images", c.idx_images);
    c.synth_count = fc.get_i("data.synth_count", c.synth_count);
    c.data_seed = static_cast<uint64_t>(fc.get_i("data.seed", 0));
    c.latent.noise_dim = fc.get_i("latent.noise_dim", c.latent.noise_dim);
    c.latent.discrete_codes = split_codes(fc.get_s("latent.discrete", join_codes(c.latent.discrete_codes)));
    c.latent.continuous_codes = fc.get_i("latent.continuous", c.latent.continuous_codes);
    const std::string prior = fc.get_s("latent.prior", "uniform");
    if (prior != "uniform" && prior != "gaussian") {
        throw ConfigError("latent.prior: must be uniform or gaussian");
    }
    c.latent.continuous_prior =
        prior == "uniform" ? LatentSpec::Prior::uniform : LatentSpec::Prior::gaussian;
    c.arch_preset = fc.get_s("arch.preset", c.arch_preset);
    c.g_base = fc.get_i("arch.g_base", c.g_base);
    c.d_base = fc.get_i("arch.d_base", c.d_base);
    c.q_base = fc.get_i("arch.q_base", c.q_base);
    c.tap_index = fc.get_i("arch.tap_index", c.tap_index);
    c.epsilon = fc.get_f("privacy.epsilon", c.epsilon);
    c.delta = fc.get_f("privacy.delta", c.delta);
    c.clip_norm = fc.get_f("privacy.clip_norm", c.clip_norm);
    c.batch_size = fc.get_i("train.batch_size", c.batch_size);
    c.d_iters = fc.get_i("train.d_iters", c.d_iters);
    c.epochs = fc.get_i("train.epochs", c.epochs);
    c.learning_rate = fc.get_f("train.learning_rate", c.learning_rate);
    c.lambda_info = fc.get_f("train.lambda", c.lambda_info);
    c.adam_beta1 = fc.get_f("adam.beta1", c.adam_beta1);
    c.adam_beta2 = fc.get_f("adam.beta2", c.adam_beta2);
    c.adam_eps = fc.get_f("adam.eps", c.adam_eps);
    c.checkpoint_interval = fc.get_i("train.checkpoint_interval", c.checkpoint_interval);
    c.n_clients = fc.get_i("dist.n_clients", c.n_clients);
    c.rounds = fc.get_i("dist.rounds", c.rounds);
    c.steps_per_round = fc.get_i("dist.steps_per_round", c.steps_per_round);
    const std::string tr = fc.get_s("dist.transport", "inproc");
    if (tr != "inproc" && tr != "socket") throw ConfigError("dist.transport: must be inproc or socket");
    c.transport = tr == "inproc" ? TransportKind::inproc : TransportKind::socket;
    c.endpoint = fc.get_s("dist.endpoint", c.endpoint);
    c.per_client = fc.get_i("dist.per_client", c.per_client);
    c.checkpoint = fc.get_s("sweep.checkpoint", c.checkpoint);
    c.sweep_code = fc.get_i("sweep.code_index", c.sweep_code);
    c.sweep_lo = fc.get_f("sweep.lo", c.sweep_lo);
    c.sweep_hi = fc.get_f("sweep.hi", c.sweep_hi);
    c.grid_rows = fc.get_i("sweep.rows", c.grid_rows);
    c.grid_cols = fc.get_i("sweep.cols", c.grid_cols);
    return c;
}

void RunConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("privacy.epsilon: must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("privacy.delta: must be in (0,1)");
    if (!(clip_norm > 0.0)) throw ConfigError("privacy.clip_norm: must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size: must be >= 1");
    if (d_iters < 1) throw ConfigError("train.d_iters: must be >= 1");
    if (epochs < 0) throw ConfigError("train.epochs: must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate: must be > 0");
    if (lambda_info < 0.0) throw ConfigError("train.lambda: must be >= 0");
    if (latent.noise_dim < 1) throw ConfigError("latent.noise_dim: must be >= 1");
    for (int64_t k : latent.discrete_codes) {
        if (k < 2) throw ConfigError("latent.discrete: category counts must be >= 2");
    }
    if (latent.continuous_codes < 0) throw ConfigError("latent.continuous: must be >= 0");
    if (arch_preset != "mnist" && arch_preset != "tiny") {
        throw ConfigError("arch.preset: must be mnist or tiny");
    }
    if (data_source != "synth" && data_source != "idx") {
        throw ConfigError("data.source: must be synth or idx");
    }
    if (data_source == "idx" && idx_images.empty()) {
        throw ConfigError("data.idx_images: required when data.source=idx");
    }
    if (synth_count < 1) throw ConfigError("data.synth_count: must be >= 1");
    if (n_clients < 1) throw ConfigError("dist.n_clients: must be >= 1");
    if (rounds < 0) throw ConfigError("dist.rounds: must be >= 0");
    if (steps_per_round < 1) throw ConfigError("dist.steps_per_round: must be >= 1");
    if (grid_rows < 1 || grid_cols < 1) throw ConfigError("sweep.rows/cols: must be >= 1");
    make_arch();  // surfaces arch.* errors
}

Architecture RunConfig::make_arch() const {
    if (arch_preset == "tiny") return Architecture::tiny(latent);
    return Architecture::mnist(latent, g_base, d_base, q_base, tap_index);
}

TrainConfig RunConfig::make_train_config(int64_t dataset_size) const {
    TrainConfig tc;
    tc.privacy = PrivacyParams::create(epsilon, delta, clip_norm, batch_size, dataset_size, d_iters);
    tc.latent = latent;
    tc.arch = make_arch();
    tc.epochs = epochs;
    tc.learning_rate = learning_rate;
    tc.adam_beta1 = adam_beta1;
    tc.adam_beta2 = adam_beta2;
    tc.adam_eps = adam_eps;
    tc.lambda_info = lambda_info;
    tc.seed = seed;
    tc.checkpoint_interval = checkpoint_interval;
    return tc;
}

uint64_t RunConfig::effective_data_seed() const {
    return data_seed != 0 ? data_seed : derive_seed(seed, seed_tag::data, 0);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write file: " + path);
    f << text;
}

}  // namespace dpig
