#include "dpig/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>

namespace dpig {

std::string StepReport::metrics_line() const {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "step=%lld d=%.10g g=%.10g q=%.10g maxnorm=%.10g eps_spent=%.10g",
                  static_cast<long long>(step), d_loss, g_loss, q_loss, preclip_max, eps_spent);
    return buf;
}

Trainer::Trainer(const TrainConfig& cfg, ParamSet& g, ParamSet& d, DatasetShard shard,
                 uint32_t client_index)
    : cfg_(cfg),
      g_(g),
      d_(d),
      shard_(std::move(shard)),
      rng_(derive_seed(cfg.seed, seed_tag::trainer, client_index)) {
    if (shard_.size() < 1) throw ConfigError("data: shard is empty");
    if (cfg_.batch_size() < 1) throw ConfigError("privacy.batch_size: must be >= 1");
    if (steps_per_epoch() < 1) {
        throw ConfigError("privacy.batch_size: shard of " + std::to_string(shard_.size()) +
                          " yields no full batch of " + std::to_string(cfg_.batch_size()));
    }
    adam_g_.cfg = cfg_.adam();
    adam_g_.init(g_);
    adam_d_.cfg = cfg_.adam();
    adam_d_.init(d_);
    order_.resize(static_cast<size_t>(shard_.size()));
    std::iota(order_.begin(), order_.end(), 0);
}

int64_t Trainer::steps_per_epoch() const { return shard_.size() / cfg_.batch_size(); }

Tensor Trainer::next_batch() {
    const int64_t m = cfg_.batch_size();
    if (batch_cursor_ == 0) rng_.shuffle(order_);
    const Tensor& imgs = shard_.images;
    const int64_t stride = imgs.numel() / imgs.shape[0];
    Tensor batch = Tensor::zeros({m, imgs.shape[1], imgs.shape[2], imgs.shape[3]});
    for (int64_t i = 0; i < m; ++i) {
        const int64_t src = order_[static_cast<size_t>(batch_cursor_ * m + i)];
        std::copy(imgs.data.begin() + src * stride, imgs.data.begin() + (src + 1) * stride,
                  batch.data.begin() + i * stride);
    }
    batch_cursor_ = (batch_cursor_ + 1) % steps_per_epoch();
    return batch;
}

StepReport Trainer::train_step(QChannel& q) {
    Tensor real = next_batch();
    return step_on_batch(real, q);
}

StepReport Trainer::step_on_batch(const Tensor& real, QChannel& qch) {
    const int64_t m = cfg_.batch_size();
    const PrivacyParams& pp = cfg_.privacy;
    StepReport rep;
    rep.step = steps_done_ + 1;
    try {
        std::vector<CodeSample> codes;
        double d_loss_sum = 0.0;

        for (int64_t it = 0; it < cfg_.d_iters(); ++it) {
            codes = sample_codes(cfg_.latent, m, rng_);

            // fakes for this iteration; the generator is fixed during the
            // discriminator phase so no tape survives this block
            Tensor fakes;
            {
                Tape gt;
                ValueId input = gt.constant(codes_to_input(cfg_.latent, codes));
                ValueId out = generator_forward(gt, cfg_.arch, g_, input, true);
                fakes = gt.value(out);
            }

            std::vector<std::vector<double>> per_example;
            per_example.reserve(static_cast<size_t>(m));
            double preclip_sum = 0.0;
            d_loss_sum = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                Tensor xi = real.slice_row(i);
                Tensor fi = fakes.slice_row(i);
                Tape t;
                ValueId xr = t.leaf(xi);
                DiscNodes dr = discriminator_forward(t, cfg_.arch, d_, xr, true);
                ValueId xf = t.leaf(fi);
                DiscNodes df = discriminator_forward(t, cfg_.arch, d_, xf, true);
                ValueId loss = d_loss(t, dr.probs, df.probs);
                d_loss_sum += t.value(loss).data[0];
                d_.zero_grads();
                t.backward(loss);
                std::vector<double> flat = d_.flatten_trainable_grads();
                double sq = 0.0;
                for (double v : flat) sq += v * v;
                const double norm = std::sqrt(sq);
                preclip_sum += norm;
                rep.preclip_max = std::max(rep.preclip_max, norm);
                rep.postclip_max = std::max(rep.postclip_max, std::min(norm, pp.clip_norm));
                per_example.push_back(std::move(flat));
            }
            rep.preclip_mean = preclip_sum / static_cast<double>(m);

            const std::vector<double> noisy =
                privatize_gradients(per_example, pp.clip_norm, pp.sigma_n, rng_);
            if (pp.sigma_n > 0.0) ledger_.append(pp.sigma_n, 1);
            adam_step(d_, d_.unflatten_trainable(noisy), adam_d_);
        }
        rep.d_loss = d_loss_sum / static_cast<double>(m);

        // generator/Q phase on the codes of the last discriminator iteration
        Tape ct;
        ValueId input = ct.constant(codes_to_input(cfg_.latent, codes));
        ValueId fakes = generator_forward(ct, cfg_.arch, g_, input, true);
        DiscNodes dn = discriminator_forward(ct, cfg_.arch, d_, fakes, true);
        Tensor features = ct.value(dn.features);
        QOutput qout = qch.forward(features);

        if (cfg_.check_tape_hygiene) {
            for (const Tensor* leaf : qch.q_side_leaves()) {
                if (leaf == &real) throw Error("q-side tape reaches the real batch");
            }
        }

        // NLL of the targets under the returned estimates, on a local tape
        // with the QOutput tensors as leaves
        Tape mt;
        QNodes leafq;
        for (auto& lg : qout.logits) {
            lg.requires_grad = true;
            leafq.logits.push_back(mt.leaf(lg));
        }
        qout.mean.requires_grad = true;
        leafq.mean = mt.leaf(qout.mean);
        qout.variance.requires_grad = true;
        leafq.variance = mt.leaf(qout.variance);
        ValueId qn = q_nll(mt, cfg_.latent, codes, leafq);
        rep.q_loss = mt.value(qn).data[0];
        ValueId scaled = info_objective(mt, qn, cfg_.lambda_info);
        mt.backward(scaled);

        QOutput upstream;
        for (auto& lg : qout.logits) upstream.logits.push_back(Tensor(lg.shape, lg.grad));
        upstream.mean = Tensor(qout.mean.shape, qout.mean.grad);
        upstream.variance = Tensor(qout.variance.shape, qout.variance.grad);

        ValueId gadv = g_adv_loss(ct, dn.probs);
        rep.g_loss = ct.value(gadv).data[0] + cfg_.lambda_info * rep.q_loss;

        Tensor fgrads = qch.backward(upstream);
        if (fgrads.shape != features.shape) {
            throw ShapeError("feature gradient shape " + shape_str(fgrads.shape) +
                             " != features " + shape_str(features.shape));
        }

        g_.zero_grads();
        d_.zero_grads();
        ct.backward_from({gadv, dn.features}, {{1.0}, fgrads.data});

        if (cfg_.check_tape_hygiene) {
            std::unordered_set<const Tensor*> params;
            for (const auto& name : g_.names()) params.insert(&g_.at(name));
            for (const auto& name : d_.names()) params.insert(&d_.at(name));
            for (const Tensor* leaf : ct.external_leaves()) {
                if (!params.count(leaf)) throw Error("g-phase tape has a non-parameter leaf");
            }
            for (const Tensor* leaf : mt.external_leaves()) {
                if (leaf == &real) throw Error("q-loss tape reaches the real batch");
            }
        }

        std::map<std::string, std::vector<double>> ggrads;
        for (const auto& name : g_.names()) {
            const Tensor& t = g_.at(name);
            if (t.requires_grad) ggrads[name] = t.grad;
        }
        adam_step(g_, ggrads, adam_g_);

        rep.ledger_steps = ledger_.total_steps();
        rep.eps_spent = ledger_.entries().empty() ? 0.0 : ledger_.epsilon_at(pp.delta);
    } catch (const NonFiniteError& e) {
        rep.finite = false;
        steps_done_ += 1;
        throw TrainingAborted(rep, std::string("step ") + std::to_string(rep.step) +
                                       " aborted: " + e.what());
    }
    steps_done_ += 1;
    return rep;
}

std::vector<StepReport> Trainer::run_steps(int64_t k, QChannel& q) {
    std::vector<StepReport> reports;
    reports.reserve(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i) reports.push_back(train_step(q));
    return reports;
}

std::vector<StepReport> Trainer::train(QChannel& q,
                                       const std::function<void(int64_t)>& on_epoch_end) {
    std::vector<StepReport> reports;
    const int64_t per_epoch = steps_per_epoch();
    for (int64_t e = 0; e < cfg_.epochs; ++e) {
        for (int64_t b = 0; b < per_epoch; ++b) reports.push_back(train_step(q));
        if (on_epoch_end) on_epoch_end(e);
    }
    return reports;
}

}  // namespace dpig
