#include "dpig/qchannel.hpp"

namespace dpig {

QCore::QCore(const Architecture& arch, const LatentSpec& spec, ParamSet& theta_q, AdamConfig adam)
    : arch_(arch), spec_(spec), q_(theta_q) {
    adam_.cfg = adam;
    adam_.init(q_);
}

QOutput QCore::forward(const Tensor& features, bool training) {
    auto p = std::make_unique<Pending>();
    p->features = features;
    p->features.requires_grad = true;
    p->features.grad.clear();
    ValueId fid = p->tape.leaf(p->features);
    p->qn = q_forward(p->tape, arch_, spec_, q_, fid, training);
    QOutput out = qnodes_values(p->tape, p->qn);
    pending_ = std::move(p);
    return out;
}

Tensor QCore::backward(const QOutput& upstream_grads) {
    if (!pending_) throw ProtocolError(ProtoCode::no_pending_forward, "q backward without forward");
    Pending& p = *pending_;
    std::vector<ValueId> outs;
    std::vector<std::vector<double>> seeds;
    if (upstream_grads.logits.size() != p.qn.logits.size()) {
        throw ShapeError("q backward: wrong number of logit gradients");
    }
    for (size_t j = 0; j < p.qn.logits.size(); ++j) {
        outs.push_back(p.qn.logits[j]);
        seeds.push_back(upstream_grads.logits[j].data);
    }
    outs.push_back(p.qn.mean);
    seeds.push_back(upstream_grads.mean.data);
    outs.push_back(p.qn.variance);
    seeds.push_back(upstream_grads.variance.data);

    q_.zero_grads();
    p.tape.backward_from(outs, seeds);

    std::map<std::string, std::vector<double>> grads;
    for (const auto& name : q_.names()) {
        const Tensor& t = q_.at(name);
        if (t.requires_grad) grads[name] = t.grad;
    }
    adam_step(q_, grads, adam_);
    update_count_ += 1;

    Tensor fg(p.features.shape, p.features.grad.empty()
                                    ? std::vector<double>(p.features.data.size(), 0.0)
                                    : p.features.grad);
    pending_.reset();
    return fg;
}

std::vector<const Tensor*> QCore::pending_leaves() const {
    if (!pending_) return {};
    return pending_->tape.external_leaves();
}

}  // namespace dpig
