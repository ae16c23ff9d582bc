#pragma once

#include <memory>

#include "dpig/models.hpp"

namespace dpig {

// The trainer's view of the Q network: one forward per step returning the
// QOutput values, then one backward carrying d(G_loss)/d(QOutput) and
// returning d(G_loss)/d(features). Backing may be the in-process Q head or
// a remote service.
class QChannel {
public:
    virtual ~QChannel() = default;
    virtual QOutput forward(const Tensor& features) = 0;
    virtual Tensor backward(const QOutput& upstream_grads) = 0;
    // leaf tensors of the Q-side tape when locally visible; empty for
    // remote channels
    virtual std::vector<const Tensor*> q_side_leaves() const { return {}; }
};

// Owns the Q forward/backward tapes and the Q Adam state. One pending
// forward at a time; backward consumes it, applies the Adam update and
// hands back the feature gradient.
class QCore {
public:
    QCore(const Architecture& arch, const LatentSpec& spec, ParamSet& theta_q, AdamConfig adam);

    QOutput forward(const Tensor& features, bool training = true);
    Tensor backward(const QOutput& upstream_grads);

    bool has_pending() const { return pending_ != nullptr; }
    void drop_pending() { pending_.reset(); }
    int64_t update_count() const { return update_count_; }
    ParamSet& params() { return q_; }
    AdamState& adam() { return adam_; }
    std::vector<const Tensor*> pending_leaves() const;

private:
    struct Pending {
        Tape tape;
        Tensor features;
        QNodes qn;
    };

    const Architecture& arch_;
    const LatentSpec& spec_;
    ParamSet& q_;
    AdamState adam_;
    std::unique_ptr<Pending> pending_;
    int64_t update_count_ = 0;
};

class LocalQChannel : public QChannel {
public:
    explicit LocalQChannel(QCore& core) : core_(core) {}
    QOutput forward(const Tensor& features) override { return core_.forward(features); }
    Tensor backward(const QOutput& upstream_grads) override { return core_.backward(upstream_grads); }
    std::vector<const Tensor*> q_side_leaves() const override { return core_.pending_leaves(); }

private:
    QCore& core_;
};

}  // namespace dpig
